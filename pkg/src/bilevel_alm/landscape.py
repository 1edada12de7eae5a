"""One-dimensional scan of the implicit upper-level objective.

Each sample solves the lower level at x (warm-started from the previous
sample), records y(x), F(x, y(x)), the strictly active lower constraints and
the one-sided derivative dy/dx.  Changes of the active-set signature between
neighbouring feasible samples bracket the kinks of the implicit objective.
"""

from dataclasses import dataclass

import numpy as np

from .alm import _robust_sensitivities
from .autodiff import value
from .errors import InputError, SingularSystemError
from .lower import LowerSolverConfig, solve_lower

__all__ = ["ScanRow", "scan", "signature", "signature_changes", "INFEASIBLE_SIGNATURE"]

INFEASIBLE_SIGNATURE = "infeasible"


@dataclass(frozen=True)
class ScanRow:
    x: float
    y: tuple
    F: float
    signature: str
    dy_dx: tuple

    @property
    def feasible(self):
        return self.signature != INFEASIBLE_SIGNATURE


def signature(active) -> str:
    """0-based indices of the strictly active lower constraints, ``|``-joined."""
    return "|".join(str(int(i)) for i in sorted(active)) if len(active) else "none"


def scan(p, lo=None, hi=None, points: int = 401, lower_cfg: LowerSolverConfig = None):
    """Sample ``points`` equally spaced x values on ``[lo, hi]`` (default: the x-box).

    Points where the lower level has no solution get signature
    ``"infeasible"`` and NaN values.
    """
    if p.n != 1:
        raise InputError(f"scan is one-dimensional; {p.name or 'problem'} has n={p.n}")
    if points < 2:
        raise InputError("scan needs at least 2 points")
    lo = p.x_bounds[0, 0] if lo is None else float(lo)
    hi = p.x_bounds[0, 1] if hi is None else float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise InputError("x is unbounded; give an explicit range")
    if not lo < hi:
        raise InputError(f"empty scan range [{lo}, {hi}]")
    nan_y = (float("nan"),) * p.m
    rows = []
    warm = None
    for xv in np.linspace(lo, hi, points):
        x = np.array([xv])
        sol = solve_lower(p, x, warm=warm, cfg=lower_cfg)
        if not sol.ok and warm is not None:
            sol = solve_lower(p, x, cfg=lower_cfg)
        if not sol.ok:
            rows.append(ScanRow(float(xv), nan_y, float("nan"), INFEASIBLE_SIGNATURE, nan_y))
            continue
        warm = sol
        try:
            sens, _, _ = _robust_sensitivities(p, x, sol)
            dy = tuple(float(v) + 0.0 for v in sens.dy_dx[:, 0])
        except SingularSystemError:
            dy = nan_y
        rows.append(ScanRow(float(xv), tuple(float(v) for v in sol.y), value(p.F, x, sol.y),
                            signature(sol.active_set), dy))
    return rows


def signature_changes(rows):
    """``(x_before, x_after, sig_before, sig_after)`` for each change between feasible rows."""
    feasible = [r for r in rows if r.feasible]
    return [(a.x, b.x, a.signature, b.signature)
            for a, b in zip(feasible, feasible[1:]) if a.signature != b.signature]
