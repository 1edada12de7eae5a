"""Lower-level sensitivities and total upper-level gradients.

Differentiating the lower stationarity condition and the active
complementarity rows in x gives the square system

    [ H_L          J_A^T ] [ dy/dx   ]   [ -d2L/dydx       ]
    [ diag(l_A) J_A  0   ] [ dl_A/dx ] = [ -diag(l_A) Jx_A ]

where ``H_L`` is the y-Hessian of the lower Lagrangian, ``J_A`` and ``Jx_A``
are the y- and x-Jacobians of the active constraints.  Inactive constraints
are dropped (their multipliers are locally zero).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .autodiff import evaluate
from .errors import DegenerateError, SingularSystemError
from .lower import CONVERGED, DEGENERATE

__all__ = [
    "SensitivityResult",
    "TotalGradients",
    "LowerDerivatives",
    "lower_derivatives",
    "assemble_system",
    "solve_system",
    "sensitivities",
    "total_gradients",
]

_PIVOT_RTOL = 1e-12


@dataclass
class LowerDerivatives:
    """Blocks of the lower Lagrangian at (x, y, lambda) for a chosen active set."""

    active: tuple
    H: np.ndarray        # (m, m)  d2L/dy2
    Hyx: np.ndarray      # (m, n)  d2L/dydx
    Jy: np.ndarray       # (s, m)  all lower constraints
    Jx: np.ndarray       # (s, n)
    c: np.ndarray        # (s,)


@dataclass
class SensitivityResult:
    dy_dx: np.ndarray
    dlambda_dx: np.ndarray
    system_residual: float
    condition_estimate: float
    active: tuple = ()
    lu: tuple = field(default=None, repr=False)
    M: np.ndarray = field(default=None, repr=False)

    def full_dlambda_dx(self, s):
        """dlambda/dx over all ``s`` lower constraints, zero rows for inactive ones."""
        out = np.zeros((s, self.dy_dx.shape[1]))
        if self.active:
            out[list(self.active)] = self.dlambda_dx
        return out


@dataclass
class TotalGradients:
    grad_F: np.ndarray
    jac_G: np.ndarray


def _active_indices(sol, one_sided):
    if sol.status == DEGENERATE and not one_sided:
        raise DegenerateError(
            f"lower constraints {list(sol.biactive)} are biactive; strict complementarity fails")
    if sol.status not in (CONVERGED, DEGENERATE):
        raise DegenerateError(f"lower solution is not converged (status {sol.status})")
    return tuple(sol.active_set)


def lower_derivatives(p, x, sol, one_sided=False) -> LowerDerivatives:
    x = np.asarray(x, dtype=float).ravel()
    active = _active_indices(sol, one_sided)
    n, m = p.n, p.m
    _, _, Hf = evaluate(p.f, x, sol.y, "xy")
    HL = Hf.copy()
    cons = p.lower_constraints
    s = len(cons)
    c = np.empty(s)
    J = np.empty((s, n + m))
    for i, fn in enumerate(cons):
        c[i], J[i], Hi = evaluate(fn, x, sol.y, "xy")
        if sol.lam[i] != 0.0:
            HL += sol.lam[i] * Hi
    return LowerDerivatives(active=active, H=HL[n:, n:], Hyx=HL[n:, :n],
                            Jy=J[:, n:], Jx=J[:, :n], c=c)


def assemble_system(p, x, sol, one_sided=False):
    """Build the sensitivity matrix ``M`` and right-hand side ``b``.

    ``one_sided=True`` accepts a degenerate (biactive) lower solution and
    treats the biactive rows as inactive, giving the one-sided derivative of
    the current piece.

    Returns
    -------
    M : ndarray, shape (m + |A|, m + |A|)
    b : ndarray, shape (m + |A|, n)
    """
    d = lower_derivatives(p, x, sol, one_sided)
    return _system_from(d, sol.lam, p.m, p.n)


def _system_from(d, lam, m, n):
    A = list(d.active)
    k = len(A)
    lam_a = lam[A]
    JA = d.Jy[A]
    M = np.zeros((m + k, m + k))
    M[:m, :m] = d.H
    M[:m, m:] = JA.T
    M[m:, :m] = lam_a[:, None] * JA
    b = np.zeros((m + k, n))
    b[:m] = -d.Hyx
    b[m:] = -lam_a[:, None] * d.Jx[A]
    return M, b


def solve_system(M, b, m=None, active=()) -> SensitivityResult:
    """Solve ``M X = b`` by pivoted LU; reject numerically singular ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    size = M.shape[0]
    if M.shape != (size, size) or b.shape[0] != size:
        raise ValueError(f"inconsistent shapes M{M.shape}, b{b.shape}")
    if m is None:
        m = size - len(active)
    scale = np.max(np.abs(M)) if M.size else 0.0
    with warnings.catch_warnings():
        # singularity is detected from the pivots below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if scale == 0.0 or np.min(pivots) <= _PIVOT_RTOL * scale:
        raise SingularSystemError(
            "sensitivity matrix is singular: LICQ or the second-order sufficient "
            "condition fails at the lower-level solution")
    X = scipy.linalg.lu_solve((lu, piv), b)
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(size))
    cond = float(np.linalg.norm(M, 1) * np.linalg.norm(inv, 1))
    residual = float(np.max(np.abs(M @ X - b))) if X.size else 0.0
    return SensitivityResult(dy_dx=X[:m], dlambda_dx=X[m:], system_residual=residual,
                             condition_estimate=cond, active=tuple(active), lu=(lu, piv), M=M)


def sensitivities(p, x, sol, one_sided=False) -> SensitivityResult:
    """assemble_system followed by solve_system."""
    d = lower_derivatives(p, x, sol, one_sided)
    M, b = _system_from(d, sol.lam, p.m, p.n)
    return solve_system(M, b, p.m, d.active)


def total_gradients(p, x, sol, sens: SensitivityResult) -> TotalGradients:
    """Chain rule: grad = d/dx + (dy/dx)^T d/dy for F and every row of G."""
    x = np.asarray(x, dtype=float).ravel()
    n = p.n
    _, gF, _ = evaluate(p.F, x, sol.y, "xy")
    grad_F = gF[:n] + sens.dy_dx.T @ gF[n:]
    jac_G = np.zeros((p.r, n))
    for i, fn in enumerate(p.G):
        _, gG, _ = evaluate(fn, x, sol.y, "xy")
        jac_G[i] = gG[:n] + sens.dy_dx.T @ gG[n:]
    return TotalGradients(grad_F=grad_F, jac_G=jac_G)
