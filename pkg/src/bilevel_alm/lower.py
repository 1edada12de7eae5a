"""Parametric lower-level solver.

For fixed x the lower problem ``min_y f(x, y) s.t. c(x, y) <= 0`` (``c`` is
``g`` plus the y-box rows) is solved with a primal-dual interior point method
on the slack form ``c + w = 0, w > 0``.  The barrier parameter follows a
monotone Fiacco-McCormick schedule.  Once the barrier problem is solved to
tolerance, an active-set Newton polish on the equality system of the
identified active constraints recovers multipliers to machine precision and
sets inactive multipliers to exactly zero.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .autodiff import DifferentiableFunction, evaluate
from .errors import EvaluationError, InputError

__all__ = [
    "LowerSolverConfig",
    "LowerSolution",
    "ActiveSet",
    "solve_lower",
    "detect_active_set",
    "lower_kkt_residual",
    "CONVERGED",
    "MAX_ITER",
    "INFEASIBLE",
    "DEGENERATE",
]

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
DEGENERATE = "degenerate"

_KAPPA = 10.0          # barrier subproblem accuracy factor
_LAMBDA_BLOWUP = 1e10  # multiplier size that signals an empty feasible set
_PHASE_ONE_AFTER = 25  # iterations before an infeasible-looking run is checked


@dataclass(frozen=True)
class LowerSolverConfig:
    kkt_tol: float = 1e-9
    max_iter: int = 200
    active_tol: float = 1e-7
    multiplier_tol: float = 1e-7
    initial_barrier: float = 0.1

    def __post_init__(self):
        for name in ("kkt_tol", "active_tol", "multiplier_tol", "initial_barrier"):
            if not getattr(self, name) > 0.0:
                raise InputError(f"{name} must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")


@dataclass
class LowerSolution:
    """Lower-level optimum for one x.

    ``lam``, ``constraint_values`` and all index sets refer to
    ``problem.lower_constraints`` (``g`` followed by y-box rows).
    """

    y: np.ndarray
    lam: np.ndarray
    active_set: tuple
    biactive: tuple
    kkt_residual: float
    status: str
    iterations: int = 0
    constraint_values: np.ndarray = field(default=None, repr=False)
    x: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self):
        return self.status in (CONVERGED, DEGENERATE)


class ActiveSet(NamedTuple):
    active: tuple
    biactive: tuple

    @property
    def degenerate(self):
        return bool(self.biactive)


def _constraint_data(cons, x, y):
    s, m = len(cons), y.shape[0]
    c = np.empty(s)
    J = np.empty((s, m))
    Hc = np.empty((s, m, m))
    for i, fn in enumerate(cons):
        c[i], J[i], Hc[i] = evaluate(fn, x, y, "y")
    return c, J, Hc


def _model(f, cons, x, y):
    _, gf, Hf = evaluate(f, x, y, "y")
    c, J, Hc = _constraint_data(cons, x, y)
    return gf, Hf, c, J, Hc


def _inf_norm(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def lower_kkt_residual(gf, J, c, lam):
    """max of stationarity, primal feasibility and complementarity violations."""
    stat = _inf_norm(gf + J.T @ lam)
    feas = _inf_norm(np.maximum(c, 0.0))
    comp = _inf_norm(lam * c)
    return max(stat, feas, comp)


def _step_to_boundary(v, dv, tau):
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def _solve_kkt(K, rhs):
    sol, ok = _kernels.dense_solve(K, rhs)
    if ok:
        return sol, True
    m = K.shape[0]
    for delta in (1e-10, 1e-8, 1e-6):
        sol, ok = _kernels.dense_solve(K + delta * np.eye(m), rhs)
        if ok:
            return sol, True
    return sol, False


def _interior_point(f, cons, x, y, lam0, cfg, warm, final=True):
    m, s = y.shape[0], len(cons)
    tol = cfg.kkt_tol
    mu_min = tol / 10.0
    mu = min(cfg.initial_barrier, 1e-3) if warm else cfg.initial_barrier
    gf, Hf, c, J, Hc = _model(f, cons, x, y)
    w = np.maximum(-c, np.sqrt(mu))
    lam = mu / w
    if lam0 is not None and lam0.shape[0] == s:
        lam = np.maximum(lam0, lam)

    def residuals(gf, c, J, w, lam, mu):
        return gf + J.T @ lam, c + w, w * lam - mu

    it = 0
    status = MAX_ITER
    stalled = 0
    for it in range(1, cfg.max_iter + 1):
        rd, rp, rc = residuals(gf, c, J, w, lam, mu)
        err0 = max(_inf_norm(rd), _inf_norm(rp), _inf_norm(w * lam))
        if err0 <= tol:
            status = CONVERGED
            break
        if s and _inf_norm(lam) > _LAMBDA_BLOWUP:
            status = INFEASIBLE
            break
        err_mu = max(_inf_norm(rd), _inf_norm(rp), _inf_norm(rc))
        while s and mu > mu_min and err_mu <= _KAPPA * mu:
            mu = max(mu_min, min(0.2 * mu, mu ** 1.5))
            rc = w * lam - mu
            err_mu = max(_inf_norm(rd), _inf_norm(rp), _inf_norm(rc))

        H = Hf + np.tensordot(lam, Hc, axes=1) if s else Hf
        K = np.zeros((m + s, m + s))
        K[:m, :m] = H
        K[:m, m:] = J.T
        K[m:, :m] = J
        K[m:, m:] = -np.diag(w / lam)
        rhs = np.concatenate([-rd, -rp + rc / lam])
        sol, ok = _solve_kkt(K, rhs)
        if not ok:
            break
        dy, dlam = sol[:m], sol[m:]
        dw = (-rc - w * dlam) / lam
        tau = max(0.99, 1.0 - mu)
        a_p = _step_to_boundary(w, dw, tau)
        a_d = _step_to_boundary(lam, dlam, tau)

        merit0 = float(np.sum(rd ** 2) + np.sum(rp ** 2) + np.sum(rc ** 2))
        scale = 1.0
        accepted = None
        decreased = False
        for _ in range(12):
            yt = y + scale * a_p * dy
            wt = w + scale * a_p * dw
            lt = lam + scale * a_d * dlam
            try:
                gft, Hft, ct, Jt, Hct = _model(f, cons, x, yt)
            except EvaluationError:
                scale *= 0.5
                continue
            rdt, rpt, rct = residuals(gft, ct, Jt, wt, lt, mu)
            merit = float(np.sum(rdt ** 2) + np.sum(rpt ** 2) + np.sum(rct ** 2))
            accepted = (yt, wt, lt, gft, Hft, ct, Jt, Hct)
            if merit <= (1.0 - 1e-4 * scale * min(a_p, a_d)) * merit0:
                decreased = True
                break
            scale *= 0.5
        if accepted is None:
            break
        y, w, lam, gf, Hf, c, J, Hc = accepted
        # repeated failure to reduce the merit is how an empty feasible set shows up
        stalled = 0 if decreased else stalled + 1
        if stalled >= 3:
            break

    if final and status != CONVERGED and s and _inf_norm(np.maximum(c, 0.0)) > cfg.active_tol:
        if it >= cfg.max_iter or stalled:
            status = INFEASIBLE
    return y, lam, c, status, it


def _phase_one(cons, x, y, cfg):
    """Smallest achievable max-violation ``t`` of the lower constraints at this x.

    Solves ``min t s.t. c_i(x, y) <= t, t >= -1`` with the same interior point
    method.  For convex constraints ``t > 0`` certifies an empty feasible set.
    """
    m = y.shape[0]
    n = cons[0].n
    y_ref = y.copy()

    def objective(x_, z):
        acc = z[m]
        for i in range(m):
            acc = acc + 1e-8 * (z[i] - y_ref[i]) * (z[i] - y_ref[i])
        return acc

    def shifted(fn):
        return DifferentiableFunction(lambda x_, z: fn(x_, z[:m]) - z[m], n, m + 1, fn.name)

    cons1 = [shifted(fn) for fn in cons]
    cons1.append(DifferentiableFunction(lambda x_, z: -1.0 - z[m], n, m + 1, "t>=-1"))
    f1 = DifferentiableFunction(objective, n, m + 1, "phase one")
    c0 = np.array([evaluate(fn, x, y, "y")[0] for fn in cons])
    z0 = np.append(y, max(float(np.max(c0)), 0.0) + 1.0)
    z, _, _, status, iters = _interior_point(f1, cons1, x, z0, None, cfg, False)
    return float(z[m]), z[:m].copy(), status, iters


def _solve_with_phase_one(f, cons, x, y0, lam0, cfg, warm):
    first = min(cfg.max_iter, _PHASE_ONE_AFTER)
    y, lam, c, status, iters = _interior_point(f, cons, x, y0, lam0, replace(cfg, max_iter=first), warm,
                                               final=first == cfg.max_iter)
    if status == CONVERGED or first == cfg.max_iter:
        return y, lam, c, status, iters
    warm_rest = True
    if status != INFEASIBLE and _inf_norm(np.maximum(c, 0.0)) > cfg.active_tol:
        t, y1, st1, it1 = _phase_one(cons, x, y, cfg)
        iters += it1
        if st1 == CONVERGED and t > cfg.active_tol:
            return y, lam, c, INFEASIBLE, iters
        if st1 == CONVERGED and t < 0.0:
            # the stuck iterate is abandoned for the strictly feasible phase-one point
            y, lam, warm_rest = y1, None, False
    if status == INFEASIBLE:
        return y, lam, c, status, iters
    rest = replace(cfg, max_iter=cfg.max_iter - first)
    y, lam, c, status, more = _interior_point(f, cons, x, y, lam, rest, warm_rest)
    return y, lam, c, status, iters + more


def _independent_rows(f, cons, x, y, active, lam):
    """Greedy subset of ``active`` with linearly independent y-gradients.

    Larger multipliers are kept first.  When LICQ fails the multipliers are
    not unique and the dropped rows end up with a zero multiplier (biactive).
    """
    if len(active) <= 1:
        return active
    _, _, _, J, _ = _model(f, cons, x, y)
    keep = []
    for i in sorted(active, key=lambda a: -lam[a]):
        rows = J[keep + [i]]
        if np.linalg.matrix_rank(rows, tol=1e-10 * max(1.0, np.max(np.abs(rows)))) == len(keep) + 1:
            keep.append(i)
    return sorted(keep)


def _polish(f, cons, x, y, lam, c, cfg):
    """Newton on the equality system of the identified active set."""
    s, m = len(cons), y.shape[0]
    active = [i for i in range(s) if lam[i] > -c[i] and lam[i] > 0.0]
    active = _independent_rows(f, cons, x, y, active, lam)
    for _ in range(2 * s + 1):
        yp = y.copy()
        lam_a = lam[active].copy()
        ok = True
        for _ in range(10):
            gf, Hf, cp, J, Hc = _model(f, cons, x, yp)
            JA = J[active]
            H = Hf + (np.tensordot(lam_a, Hc[active], axes=1) if active else 0.0)
            k = len(active)
            K = np.zeros((m + k, m + k))
            K[:m, :m] = H
            K[:m, m:] = JA.T
            K[m:, :m] = JA
            rhs = np.concatenate([-(gf + JA.T @ lam_a), -cp[active]])
            sol, solved = _kernels.dense_solve(K, rhs)
            if not solved or np.linalg.cond(K) > 1e14:
                ok = False
                break
            yp = yp + sol[:m]
            lam_a = lam_a + sol[m:]
            if _inf_norm(sol) <= 1e-15 * (1.0 + _inf_norm(yp) + _inf_norm(lam_a)):
                break
        if not ok:
            return None
        negative = [a for a, v in zip(active, lam_a) if v < -cfg.multiplier_tol]
        if negative:
            worst = min(negative, key=lambda a: lam_a[active.index(a)])
            active = [a for a in active if a != worst]
            continue
        lam_full = np.zeros(s)
        lam_full[active] = np.maximum(lam_a, 0.0)
        gf, _, cp, J, _ = _model(f, cons, x, yp)
        if s and np.max(cp) > cfg.active_tol:
            # the guessed active set missed a constraint: add the most violated one
            worst = int(np.argmax(cp))
            if worst in active:
                return None
            active = _independent_rows(f, cons, x, yp, sorted(active + [worst]),
                                       np.where(np.arange(s) == worst, np.inf, lam_full))
            if worst not in active:
                return None
            continue
        return yp, lam_full, cp, lower_kkt_residual(gf, J, cp, lam_full)
    return None


def _classify(c, lam, cfg):
    near = np.abs(c) <= cfg.active_tol
    strong = lam > cfg.multiplier_tol
    active = tuple(int(i) for i in np.flatnonzero(near & strong))
    biactive = tuple(int(i) for i in np.flatnonzero(near & ~strong))
    return ActiveSet(active, biactive)


def _initial_y(p, warm):
    if warm is not None and warm.y is not None and warm.y.shape[0] == p.m:
        return np.array(warm.y, dtype=float)
    lo, hi = p.y_bounds[:, 0], p.y_bounds[:, 1]
    y = np.zeros(p.m)
    both = np.isfinite(lo) & np.isfinite(hi)
    y[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    y[only_lo] = lo[only_lo] + 1.0
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    y[only_hi] = hi[only_hi] - 1.0
    return y


def solve_lower(p, x, warm: Optional[LowerSolution] = None,
                cfg: LowerSolverConfig = None) -> LowerSolution:
    """Solve the lower-level problem at ``x``.

    Parameters
    ----------
    p : BilevelProblem
    x : array_like, shape (n,)
    warm : LowerSolution, optional
        Previous solution used to seed ``y`` and the multipliers.
    cfg : LowerSolverConfig, optional

    Returns
    -------
    LowerSolution
        ``status`` is ``converged`` when the KKT residual is below
        ``cfg.kkt_tol``, ``degenerate`` when it converged to a point with a
        biactive constraint, otherwise ``infeasible`` or ``max_iter`` with the
        last iterate attached.
    """
    cfg = cfg or LowerSolverConfig()
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p.n:
        raise InputError(f"x has length {x.shape[0]}, problem expects {p.n}")
    if not np.all(np.isfinite(x)):
        raise InputError("x must be finite")
    cons = p.lower_constraints
    y0 = _initial_y(p, warm)
    lam0 = warm.lam if warm is not None else None
    y, lam, c, status, iters = _solve_with_phase_one(p.f, cons, x, y0, lam0, cfg, warm is not None)

    if status == CONVERGED or status == MAX_ITER:
        polished = _polish(p.f, cons, x, y, lam, c, cfg) if cons else None
        if polished is not None:
            yp, lp, cp, res = polished
            gf, _, c_ipm, J, _ = _model(p.f, cons, x, y)
            if res <= max(cfg.kkt_tol, lower_kkt_residual(gf, J, c_ipm, lam)):
                y, lam, c = yp, lp, cp
                status = CONVERGED if res <= cfg.kkt_tol else status

    gf, _, c, J, _ = _model(p.f, cons, x, y)
    res = lower_kkt_residual(gf, J, c, lam)
    if status == MAX_ITER and res <= cfg.kkt_tol:
        status = CONVERGED
    if status == CONVERGED and res > cfg.kkt_tol:
        status = MAX_ITER
    sets = _classify(c, lam, cfg)
    if status == CONVERGED and sets.degenerate:
        status = DEGENERATE
    return LowerSolution(y=y, lam=lam, active_set=sets.active, biactive=sets.biactive,
                         kkt_residual=res, status=status, iterations=iters,
                         constraint_values=c, x=x.copy())


def detect_active_set(sol: LowerSolution, p, x, cfg: LowerSolverConfig = None) -> ActiveSet:
    """Classify lower constraints into strictly active and biactive indices."""
    cfg = cfg or LowerSolverConfig()
    x = np.asarray(x, dtype=float).ravel()
    cons = p.lower_constraints
    c = np.array([evaluate(fn, x, sol.y, "y")[0] for fn in cons]) if cons else np.zeros(0)
    return _classify(c, sol.lam, cfg)
