"""Augmented Lagrangian outer loop on the implicit upper-level problem.

The implicit problem is ``min_x F(x, y(x)) s.t. G(x, y(x)) <= 0, x in X``
where ``y(x)`` is the lower-level optimum.  Upper-level constraints ``G`` are
handled by the PHR augmented Lagrangian; the x-box is kept native and handled
by the projected inner solver.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import inner as inner_mod
from .autodiff import value
from .errors import (DegenerateError, EvaluationError, InputError, LowerSolveError,
                     SingularSystemError, SolverFailure)
from .lower import MAX_ITER as LOWER_MAX_ITER, LowerSolution, LowerSolverConfig, solve_lower
from .sensitivity import sensitivities, total_gradients

__all__ = [
    "AlmConfig",
    "KktResiduals",
    "AlmState",
    "TraceRecord",
    "SolveReport",
    "MultistartResult",
    "ImplicitPoint",
    "ImplicitModel",
    "phr_value",
    "phr_gradient",
    "augmented_lagrangian",
    "augmented_lagrangian_gradient",
    "inner_solve",
    "dual_update",
    "penalty_update",
    "residuals_from_values",
    "kkt_residuals",
    "run",
    "multistart",
    "KKT",
    "STALLED",
    "MAX_OUTER",
    "FAILED",
]

KKT = "kkt"
STALLED = "stalled"
MAX_OUTER = "max_outer"
FAILED = "failed"

# failures of the implicit map at a trial point; the inner solver treats them as rejected steps
_SOFT_FAILURES = (LowerSolveError, SingularSystemError, DegenerateError, EvaluationError)


@dataclass(frozen=True)
class AlmConfig:
    kkt_tol: float = 1e-5
    stall_tol: float = 1e-5
    inner_tol: float = 1e-6
    rho0: float = 10.0
    gamma: float = 10.0
    feas_factor: float = 0.5
    mu0: Optional[tuple] = None
    max_outer: int = 100
    inner_max_iter: int = 500
    memory: int = 10
    feasibility_tol: float = 1e-4
    lower: LowerSolverConfig = field(default_factory=LowerSolverConfig)

    def __post_init__(self):
        for name in ("kkt_tol", "stall_tol", "inner_tol", "rho0", "feasibility_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise InputError(f"{name} must be positive, got {v}")
        if not self.gamma > 1.0:
            raise InputError(f"gamma must be > 1, got {self.gamma}")
        if not 0.0 < self.feas_factor < 1.0:
            raise InputError(f"feas_factor must lie in (0, 1), got {self.feas_factor}")
        if self.max_outer < 1:
            raise InputError("max_outer must be >= 1")
        if self.mu0 is not None:
            mu0 = tuple(float(v) for v in np.ravel(self.mu0))
            if any(v < 0.0 or not np.isfinite(v) for v in mu0):
                raise InputError("mu0 must be finite and nonnegative")
            object.__setattr__(self, "mu0", mu0)

    def replace(self, **changes):
        return replace(self, **changes)

    def inner_config(self):
        return inner_mod.InnerConfig(memory=self.memory, grad_tol=self.inner_tol,
                                     max_iter=self.inner_max_iter)


@dataclass(frozen=True)
class KktResiduals:
    stat: float
    feas: float
    comp: float

    @property
    def overall(self):
        return max(self.stat, self.feas, self.comp)


@dataclass
class AlmState:
    x: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    rho: float
    residuals: KktResiduals
    outer_iter: int = 0
    feas_history: list = field(default_factory=list)
    termination: str = "running"
    message: str = ""


@dataclass
class TraceRecord:
    """One outer iteration.  ``rho`` is the penalty used by its subproblem."""

    iteration: int
    x: np.ndarray
    y: np.ndarray
    F: float
    mu: np.ndarray
    rho: float
    rho_next: float
    residuals: KktResiduals
    inner_iterations: int
    inner_status: str
    feas_test_fired: bool = False
    penalty_retry: bool = False
    reduced_sensitivity: bool = False
    inner_history: list = field(default_factory=list, repr=False)


@dataclass
class SolveReport:
    problem: str
    x0: np.ndarray
    state: AlmState
    F_value: float
    trace: list
    wall_time: float
    certificate: object = None

    @property
    def termination(self):
        return self.state.termination

    @property
    def success(self):
        return self.state.termination in (KKT, STALLED)


@dataclass
class MultistartResult:
    best: SolveReport
    reports: list
    best_index: int


# ---------------------------------------------------------------------------
# implicit map x -> (y(x), F, G, total gradients)
# ---------------------------------------------------------------------------


@dataclass
class ImplicitPoint:
    x: np.ndarray
    sol: object
    F: float
    G: np.ndarray
    grad_F: np.ndarray
    jac_G: np.ndarray
    reduced: bool = False

    @property
    def y(self):
        return self.sol.y


class ImplicitModel:
    """Lower solves, sensitivities and total gradients with warm starts and a small cache.

    At points where the sensitivity matrix is singular (LICQ fails on the
    strictly active set) the active constraints with the smallest multipliers
    are dropped until it is not; such points are flagged ``reduced``.
    """

    def __init__(self, p, lower_cfg: LowerSolverConfig = None, cache_size: int = 256):
        self.p = p
        self.lower_cfg = lower_cfg or LowerSolverConfig()
        self.cache_size = cache_size
        self._cache = {}
        self._last = None
        self.lower_solves = 0

    def lower(self, x):
        x = np.asarray(x, dtype=float).ravel()
        sol = None
        if self._last is not None:
            sol = solve_lower(self.p, x, warm=self._last, cfg=self.lower_cfg)
            self.lower_solves += 1
        if sol is None or sol.status == LOWER_MAX_ITER:
            # an infeasibility verdict is a certificate, a stalled warm start is not
            sol = solve_lower(self.p, x, cfg=self.lower_cfg)
            self.lower_solves += 1
        if not sol.ok:
            raise LowerSolveError(
                f"lower level not solved at x={x.tolist()} (status {sol.status}, "
                f"residual {sol.kkt_residual:.3g})", x=x, status=sol.status)
        self._last = sol
        return sol

    def point(self, x) -> ImplicitPoint:
        x = np.asarray(x, dtype=float).ravel()
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = self.p
        sol = self.lower(x)
        sens, used, reduced = _robust_sensitivities(p, x, sol)
        tg = total_gradients(p, x, used, sens)
        F = value(p.F, x, sol.y)
        G = np.array([value(fn, x, sol.y) for fn in p.G])
        pt = ImplicitPoint(x=x.copy(), sol=sol, F=F, G=G, grad_F=tg.grad_F, jac_G=tg.jac_G,
                           reduced=reduced)
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = pt
        return pt


def _robust_sensitivities(p, x, sol):
    try:
        return sensitivities(p, x, sol, one_sided=True), sol, False
    except SingularSystemError:
        pass
    active = sorted(sol.active_set, key=lambda i: sol.lam[i])
    while active:
        active = active[1:]
        trial = replace(sol, active_set=tuple(sorted(active)))
        try:
            return sensitivities(p, x, trial, one_sided=True), trial, True
        except SingularSystemError:
            continue
    raise SingularSystemError(
        f"sensitivity matrix is singular at x={x.tolist()} for every active subset")


# ---------------------------------------------------------------------------
# PHR pieces
# ---------------------------------------------------------------------------


def phr_value(F, G, mu, rho):
    G = np.asarray(G, dtype=float)
    if G.size == 0:
        return float(F)
    mu = np.asarray(mu, dtype=float)
    shifted = np.maximum(0.0, mu + rho * G)
    return float(F + np.sum(shifted ** 2 - mu ** 2) / (2.0 * rho))


def phr_gradient(grad_F, jac_G, G, mu, rho):
    G = np.asarray(G, dtype=float)
    if G.size == 0:
        return np.array(grad_F, dtype=float)
    shifted = np.maximum(0.0, np.asarray(mu, dtype=float) + rho * G)
    return grad_F + np.asarray(jac_G).T @ shifted


def _model_for(p, model):
    return model if model is not None else ImplicitModel(p)


def augmented_lagrangian(p, x, mu, rho, model: ImplicitModel = None) -> float:
    """PHR value at ``x`` using the lower-level response ``y(x)``."""
    pt = _model_for(p, model).point(x)
    return phr_value(pt.F, pt.G, mu, rho)


def augmented_lagrangian_gradient(p, x, mu, rho, model: ImplicitModel = None) -> np.ndarray:
    pt = _model_for(p, model).point(x)
    return phr_gradient(pt.grad_F, pt.jac_G, pt.G, mu, rho)


def dual_update(mu, rho, G_values):
    return np.maximum(0.0, np.asarray(mu, dtype=float) + rho * np.asarray(G_values, dtype=float))


def penalty_update(rho, feas_now, feas_prev, cfg: AlmConfig = None):
    """Multiply ``rho`` by gamma when feasibility did not improve by the factor c."""
    cfg = cfg or AlmConfig()
    if feas_prev is None:
        return rho
    return cfg.gamma * rho if feas_now > cfg.feas_factor * feas_prev else rho


def residuals_from_values(x, grad_L, G, mu, x_bounds=None) -> KktResiduals:
    """Stationarity is the projected gradient, so the x-box needs no multipliers."""
    x = np.asarray(x, dtype=float)
    grad_L = np.asarray(grad_L, dtype=float)
    if x_bounds is None:
        pg = grad_L
    else:
        b = np.asarray(x_bounds, dtype=float)
        pg = inner_mod.projected_gradient(x, grad_L, b[:, 0], b[:, 1])
    G = np.asarray(G, dtype=float)
    mu = np.asarray(mu, dtype=float)
    stat = float(np.max(np.abs(pg))) if pg.size else 0.0
    feas = float(np.max(np.maximum(G, 0.0))) if G.size else 0.0
    comp = float(np.max(np.abs(mu * G))) if G.size else 0.0
    return KktResiduals(stat, feas, comp)


def _residuals(p, pt, mu):
    grad_L = pt.grad_F + (pt.jac_G.T @ mu if p.r else 0.0)
    return residuals_from_values(pt.x, grad_L, pt.G, mu, p.x_bounds)


def kkt_residuals(p, x, y, mu, model: ImplicitModel = None) -> KktResiduals:
    """Upper-level KKT residuals of the implicit problem at ``(x, mu)``.

    ``y`` is only a warm start; the lower level is re-solved at ``x``.
    """
    model = _model_for(p, model)
    if y is not None and model._last is None:
        model._last = LowerSolution(y=np.asarray(y, dtype=float).ravel(), lam=None,
                                    active_set=(), biactive=(), kkt_residual=np.inf,
                                    status="warm")
    mu = np.zeros(p.r) if mu is None else np.asarray(mu, dtype=float)
    return _residuals(p, model.point(x), mu)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


def _subproblem(p, model, mu, rho):
    def oracle(z):
        try:
            pt = model.point(z)
        except _SOFT_FAILURES:
            return np.inf, None
        return phr_value(pt.F, pt.G, mu, rho), phr_gradient(pt.grad_F, pt.jac_G, pt.G, mu, rho)

    return oracle


def inner_solve(p, state: AlmState, cfg: AlmConfig = None, model: ImplicitModel = None):
    """Minimize the PHR subproblem for ``(state.mu, state.rho)`` from ``state.x``.

    Returns ``(x_next, y_next, InnerResult)``.
    """
    cfg = cfg or AlmConfig()
    model = _model_for(p, model)
    oracle = _subproblem(p, model, state.mu, state.rho)
    res = inner_mod.minimize(oracle, state.x, p.x_bounds, cfg.inner_config())
    pt = model.point(res.x)
    return res.x, pt.y, res


def _initial_mu(p, cfg):
    if cfg.mu0 is None:
        return np.zeros(p.r)
    mu = np.array(cfg.mu0, dtype=float)
    if mu.shape != (p.r,):
        raise InputError(f"mu0 has length {mu.shape[0]}, problem has {p.r} upper constraints")
    return mu


def _check_x0(p, x0):
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (p.n,):
        raise InputError(f"x0 has length {x0.shape[0]}, problem expects n={p.n}")
    if not np.all(np.isfinite(x0)):
        raise InputError("x0 must be finite")
    return x0


def run(p, x0, cfg: AlmConfig = None, model: ImplicitModel = None) -> SolveReport:
    """Solve the bilevel problem from ``x0``; never raises on solver failure.

    Failures are reported through ``state.termination == "failed"`` with the
    reason in ``state.message``.
    """
    t0 = time.perf_counter()
    cfg = cfg or AlmConfig()
    x0 = _check_x0(p, x0)
    mu = _initial_mu(p, cfg)
    rho = float(cfg.rho0)
    model = model or ImplicitModel(p, cfg.lower)
    x = p.clip_x(x0)
    trace = []

    def finish(state, F):
        return SolveReport(problem=p.name, x0=x0, state=state, F_value=F, trace=trace,
                           wall_time=time.perf_counter() - t0)

    try:
        pt = model.point(x)
    except _SOFT_FAILURES as exc:
        nan = float("nan")
        state = AlmState(x=x, y=np.full(p.m, np.nan), mu=mu, rho=rho,
                         residuals=KktResiduals(nan, nan, nan), termination=FAILED,
                         message=f"initial lower-level solve failed: {exc}")
        return finish(state, nan)

    state = AlmState(x=x, y=pt.y.copy(), mu=mu, rho=rho, residuals=_residuals(p, pt, mu))
    feas_prev = None
    icfg = cfg.inner_config()
    for k in range(1, cfg.max_outer + 1):
        retry = False
        try:
            res = inner_mod.minimize(_subproblem(p, model, mu, rho), x, p.x_bounds, icfg)
        except (EvaluationError, ValueError):
            retry = True
            rho = cfg.gamma * rho
            try:
                res = inner_mod.minimize(_subproblem(p, model, mu, rho), x, p.x_bounds, icfg)
            except (EvaluationError, ValueError) as exc:
                state.termination = FAILED
                state.message = f"inner solve failed after penalty retry: {exc}"
                break
        x_new = res.x
        try:
            pt_new = model.point(x_new)
        except _SOFT_FAILURES as exc:
            state.termination = FAILED
            state.message = f"implicit map failed at the inner solution: {exc}"
            break
        mu_new = dual_update(mu, rho, pt_new.G) if p.r else mu
        resid = _residuals(p, pt_new, mu_new)
        fired = bool(p.r) and feas_prev is not None and resid.feas > cfg.feas_factor * feas_prev
        rho_next = penalty_update(rho, resid.feas, feas_prev, cfg) if p.r else rho
        trace.append(TraceRecord(
            iteration=k, x=x_new.copy(), y=pt_new.y.copy(), F=pt_new.F, mu=mu_new.copy(),
            rho=rho, rho_next=rho_next, residuals=resid, inner_iterations=res.iterations,
            inner_status=res.status, feas_test_fired=fired, penalty_retry=retry,
            reduced_sensitivity=pt_new.reduced, inner_history=list(res.f_history)))
        state.x, state.y, state.mu, state.rho = x_new, pt_new.y.copy(), mu_new, rho_next
        state.residuals = resid
        state.outer_iter = k
        state.feas_history.append(resid.feas)
        x, pt, mu, rho = x_new, pt_new, mu_new, rho_next
        if p.r:
            feas_prev = resid.feas
        if resid.overall < cfg.kkt_tol:
            state.termination = KKT
            break
        if len(trace) >= 2:
            a, b = trace[-2], trace[-1]
            if (np.max(np.abs(b.x - a.x)) < cfg.stall_tol and abs(b.F - a.F) < cfg.stall_tol):
                state.termination = STALLED
                break
    else:
        state.termination = MAX_OUTER

    F = trace[-1].F if trace else pt.F
    return finish(state, F)


def _select_best(reports, feas_tol):
    usable = [(i, r) for i, r in enumerate(reports) if r.state.termination != FAILED]
    if not usable:
        return None
    feasible = [(i, r) for i, r in usable if r.state.residuals.feas <= feas_tol]
    pool = feasible or sorted(usable, key=lambda ir: (ir[1].state.residuals.feas, ir[0]))[:1]
    F_min = min(r.F_value for _, r in pool)
    ties = [(i, r) for i, r in pool if r.F_value <= F_min + 1e-9 * (1.0 + abs(F_min))]
    return min(ties, key=lambda ir: (ir[1].state.residuals.overall, ir[0]))


def multistart(p, starts: Sequence, cfg: AlmConfig = None, workers: int = 1) -> MultistartResult:
    """Run :func:`run` from every start and keep the best feasible report.

    Best means lowest F among reports with ``feas <= cfg.feasibility_tol``;
    near-ties (relative 1e-9) go to the lower overall residual, then to the
    earlier start.  Each start gets its own :class:`ImplicitModel`, so the
    result does not depend on ``workers``.
    """
    cfg = cfg or AlmConfig()
    starts = [_check_x0(p, s) for s in starts]
    if not starts:
        raise InputError("multistart needs at least one start")

    def one(x0):
        return run(p, x0, cfg, ImplicitModel(p, cfg.lower))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, starts))
    else:
        reports = [one(s) for s in starts]
    chosen = _select_best(reports, cfg.feasibility_tol)
    if chosen is None:
        lines = [f"  x0={r.x0.tolist()}: {r.state.message}" for r in reports]
        raise SolverFailure("every start failed:\n" + "\n".join(lines))
    i, best = chosen
    return MultistartResult(best=best, reports=reports, best_index=i)
