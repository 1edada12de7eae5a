"""Projected L-BFGS for box-constrained smooth-ish minimization.

Each iteration fixes the variables sitting on a bound whose gradient pushes
outward, builds an L-BFGS direction on the remaining free variables, and runs
a strong Wolfe line search along that direction capped at the first bound
hit.  When the curvature condition cannot be met (typical at the kinks of an
implicit bilevel objective) the step falls back to sufficient decrease only.
If the quasi-Newton step fails or stagnates, one gradient-sampling step is
tried: the negative minimum-norm element of the convex hull of gradients
sampled around x, which can follow a kink that every one-sided gradient
points across.

The oracle is ``oracle(x) -> (value, gradient)``.  A trial point where the
oracle returns a non-finite value is treated as a rejected step, which lets
callers signal "the lower level has no solution here" by returning ``inf``.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from . import _kernels
from .errors import DirectionError, EvaluationError, InputError

__all__ = [
    "InnerConfig",
    "InnerResult",
    "LineSearchResult",
    "minimize",
    "wolfe_line_search",
    "projected_gradient",
    "CONVERGED",
    "MAX_ITER",
    "LINESEARCH_FAILED",
    "STAGNATED",
]

CONVERGED = "converged"
MAX_ITER = "max_iter"
LINESEARCH_FAILED = "linesearch_failed"
STAGNATED = "stagnated"

_CURVATURE_SKIP = 1e-10


@dataclass(frozen=True)
class InnerConfig:
    memory: int = 10
    grad_tol: float = 1e-6
    max_iter: int = 500
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_linesearch: int = 25
    ftol: float = 1e-15  # relative decrease at or below which a step counts as no progress

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise InputError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.memory < 1:
            raise InputError("memory must be >= 1")
        if not self.grad_tol > 0.0:
            raise InputError("grad_tol must be positive")
        if not self.ftol >= 0.0:
            raise InputError("ftol must be nonnegative")
        if self.max_iter < 0 or self.max_linesearch < 1:
            raise InputError("max_iter must be >= 0 and max_linesearch >= 1")


@dataclass
class InnerResult:
    x: np.ndarray
    objective: float
    projected_grad_norm: float
    iterations: int
    status: str
    gradient: np.ndarray = field(default=None, repr=False)
    f_history: list = field(default_factory=list, repr=False)
    evaluations: int = 0
    armijo_steps: int = 0


@dataclass
class LineSearchResult:
    alpha: float
    x: np.ndarray
    f: float
    g: np.ndarray
    evaluations: int
    wolfe: bool
    capped: bool
    success: bool


def _box(bounds, n):
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2, n) and n != 2:
        b = b.T
    if b.shape != (n, 2):
        raise InputError(f"bounds must have shape ({n}, 2)")
    return b[:, 0].copy(), b[:, 1].copy()


def projected_gradient(x, g, lo, hi):
    """``x - P(x - g)``; zero exactly at box-constrained stationary points."""
    return x - np.clip(x - g, lo, hi)


def _finite(f, g):
    return np.isfinite(f) and g is not None and bool(np.all(np.isfinite(g)))


def _max_step(x, d, lo, hi):
    amax = np.inf
    for i in range(x.shape[0]):
        if d[i] > 0.0 and np.isfinite(hi[i]):
            amax = min(amax, (hi[i] - x[i]) / d[i])
        elif d[i] < 0.0 and np.isfinite(lo[i]):
            amax = min(amax, (lo[i] - x[i]) / d[i])
    return max(amax, 0.0)


def wolfe_line_search(oracle: Callable, x, d, bounds=None, cfg: InnerConfig = None,
                      f0: Optional[float] = None, g0=None, alpha0: float = 1.0) -> LineSearchResult:
    """Strong Wolfe search along ``d`` from ``x``, capped at the first bound hit.

    Returns a :class:`LineSearchResult`; ``wolfe`` is False when the step only
    satisfies sufficient decrease (fallback), ``capped`` when the accepted
    step is the bound-hitting one, ``success`` False when even the fallback
    found no decrease within ``cfg.max_linesearch`` trials per phase.

    Raises
    ------
    DirectionError
        If ``d`` is not a descent direction or points straight out of the box.
    """
    cfg = cfg or InnerConfig()
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    lo, hi = _box(bounds, x.shape[0])
    if f0 is None or g0 is None:
        f0, g0 = oracle(x)
    dphi0 = float(np.dot(g0, d))
    if not dphi0 < 0.0:
        raise DirectionError(f"not a descent direction (directional derivative {dphi0:g})")
    amax = _max_step(x, d, lo, hi)
    if amax <= 0.0:
        raise DirectionError("direction leaves the feasible box immediately")
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    evals = 0
    best = None  # lowest-value trial satisfying sufficient decrease
    smallest = min(alpha0, amax)

    def trial(a):
        nonlocal evals, best, smallest
        smallest = min(smallest, a)
        xa = np.clip(x + a * d, lo, hi)
        fa, ga = oracle(xa)
        evals += 1
        ok = _finite(fa, ga)
        dphi = float(np.dot(ga, d)) if ok else np.nan
        armijo = ok and fa <= f0 + c1 * a * dphi0
        if armijo and (best is None or fa < best[2]):
            best = (a, xa, fa, ga)
        return xa, fa, ga, dphi, ok, armijo

    def done(a, xa, fa, ga, wolfe, capped=False):
        return LineSearchResult(a, xa, float(fa), np.asarray(ga, dtype=float), evals,
                                wolfe, capped, True)

    def zoom(a_lo, f_lo, dphi_lo, a_hi, f_hi):
        while evals < cfg.max_linesearch:
            width = a_hi - a_lo
            if abs(width) <= 1e-16 * max(1.0, abs(a_lo)):
                return None
            a = None
            if np.isfinite(f_hi):
                # minimizer of the quadratic through (a_lo, f_lo, dphi_lo) and (a_hi, f_hi)
                denom = 2.0 * (f_hi - f_lo - dphi_lo * width)
                if denom > 0.0:
                    a = a_lo - dphi_lo * width * width / denom
            lo_s, hi_s = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if a is None or not np.isfinite(a) or not lo_s <= a <= hi_s:
                a = a_lo + 0.5 * width
            xa, fa, ga, dphi, ok, armijo = trial(a)
            if not armijo or fa >= f_lo:
                a_hi, f_hi = a, (fa if ok else np.inf)
                continue
            if abs(dphi) <= -c2 * dphi0:
                return done(a, xa, fa, ga, True)
            if dphi * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, dphi_lo = a, fa, dphi
        return None

    a_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    a = min(alpha0, amax)
    result = None
    for i in range(cfg.max_linesearch):
        xa, fa, ga, dphi, ok, armijo = trial(a)
        if not armijo or (i > 0 and fa >= f_prev):
            result = zoom(a_prev, f_prev, dphi_prev, a, fa if ok else np.inf)
            break
        if abs(dphi) <= -c2 * dphi0:
            result = done(a, xa, fa, ga, True)
            break
        if dphi >= 0.0:
            result = zoom(a, fa, dphi, a_prev, f_prev)
            break
        if a >= amax:
            # still descending at the bound: the capped step is the answer
            result = done(a, xa, fa, ga, True, capped=True)
            break
        a_prev, f_prev, dphi_prev = a, fa, dphi
        a = min(4.0 * a, amax)
        if evals >= cfg.max_linesearch:
            break
    if result is not None:
        return result

    if best is not None:
        a, xa, fa, ga = best
        return done(a, xa, fa, ga, False, capped=a >= amax)

    # sufficient-decrease backtracking below the smallest step already rejected
    a = smallest
    for _ in range(cfg.max_linesearch):
        a *= 0.5
        xa, fa, ga, dphi, ok, armijo = trial(a)
        if armijo:
            return done(a, xa, fa, ga, False)
    return LineSearchResult(0.0, x.copy(), float(f0), np.asarray(g0, dtype=float), evals,
                            False, False, False)


def _free_mask(x, g, lo, hi):
    at_lo = (x <= lo) & (g > 0.0)
    at_hi = (x >= hi) & (g < 0.0)
    return ~(at_lo | at_hi)


def minimize(oracle: Callable, x0, bounds=None, cfg: InnerConfig = None) -> InnerResult:
    """Minimize ``oracle`` over the box ``bounds`` (shape (n, 2), inf allowed).

    ``x0`` is projected onto the box first.  ``f_history`` lists the objective
    at the start and after every accepted step.
    """
    cfg = cfg or InnerConfig()
    x = np.asarray(x0, dtype=float).ravel().copy()
    n = x.shape[0]
    lo, hi = _box(bounds, n)
    x = np.clip(x, lo, hi)
    f, g = oracle(x)
    g = np.asarray(g, dtype=float)
    if not _finite(f, g):
        raise EvaluationError(f"objective is not finite at the starting point {x.tolist()}")
    S = deque(maxlen=cfg.memory)
    Y = deque(maxlen=cfg.memory)
    history = [float(f)]
    evals = 1
    armijo_steps = 0
    status = MAX_ITER
    iterations = 0
    pg = float(np.max(np.abs(projected_gradient(x, g, lo, hi)))) if n else 0.0

    while True:
        if pg <= cfg.grad_tol:
            status = CONVERGED
            break
        if iterations >= cfg.max_iter:
            status = MAX_ITER
            break
        free = _free_mask(x, g, lo, hi)
        d = _direction(g, S, Y, free, n)
        if not np.dot(g, d) < 0.0:
            S.clear()
            Y.clear()
            d = np.where(free, -g, 0.0)
        # free variables on a bound may not move outward
        d[((x <= lo) & (d < 0.0)) | ((x >= hi) & (d > 0.0))] = 0.0
        if not np.dot(g, d) < 0.0:
            status = LINESEARCH_FAILED
            break
        alpha0 = 1.0 if S else min(1.0, 1.0 / max(float(np.max(np.abs(d))), 1e-300))
        try:
            ls = wolfe_line_search(oracle, x, d, np.column_stack([lo, hi]), cfg, f, g, alpha0)
        except DirectionError:
            status = LINESEARCH_FAILED
            break
        evals += ls.evaluations
        if not ls.success:
            ls = _sampled_step(oracle, x, f, g, lo, hi, cfg)
            if ls is None:
                status = LINESEARCH_FAILED
                break
            evals += ls.evaluations
            S.clear()
            Y.clear()
        if not ls.wolfe:
            armijo_steps += 1
        s = ls.x - x
        yv = ls.g - g
        sy = float(np.dot(s, yv))
        if sy > _CURVATURE_SKIP * np.linalg.norm(s) * np.linalg.norm(yv):
            S.append(s)
            Y.append(yv)
        decrease = f - ls.f
        scale = max(abs(f), abs(ls.f), 1.0)
        x, f, g = ls.x, ls.f, ls.g
        history.append(float(f))
        iterations += 1
        pg = float(np.max(np.abs(projected_gradient(x, g, lo, hi))))
        if pg > cfg.grad_tol and decrease <= cfg.ftol * scale:
            alt = _sampled_step(oracle, x, f, g, lo, hi, cfg)
            if alt is None or f - alt.f <= cfg.ftol * max(abs(f), abs(alt.f), 1.0):
                status = STAGNATED
                break
            evals += alt.evaluations
            S.clear()
            Y.clear()
            x, f, g = alt.x, alt.f, alt.g
            history.append(float(f))
            iterations += 1
            pg = float(np.max(np.abs(projected_gradient(x, g, lo, hi))))

    return InnerResult(x=x, objective=float(f), projected_grad_norm=pg, iterations=iterations,
                       status=status, gradient=g, f_history=history, evaluations=evals,
                       armijo_steps=armijo_steps)


def _direction(g, S, Y, free, n):
    if S:
        S_arr = np.array(S)
        Y_arr = np.array(Y)
    else:
        S_arr = np.zeros((0, n))
        Y_arr = np.zeros((0, n))
    d = _kernels.lbfgs_direction(np.ascontiguousarray(g), S_arr, Y_arr, free)
    return np.where(free, d, 0.0)


def _min_norm_hull(grads):
    """Minimum-norm point of the convex hull of the rows of ``grads``.

    Non-negative least squares on ``[grads^T; w 1^T] lam = [0; w]`` with a
    heavy weight ``w`` enforcing ``sum(lam) = 1``.
    """
    k = grads.shape[0]
    w = 1e3 * max(1.0, float(np.max(np.abs(grads))))
    A = np.vstack([grads.T, np.full((1, k), w)])
    b = np.zeros(A.shape[0])
    b[-1] = w
    lam, _ = nnls(A, b)
    total = lam.sum()
    if not total > 0.0:
        return grads[0]
    return (lam / total) @ grads


def _sampled_step(oracle, x, f, g, lo, hi, cfg):
    """One gradient-sampling descent step from ``x``, or None when none is found."""
    n = x.shape[0]
    h = 1e-6 * (1.0 + float(np.max(np.abs(x))))
    grads = [g]
    evals = 0
    for i in range(n):
        for sign in (1.0, -1.0):
            xs = x.copy()
            xs[i] = min(max(xs[i] + sign * h, lo[i]), hi[i])
            if xs[i] == x[i]:
                continue
            fs, gs = oracle(xs)
            evals += 1
            if _finite(fs, gs):
                grads.append(np.asarray(gs, dtype=float))
    d = -_min_norm_hull(np.array(grads))
    d[((x <= lo) & (d < 0.0)) | ((x >= hi) & (d > 0.0))] = 0.0
    if not np.max(np.abs(d)) > 0.1 * cfg.grad_tol or not np.dot(g, d) < 0.0:
        return None
    alpha0 = min(1.0, 1.0 / float(np.max(np.abs(d))))
    try:
        ls = wolfe_line_search(oracle, x, d, np.column_stack([lo, hi]), cfg, f, g, alpha0)
    except DirectionError:
        return None
    if not ls.success:
        return None
    ls.evaluations += evals
    return ls
