"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba versions are used when numba imports and the environment variable
``BILEVEL_ALM_JIT`` is not set to ``0``/``false``/``no``.  Both paths are
always importable so tests and ``benchmarks/bench_kernels.py`` can compare
them directly through :data:`IMPLEMENTATIONS`.

Kernels
-------
hd_mul
    Product rule for second-order forward-mode values.
hd_unary
    Chain rule for a scalar function applied to a second-order value.
lbfgs_direction
    L-BFGS two-loop recursion restricted to a free-variable mask.
dense_solve
    Partial-pivot LU solve for the tiny dense systems of the interior point
    method; returns ``ok=False`` instead of raising on a zero pivot.
"""

import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator


def _flag_enabled(value):
    return value.strip().lower() not in ("0", "false", "no", "off")


USE_JIT = NUMBA_AVAILABLE and _flag_enabled(os.environ.get("BILEVEL_ALM_JIT", "1"))


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def _hd_mul_np(av, ag, aH, bv, bg, bH):
    g = av * bg + bv * ag
    cross = np.outer(ag, bg)
    H = av * bH + bv * aH + (cross + cross.T)
    return g, H


def _hd_unary_np(d1, d2, ag, aH):
    return d1 * ag, d1 * aH + d2 * np.outer(ag, ag)


def _lbfgs_direction_np(g, S, Y, free):
    q = np.where(free, g, 0.0)
    k = S.shape[0]
    alpha = np.zeros(k)
    rho = np.zeros(k)
    for i in range(k - 1, -1, -1):
        s = np.where(free, S[i], 0.0)
        y = np.where(free, Y[i], 0.0)
        sy = s @ y
        if sy <= 0.0:
            continue
        rho[i] = 1.0 / sy
        alpha[i] = rho[i] * (s @ q)
        q = q - alpha[i] * y
    gamma = 1.0
    if k > 0:
        s = np.where(free, S[k - 1], 0.0)
        y = np.where(free, Y[k - 1], 0.0)
        yy = y @ y
        if yy > 0.0 and s @ y > 0.0:
            gamma = (s @ y) / yy
    r = gamma * q
    for i in range(k):
        if rho[i] == 0.0:
            continue
        y = np.where(free, Y[i], 0.0)
        s = np.where(free, S[i], 0.0)
        beta = rho[i] * (y @ r)
        r = r + (alpha[i] - beta) * s
    return -r


def _dense_solve_np(A, b):
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.zeros_like(b), False
    return x, bool(np.all(np.isfinite(x)))


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hd_mul_jit(av, ag, aH, bv, bg, bH):
    k = ag.shape[0]
    g = np.empty(k)
    H = np.empty((k, k))
    for i in range(k):
        g[i] = av * bg[i] + bv * ag[i]
    for i in range(k):
        for j in range(k):
            H[i, j] = av * bH[i, j] + bv * aH[i, j] + (ag[i] * bg[j] + ag[j] * bg[i])
    return g, H


@njit(cache=True)
def _hd_unary_jit(d1, d2, ag, aH):
    k = ag.shape[0]
    g = np.empty(k)
    H = np.empty((k, k))
    for i in range(k):
        g[i] = d1 * ag[i]
    for i in range(k):
        for j in range(k):
            H[i, j] = d1 * aH[i, j] + d2 * (ag[i] * ag[j])
    return g, H


@njit(cache=True)
def _masked_dot(free, a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        if free[i]:
            acc += a[i] * b[i]
    return acc


@njit(cache=True)
def _lbfgs_direction_jit(g, S, Y, free):
    n = g.shape[0]
    k = S.shape[0]
    q = np.zeros(n)
    for i in range(n):
        if free[i]:
            q[i] = g[i]
    alpha = np.zeros(k)
    rho = np.zeros(k)
    for i in range(k - 1, -1, -1):
        sy = _masked_dot(free, S[i], Y[i])
        if sy <= 0.0:
            continue
        rho[i] = 1.0 / sy
        alpha[i] = rho[i] * _masked_dot(free, S[i], q)
        for j in range(n):
            if free[j]:
                q[j] -= alpha[i] * Y[i, j]
    gamma = 1.0
    if k > 0:
        sy = _masked_dot(free, S[k - 1], Y[k - 1])
        yy = _masked_dot(free, Y[k - 1], Y[k - 1])
        if yy > 0.0 and sy > 0.0:
            gamma = sy / yy
    r = gamma * q
    for i in range(k):
        if rho[i] == 0.0:
            continue
        beta = rho[i] * _masked_dot(free, Y[i], r)
        for j in range(n):
            if free[j]:
                r[j] += (alpha[i] - beta) * S[i, j]
    return -r


@njit(cache=True)
def _dense_solve_jit(A, b):
    n = A.shape[0]
    U = A.copy()
    x = b.copy()
    for col in range(n):
        piv = col
        best = abs(U[col, col])
        for r in range(col + 1, n):
            if abs(U[r, col]) > best:
                best = abs(U[r, col])
                piv = r
        if best == 0.0:
            return np.zeros_like(b), False
        if piv != col:
            for c in range(n):
                tmp = U[col, c]
                U[col, c] = U[piv, c]
                U[piv, c] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        for r in range(col + 1, n):
            factor = U[r, col] / U[col, col]
            if factor != 0.0:
                for c in range(col, n):
                    U[r, c] -= factor * U[col, c]
                x[r] -= factor * x[col]
    for r in range(n - 1, -1, -1):
        acc = x[r]
        for c in range(r + 1, n):
            acc -= U[r, c] * x[c]
        x[r] = acc / U[r, r]
    for r in range(n):
        if not np.isfinite(x[r]):
            return x, False
    return x, True


IMPLEMENTATIONS = {
    "numpy": SimpleNamespace(
        hd_mul=_hd_mul_np,
        hd_unary=_hd_unary_np,
        lbfgs_direction=_lbfgs_direction_np,
        dense_solve=_dense_solve_np,
    ),
}
if NUMBA_AVAILABLE:
    IMPLEMENTATIONS["numba"] = SimpleNamespace(
        hd_mul=_hd_mul_jit,
        hd_unary=_hd_unary_jit,
        lbfgs_direction=_lbfgs_direction_jit,
        dense_solve=_dense_solve_jit,
    )

BACKEND = "numba" if USE_JIT else "numpy"
_active = IMPLEMENTATIONS[BACKEND]

hd_mul = _active.hd_mul
hd_unary = _active.hd_unary
lbfgs_direction = _active.lbfgs_direction
dense_solve = _active.dense_solve
