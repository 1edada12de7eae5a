import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilevel_alm import _kernels

BACKENDS = sorted(_kernels.IMPLEMENTATIONS)


def bfgs_inverse(S, Y, free):
    """Explicit inverse-Hessian BFGS recursion on the free coordinates."""
    P = np.diag(free.astype(float))
    n = free.shape[0]
    pairs = [(P @ s, P @ y) for s, y in zip(S, Y) if (P @ s) @ (P @ y) > 0]
    gamma = 1.0
    if len(S):
        s, y = P @ S[-1], P @ Y[-1]
        if y @ y > 0 and s @ y > 0:
            gamma = (s @ y) / (y @ y)
    H = gamma * np.eye(n)
    for s, y in pairs:
        rho = 1.0 / (s @ y)
        V = np.eye(n) - rho * np.outer(y, s)
        H = V.T @ H @ V + rho * np.outer(s, s)
    return P @ H @ P


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", range(5))
def test_lbfgs_direction_matches_explicit_bfgs(backend, seed):
    rng = np.random.default_rng(seed)
    n, k = 6, 4
    A = rng.normal(size=(n, n))
    A = A @ A.T + np.eye(n)
    S = rng.normal(size=(k, n))
    Y = S @ A
    g = rng.normal(size=n)
    free = rng.random(n) > 0.3
    d = _kernels.IMPLEMENTATIONS[backend].lbfgs_direction(g, S, Y, free)
    assert np.allclose(d, -bfgs_inverse(S, Y, free) @ g, rtol=1e-9, atol=1e-9)


arrays = st.integers(1, 5).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(0, 2**32 - 1)))


@settings(max_examples=40, deadline=None)
@given(arrays)
def test_backends_agree(case):
    n, seed = case
    rng = np.random.default_rng(seed)
    av, bv = rng.normal(size=2)
    ag, bg = rng.normal(size=(2, n))
    aH, bH = rng.normal(size=(2, n, n))
    A = rng.normal(size=(n, n)) + n * np.eye(n)
    b = rng.normal(size=n)
    k = int(rng.integers(0, 4))
    S, Y = rng.normal(size=(2, k, n))
    free = rng.random(n) > 0.2
    outs = []
    for name in BACKENDS:
        impl = _kernels.IMPLEMENTATIONS[name]
        outs.append((impl.hd_mul(av, ag, aH, bv, bg, bH), impl.hd_unary(0.3, -1.2, ag, aH),
                     impl.lbfgs_direction(ag, S, Y, free), impl.dense_solve(A, b)))
    ref = outs[0]
    for other in outs[1:]:
        for a, b_ in zip(ref[:2], other[:2]):
            assert np.allclose(a[0], b_[0], rtol=1e-12, atol=1e-12)
            assert np.allclose(a[1], b_[1], rtol=1e-12, atol=1e-12)
        assert np.allclose(ref[2], other[2], rtol=1e-10, atol=1e-12)
        assert ref[3][1] == other[3][1]
        assert np.allclose(ref[3][0], other[3][0], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_hd_mul_is_product_rule(backend):
    # a = x0 * x1, b = x0 + x1^2 at (2, 3)
    ag, aH = np.array([3.0, 2.0]), np.array([[0.0, 1.0], [1.0, 0.0]])
    bg, bH = np.array([1.0, 6.0]), np.array([[0.0, 0.0], [0.0, 2.0]])
    g, H = _kernels.IMPLEMENTATIONS[backend].hd_mul(6.0, ag, aH, 11.0, bg, bH)
    # a*b = x0^2 x1 + x0 x1^3
    assert np.allclose(g, [2 * 2 * 3 + 27, 4 + 3 * 2 * 9])
    assert np.allclose(H, [[6.0, 4 + 27], [4 + 27, 12 * 3]])


@pytest.mark.parametrize("backend", BACKENDS)
def test_dense_solve_flags_singular(backend):
    impl = _kernels.IMPLEMENTATIONS[backend]
    x, ok = impl.dense_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))
    assert not ok
    x, ok = impl.dense_solve(np.array([[2.0, 1.0], [1.0, 3.0]]), np.array([3.0, 5.0]))
    assert ok and np.allclose(x, [0.8, 1.4])


def test_env_flag_selects_numpy():
    env = dict(os.environ, BILEVEL_ALM_JIT="0")
    proc = subprocess.run([sys.executable, "-c", "from bilevel_alm import _kernels; print(_kernels.BACKEND)"],
                          env=env, capture_output=True, text=True, check=True)
    assert proc.stdout.strip() == "numpy"


def test_solver_results_do_not_depend_on_backend():
    code = ("from bilevel_alm import benchmarks, run; "
            "e = benchmarks.get('AllendeStill2013'); "
            "r = run(e.solver_problem(), e.x0_best); print(repr(r.F_value), r.termination)")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, BILEVEL_ALM_JIT=flag)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                              text=True, check=True)
        F, term = proc.stdout.split()
        outs.append((float(F), term))
    assert outs[0][1] == outs[1][1]
    assert abs(outs[0][0] - outs[1][0]) <= 1e-8
