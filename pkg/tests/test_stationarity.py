import numpy as np
import pytest

from bilevel_alm import BilevelProblem
from bilevel_alm.alm import run
from bilevel_alm.errors import SingularSystemError
from bilevel_alm.lower import solve_lower
from bilevel_alm.sensitivity import sensitivities, total_gradients
from bilevel_alm.stationarity import (DEGENERATE, S_STATIONARY, VIOLATED, MpccMultipliers,
                                      certify, certify_point, check_s_stationarity,
                                      recover_multipliers, solve_adjoint)
from helpers import RandomQP, clark_westerberg, enumerate_qp, fd_gradient, rel_err


def test_clark_westerberg_multipliers():
    p = clark_westerberg()
    sol = solve_lower(p, [1.0])
    assert sol.active_set == (0,)
    nu, w = solve_adjoint(p, [1.0], sol, None)
    assert nu == pytest.approx([0.0], abs=1e-12)
    assert w == pytest.approx([-0.5])
    rep = certify_point(p, [1.0], sol)
    assert rep.verdict == S_STATIONARY and rep.certified
    assert rep.multipliers.pi == pytest.approx([-2.0, 0.0, 0.0])
    assert rep.index_sets == ((0,), (1, 2), ())
    # the stricter sign reading fails on the active constraint: x = 1 is a kink minimum
    assert rep.strict_sign_ok == (False, True, True)
    assert any("kink" in n for n in rep.notes)


def test_zero_rhs_gives_zero_multipliers():
    p = clark_westerberg().replace(F=lambda x, y: (x[0] - 3) ** 2)
    sol = solve_lower(p, [1.0])
    nu, w = solve_adjoint(p, [1.0], sol, None)
    assert np.all(nu == 0.0) and np.all(w == 0.0)


def unconstrained():
    # H = diag(1, 2), grad_y F = (1, 2): nu = -H^{-1} grad_y F = (-1, -1)
    return BilevelProblem(
        n=1, m=2,
        F=lambda x, y: x[0] ** 2 + y[0] + 2 * y[1],
        f=lambda x, y: 0.5 * (y[0] ** 2 + 2 * y[1] ** 2) - x[0] * y[0],
    )


def test_unconstrained_adjoint():
    p = unconstrained()
    sol = solve_lower(p, [0.7])
    nu, w = solve_adjoint(p, [0.7], sol, None)
    assert nu == pytest.approx([-1.0, -1.0])
    assert w.shape == (0,)
    mults = recover_multipliers(sol, nu, w, p, [0.7])
    assert mults.pi.shape == (0,) and mults.xi.shape == (0,)


def test_unconstrained_stationary_point():
    # F(x, y(x)) = x^2 + x, minimised at x = -1/2
    p = unconstrained()
    rep = certify_point(p, [-0.5], solve_lower(p, [-0.5]))
    assert rep.verdict == S_STATIONARY
    assert max(rep.stationarity_residuals) <= 1e-10
    rep = certify_point(p, [0.3], solve_lower(p, [0.3]))
    assert rep.verdict == VIOLATED
    assert rep.stationarity_residuals[0] == pytest.approx(1.6)


def biactive():
    return BilevelProblem(
        n=1, m=1,
        F=lambda x, y: (x[0] - 1) ** 2 + y[0] ** 2,
        f=lambda x, y: (y[0] - x[0]) ** 2,
        g=[lambda x, y: -y[0]],
    )


def test_biactive_is_degenerate():
    p = biactive()
    sol = solve_lower(p, [0.0])
    assert sol.biactive == (0,)
    rep = certify_point(p, [0.0], sol)
    assert rep.verdict == DEGENERATE and not rep.certified
    assert rep.index_sets[2] == (0,)


def test_singular_system_raises():
    p = BilevelProblem(n=1, m=1, F=lambda x, y: y[0], f=lambda x, y: x[0] * y[0],
                       y_bounds=[(-1.0, 1.0)])
    sol = solve_lower(p, [0.0])
    with pytest.raises(SingularSystemError):
        solve_adjoint(p, [0.0], sol, None, one_sided=True)
    assert certify_point(p, [0.0], sol).verdict == DEGENERATE


def test_sign_rules_by_index_set():
    p = clark_westerberg()
    sol = solve_lower(p, [1.0])
    base = certify_point(p, [1.0], sol).multipliers
    bad = MpccMultipliers(mu=base.mu, nu=base.nu, pi=base.pi + np.array([0.0, 0.5, 0.0]), xi=base.xi)
    rep = check_s_stationarity(p, [1.0], sol, bad)
    assert rep.sign_rule_ok == (True, False, True)
    assert rep.verdict == VIOLATED


@pytest.mark.parametrize("seed", range(8))
def test_x_block_is_implicit_gradient(seed):
    rng = np.random.default_rng(seed)
    qp = RandomQP(rng, n=2, m=3, s=3)
    a = rng.normal(size=3)
    p = qp.problem().replace(F=lambda x, y: a[0] * y[0] + a[1] * y[1] * y[2] + a[2] * x[0] * y[2])
    x = qp.x
    sol = solve_lower(p, x)
    if sol.biactive:
        pytest.skip("biactive sample")
    rep = certify_point(p, x, sol)
    tg = total_gradients(p, x, sol, sensitivities(p, x, sol))
    assert rep.stationarity_residuals[0] == pytest.approx(np.max(np.abs(tg.grad_F)), abs=1e-9)

    def Fhat(z):
        y, _ = enumerate_qp(qp, z)
        return a[0] * y[0] + a[1] * y[1] * y[2] + a[2] * z[0] * y[2]

    fd = fd_gradient(Fhat, x, 1e-6)
    assert rel_err(tg.grad_F, fd) <= 1e-5
    # xi vanishes on the active set by construction of the adjoint
    active = list(rep.index_sets[0])
    assert np.all(np.abs(rep.multipliers.xi[active]) <= 1e-8)
    assert rep.adjoint_residual <= 1e-10 * (1 + np.max(np.abs(tg.grad_F)) + 10)


def test_certify_after_solve():
    p = clark_westerberg()
    rep = run(p, [1.7])
    cert = certify(p, rep)
    assert cert.verdict == S_STATIONARY
    assert abs(cert.stationarity_residuals[0] - rep.state.residuals.stat) <= 1e-6


def test_certify_infeasible_lower():
    p = clark_westerberg()
    rep = run(p, [7.0])
    cert = certify(p, rep)
    assert cert.verdict == VIOLATED
    assert "lower level not solved" in cert.notes[0]
