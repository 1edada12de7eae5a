"""Acceptance criteria 1-10, each at its stated tolerance.

A terminal summary (see conftest.py) prints one PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest

from bilevel_alm import benchmarks
from bilevel_alm.alm import AlmConfig, augmented_lagrangian, augmented_lagrangian_gradient, multistart, run
from bilevel_alm.landscape import scan, signature_changes
from bilevel_alm.lower import solve_lower
from bilevel_alm.sensitivity import sensitivities
from bilevel_alm.stationarity import S_STATIONARY, certify
from helpers import RandomQP, enumerate_qp, fd_gradient, fd_lower, rel_err, smooth_samples

REFERENCE_F = {
    "AiyoshiShimizu1984Ex2": 5.0, "AllendeStill2013": -1.0, "Bard_1988_ex1": 17.0,
    "Bard_1991_ex1": 2.0, "Bard_Book_1998": 0.0, "ClarkWesterberg1990": 5.0,
    "DempeEtal2012": -1.0, "Dempe_Franke_2011_ex42": 3.0, "Dempe_Lohse_2011_ex31a": -5.5,
    "Dempe_Lohse_2011_ex31b": -12.0, "FloudasEtal2013": 0.0, "Outrata_Cervinka_2009": 0.0,
    "Shimizu_Aiyoshi_1981_ex2": 225.0,
}

# reference (outer iterations, seconds); informational only
REFERENCE_COST = {
    "AiyoshiShimizu1984Ex2": (12, 2.20), "AllendeStill2013": (11, 1.11),
    "Bard_1988_ex1": (11, 0.91), "Bard_1991_ex1": (11, 0.48), "Bard_Book_1998": (6, 0.28),
    "ClarkWesterberg1990": (11, 0.33), "DempeEtal2012": (11, 0.22),
    "Dempe_Franke_2011_ex42": (11, 2.75), "Dempe_Lohse_2011_ex31a": (11, 5.35),
    "Dempe_Lohse_2011_ex31b": (12, 1.13), "FloudasEtal2013": (11, 0.48),
    "Outrata_Cervinka_2009": (12, 0.67), "Shimizu_Aiyoshi_1981_ex2": (39, 4.20),
}

F_TOL = 1e-3


def solvable_entries():
    return [benchmarks.get(name) for name in sorted(REFERENCE_F) if benchmarks.get(name).solvable]


def excluded_entries():
    return [name for name in sorted(REFERENCE_F) if not benchmarks.get(name).solvable]


@pytest.fixture(scope="module")
def table_runs():
    """Each solvable entry solved once from its reference start; (report, seconds)."""
    out = {}
    for e in solvable_entries():
        t0 = time.perf_counter()
        rep = run(e.solver_problem(), e.x0_best, AlmConfig())
        out[e.name] = (rep, time.perf_counter() - t0)
    return out


def test_criterion_01_reference_values(table_runs, record_property):
    assert len(REFERENCE_F) == 13
    errors = {name: abs(rep.F_value - REFERENCE_F[name]) for name, (rep, _) in table_runs.items()}
    total = sum(t for _, t in table_runs.values())
    worst = max(errors, key=errors.get)
    excluded = excluded_entries()
    record_property("detail", f"{len(errors)} solved, worst |dF|={errors[worst]:.2e} ({worst}), "
                              f"{total:.1f} s; excluded: {', '.join(excluded) or 'none'}")
    for name, err in errors.items():
        assert err <= F_TOL, f"{name}: F={table_runs[name][0].F_value} vs {REFERENCE_F[name]}"
    assert total < 60.0


def test_criterion_02_clark_westerberg_landscape(record_property):
    p = benchmarks.get("ClarkWesterberg1990").solver_problem()
    rows = scan(p, 0.0, 8.0, 401)
    changes = signature_changes(rows)
    mids = [0.5 * (a + b) for a, b, _, _ in changes]
    best = min((r for r in rows if r.feasible), key=lambda r: r.F)
    record_property("detail", f"changes near x={[round(v, 4) for v in mids]}, "
                              f"min F={best.F:.6g} at x={best.x:.4g}")
    assert len(changes) == 2
    assert abs(mids[0] - 2.0) <= 0.05 and abs(mids[1] - 4.0) <= 0.05
    for (a, b, _, _), kink in zip(changes, (2.0, 4.0)):
        assert abs(a - kink) <= 0.05 and abs(b - kink) <= 0.05
    assert abs(best.F - 5.0) <= 0.01 and abs(best.x - 1.0) <= 0.02


def test_criterion_03_multistart_basins(record_property):
    e = benchmarks.get("ClarkWesterberg1990")
    grid = benchmarks.default_multistart_grid(e, points_per_dim=9)
    res = multistart(e.solver_problem(), grid)
    converged = [r for r in res.reports if r.termination in ("kkt", "stalled")]
    basins = []
    for r in converged:
        if not any(np.max(np.abs(r.state.x - b.state.x)) <= 1e-3 for b in basins):
            basins.append(r)
    F_values = sorted({round(b.F_value, 4) for b in basins})
    record_property("detail", f"{len(grid)} starts, {len(basins)} basins at "
                              f"x={[round(float(b.state.x[0]), 4) for b in basins]}, F={F_values}")
    assert len(basins) >= 2 and len(F_values) >= 2
    assert abs(res.best.F_value - 5.0) <= F_TOL


def test_criterion_04_kkt_convergence(record_property):
    e = benchmarks.get("Outrata_Cervinka_2009")
    if not e.solvable:
        record_property("detail", f"Outrata_Cervinka_2009 has no usable definition ({e.dispute_reason})")
        pytest.fail(f"Outrata_Cervinka_2009 cannot be solved: {e.dispute_reason}")
    rep = run(e.solver_problem(), (-10.0, -1.0))
    record_property("detail", f"{rep.termination}, residual {rep.state.residuals.overall:.2e}, "
                              f"F={rep.F_value:.6g}")
    assert rep.termination == "kkt"
    assert rep.state.residuals.overall < 1e-5
    assert abs(rep.F_value) <= 1e-4


def test_criterion_05_stall_termination(table_runs, record_property):
    rep, _ = table_runs["AiyoshiShimizu1984Ex2"]
    record_property("detail", f"{rep.termination} after {rep.state.outer_iter} outer iterations, "
                              f"F={rep.F_value:.7g}")
    assert abs(rep.F_value - 5.0) <= F_TOL
    assert rep.termination == "stalled"


def test_criterion_06_derivative_oracles(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst_dy, worst_dl, count = 0.0, 0.0, 0
    for e in solvable_entries():
        p = e.solver_problem()
        samples = smooth_samples(e, 5, rng)
        assert len(samples) == 5, f"{e.name}: only {len(samples)} smooth samples found"
        for x in samples:
            sol = solve_lower(p, x)
            dy = sensitivities(p, x, sol).dy_dx
            worst_dy = max(worst_dy, rel_err(dy, fd_lower(p, x, 1e-5)))
            mu = rng.uniform(0.0, 2.0, size=p.r)
            rho = 10.0
            G = np.array([fn(x, sol.y) for fn in p.G]) if p.r else np.zeros(0)
            if np.any(np.abs(mu + rho * G) < 1e-3):
                mu = mu + 0.5  # keep clear of the kink of max(0, mu + rho G)
            grad = augmented_lagrangian_gradient(p, x, mu, rho)
            fd = fd_gradient(lambda z: augmented_lagrangian(p, z, mu, rho), x, 1e-5)
            worst_dl = max(worst_dl, rel_err(grad, fd))
            count += 1
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{count} samples, worst dy/dx err {worst_dy:.1e}, "
                              f"worst grad L err {worst_dl:.1e}, {elapsed:.1f} s")
    assert worst_dy <= 1e-4
    assert worst_dl <= 1e-4
    assert elapsed < 30.0


def test_criterion_07_lower_solver_oracle(record_property):
    rng = np.random.default_rng(7)
    worst_y, worst_lam, failures = 0.0, 0.0, 0
    for _ in range(200):
        m, s, n = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        qp = RandomQP(rng, n, m, s)
        sol = solve_lower(qp.problem(), qp.x)
        if not sol.ok:
            failures += 1
            continue
        y_ref, lam_ref = enumerate_qp(qp, qp.x)
        worst_y = max(worst_y, float(np.max(np.abs(sol.y - y_ref))))
        worst_lam = max(worst_lam, float(np.max(np.abs(sol.lam - lam_ref))))
    record_property("detail", f"200 QPs, {failures} failures, primal err {worst_y:.1e}, "
                              f"multiplier err {worst_lam:.1e}")
    assert failures == 0
    assert worst_y <= 1e-7
    assert worst_lam <= 1e-6


def test_criterion_08_alm_invariants(table_runs, record_property):
    cfg = AlmConfig()
    reports = [rep for rep, _ in table_runs.values()]
    for e in solvable_entries():
        if e.n == 1:  # grid starts add traces with more penalty activity
            for x0 in benchmarks.default_multistart_grid(e):
                reports.append(run(e.solver_problem(), x0, cfg))
    records, fired, retries = 0, 0, 0
    for rep in reports:
        prev = cfg.rho0
        for t in rep.trace:
            records += 1
            assert np.all(t.mu >= 0.0)
            assert t.rho >= prev and t.rho_next >= t.rho
            # rho may only move when the feasibility test fires, or on a
            # retry after a failed inner solve (flagged separately)
            if t.rho > prev:
                assert t.penalty_retry
            if t.rho_next > t.rho:
                assert t.feas_test_fired
            fired += t.feas_test_fired
            retries += t.penalty_retry
            assert all(b <= a for a, b in zip(t.inner_history, t.inner_history[1:]))
            prev = t.rho_next
    record_property("detail", f"{len(reports)} traces, {records} outer iterations, "
                              f"feasibility test fired {fired}x, penalty retries {retries}")
    assert records > 0


def test_criterion_09_s_stationarity(table_runs, record_property):
    checked, verdicts = [], []
    for e in solvable_entries():
        rep, _ = table_runs[e.name]
        if rep.termination != "kkt":
            continue
        p = e.solver_problem()
        sol = solve_lower(p, rep.state.x)
        if sol.biactive:
            continue
        cert = certify(p, rep, cert_tol=1e-4)
        gap = abs(cert.stationarity_residuals[0] - rep.state.residuals.stat)
        checked.append(e.name)
        verdicts.append((e.name, cert.verdict, gap))
    record_property("detail", "; ".join(f"{n}: {v}, |r_x - r_stat|={g:.1e}" for n, v, g in verdicts))
    assert checked
    for name, verdict, gap in verdicts:
        assert verdict == S_STATIONARY, name
        assert gap <= 1e-6, name


def test_criterion_10_cost_is_informational(table_runs, record_property):
    parts = []
    for name, (rep, seconds) in sorted(table_runs.items()):
        iters, ref_s = REFERENCE_COST[name]
        parts.append(f"{name} {rep.state.outer_iter} it/{seconds:.2f}s (ref {iters}/{ref_s})")
    record_property("detail", "not gated; " + ", ".join(parts))
    print("\n".join(parts))
