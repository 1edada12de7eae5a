"""S-stationarity certificate for the complementarity reformulation.

The bilevel problem is rewritten as a program with complementarity
constraints in (x, y, lambda):

    min F  s.t.  G <= 0,  grad_y f + grad_y g^T lambda = 0,
                 g <= 0,  lambda >= 0,  lambda_i g_i = 0

with Lagrangian ``F + mu^T G + nu^T grad_y L_f + pi^T g - xi^T lambda``.
Given an implicit-problem solution (x, y, lambda) and upper multipliers mu,
the remaining multipliers come from the adjoint of the sensitivity system:

    M^T [nu; w] = -[grad_y F + grad_y G^T mu; 0],
    pi_A = diag(lambda_A) w,  pi_I = 0,  xi = grad_y g nu.

Index sets over the lower constraints: I+ (active, lambda > 0), I- (inactive,
lambda = 0) and I0 (biactive).  The verdict uses the standard S-stationarity
sign rules: xi vanishes on I+, pi vanishes on I-, and both are nonnegative on
I0.  A nonempty I0 or a singular M gives a ``degenerate`` verdict.  The
stricter reading that also asks ``pi >= 0`` on I+ and ``xi >= 0`` on I- is
reported per index as ``strict_sign_ok``; it can fail at kink minima of the
implicit objective, where the one-sided analysis applies.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import inner as inner_mod
from .autodiff import evaluate, value
from .errors import DegenerateError, SingularSystemError
from .lower import solve_lower
from .sensitivity import lower_derivatives, _system_from

__all__ = [
    "MpccMultipliers",
    "SStationarityReport",
    "solve_adjoint",
    "recover_multipliers",
    "check_s_stationarity",
    "certify",
    "certify_point",
    "S_STATIONARY",
    "VIOLATED",
    "DEGENERATE",
]

S_STATIONARY = "s_stationary"
VIOLATED = "violated"
DEGENERATE = "degenerate"

_PIVOT_RTOL = 1e-12
_ADJOINT_RTOL = 1e-10


@dataclass
class MpccMultipliers:
    mu: np.ndarray
    nu: np.ndarray
    pi: np.ndarray
    xi: np.ndarray


@dataclass
class SStationarityReport:
    verdict: str
    stationarity_residuals: tuple          # (x-block, y-block, lambda-block), inf-norms
    index_sets: tuple                      # (I+, I-, I0) over the lower constraints
    sign_rule_ok: tuple                    # one flag per lower constraint
    strict_sign_ok: tuple = ()
    feasibility: float = float("nan")
    complementarity: float = float("nan")
    multipliers: Optional[MpccMultipliers] = None
    adjoint_residual: float = float("nan")
    implicit_stationarity: float = float("nan")
    cert_tol: float = 1e-4
    notes: list = field(default_factory=list)

    @property
    def certified(self):
        return self.verdict == S_STATIONARY


def _adjoint_rhs(p, x, y, mu):
    n = p.n
    _, gF, _ = evaluate(p.F, x, y, "xy")
    rhs = gF[n:].copy()
    for mu_i, fn in zip(mu, p.G):
        _, gG, _ = evaluate(fn, x, y, "xy")
        rhs += mu_i * gG[n:]
    return rhs


def solve_adjoint(p, x, sol, mu, one_sided=False):
    """Solve ``M^T [nu; w] = -[grad_y F + grad_y G^T mu; 0]``.

    Returns ``(nu, w)`` with ``w`` indexed like ``sol.active_set``.

    Raises
    ------
    DegenerateError
        If ``sol`` has a biactive constraint and ``one_sided`` is False.
    SingularSystemError
        If ``M`` is numerically singular or the solve misses its residual bound.
    """
    x = np.asarray(x, dtype=float).ravel()
    mu = np.zeros(p.r) if mu is None else np.asarray(mu, dtype=float).ravel()
    d = lower_derivatives(p, x, sol, one_sided)
    M, _ = _system_from(d, sol.lam, p.m, p.n)
    m = p.m
    rhs = np.zeros(M.shape[0])
    rhs[:m] = -_adjoint_rhs(p, x, sol.y, mu)
    with warnings.catch_warnings():
        # singularity is detected from the pivots below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M)
    scale = np.max(np.abs(M)) if M.size else 0.0
    if scale == 0.0 or np.min(np.abs(np.diag(lu))) <= _PIVOT_RTOL * scale:
        raise SingularSystemError("sensitivity matrix is singular; the adjoint has no unique solution")
    z = scipy.linalg.lu_solve((lu, piv), rhs, trans=1)
    resid = float(np.max(np.abs(M.T @ z - rhs)))
    if resid > _ADJOINT_RTOL * (1.0 + float(np.max(np.abs(rhs)))):
        raise SingularSystemError(f"adjoint residual {resid:.3g} too large; M is ill-conditioned")
    return z[:m], z[m:]


def recover_multipliers(sol, nu, w, p, x, mu=None) -> MpccMultipliers:
    """``pi_A = diag(lambda_A) w``, ``pi`` zero elsewhere, ``xi = grad_y g nu``."""
    x = np.asarray(x, dtype=float).ravel()
    cons = p.lower_constraints
    s = len(cons)
    active = list(sol.active_set)
    pi = np.zeros(s)
    if active:
        pi[active] = sol.lam[active] * np.asarray(w, dtype=float)
    xi = np.zeros(s)
    for i, fn in enumerate(cons):
        _, gy, _ = evaluate(fn, x, sol.y, "y")
        xi[i] = float(gy @ nu)
    mu = np.zeros(p.r) if mu is None else np.asarray(mu, dtype=float).ravel()
    return MpccMultipliers(mu=mu.copy(), nu=np.asarray(nu, dtype=float).copy(), pi=pi, xi=xi)


def _blocks(p, x, sol, mults):
    """Gradient of the MPCC Lagrangian in x, y and lambda."""
    n, m = p.n, p.m
    y = sol.y
    _, gF, _ = evaluate(p.F, x, y, "xy")
    gx, gy = gF[:n].copy(), gF[n:].copy()
    for mu_i, fn in zip(mults.mu, p.G):
        _, gG, _ = evaluate(fn, x, y, "xy")
        gx += mu_i * gG[:n]
        gy += mu_i * gG[n:]
    d = lower_derivatives(p, x, sol, one_sided=True)
    gx += d.Hyx.T @ mults.nu + d.Jx.T @ mults.pi
    gy += d.H @ mults.nu + d.Jy.T @ mults.pi
    glam = d.Jy @ mults.nu - mults.xi
    return gx, gy, glam, d.c


def _inf(v):
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def check_s_stationarity(p, x, sol, mults: MpccMultipliers, cert_tol: float = 1e-4) -> SStationarityReport:
    """Evaluate stationarity, feasibility, complementarity and sign rules.

    The x-block is measured as the projected gradient ``x - P(x - grad)`` over
    the native x-box, which equals the implicit stationarity residual.
    """
    x = np.asarray(x, dtype=float).ravel()
    gx, gy, glam, c = _blocks(p, x, sol, mults)
    rx = inner_mod.projected_gradient(x, gx, p.x_bounds[:, 0], p.x_bounds[:, 1])
    residuals = (_inf(rx), _inf(gy), _inf(glam))

    s = c.shape[0]
    plus = tuple(int(i) for i in sol.active_set)
    zero = tuple(int(i) for i in sol.biactive)
    minus = tuple(i for i in range(s) if i not in plus and i not in zero)
    pi, xi = mults.pi, mults.xi
    ok, strict = [], []
    for i in range(s):
        if i in plus:
            ok.append(abs(xi[i]) <= cert_tol)
            strict.append(abs(xi[i]) <= cert_tol and pi[i] >= -cert_tol)
        elif i in minus:
            ok.append(abs(pi[i]) <= cert_tol)
            strict.append(abs(pi[i]) <= cert_tol and xi[i] >= -cert_tol)
        else:
            both = pi[i] >= -cert_tol and xi[i] >= -cert_tol
            ok.append(both)
            strict.append(both)

    G = np.array([value(fn, x, sol.y) for fn in p.G])
    lam = np.asarray(sol.lam, dtype=float)
    feas = max(_inf(np.maximum(G, 0.0)), _inf(np.maximum(c, 0.0)),
               _inf(np.maximum(-lam, 0.0)), _inf(np.maximum(-mults.mu, 0.0)))
    comp = max(_inf(lam * c), _inf(mults.mu * G) if G.size else 0.0)

    notes = []
    neg_pi = [i for i in plus if ok[i] and not strict[i]]
    neg_xi = [i for i in minus if ok[i] and not strict[i]]
    if neg_pi:
        notes.append(f"pi < 0 on strictly active constraints {neg_pi}: x is at a kink of the "
                     "implicit objective, where only one-sided stationarity holds")
    if neg_xi:
        notes.append(f"xi < 0 on inactive constraints {neg_xi}")
    if zero:
        verdict = DEGENERATE
        notes.append(f"biactive lower constraints {list(zero)}")
    elif max(residuals) <= cert_tol and all(ok) and feas <= cert_tol and comp <= cert_tol:
        verdict = S_STATIONARY
    else:
        verdict = VIOLATED
    return SStationarityReport(verdict=verdict, stationarity_residuals=residuals,
                               index_sets=(plus, minus, zero), sign_rule_ok=tuple(ok),
                               strict_sign_ok=tuple(strict), feasibility=feas,
                               complementarity=comp, multipliers=mults, cert_tol=cert_tol,
                               implicit_stationarity=residuals[0], notes=notes)


def _degenerate_report(p, sol, cert_tol, reason):
    s = len(p.lower_constraints)
    nan = float("nan")
    plus = tuple(int(i) for i in sol.active_set)
    zero = tuple(int(i) for i in sol.biactive)
    minus = tuple(i for i in range(s) if i not in plus and i not in zero)
    return SStationarityReport(verdict=DEGENERATE, stationarity_residuals=(nan, nan, nan),
                               index_sets=(plus, minus, zero), sign_rule_ok=(False,) * s,
                               strict_sign_ok=(False,) * s, cert_tol=cert_tol, notes=[reason])


def certify_point(p, x, sol, mu=None, cert_tol: float = 1e-4) -> SStationarityReport:
    """Adjoint solve, multiplier recovery and check at one point.

    A biactive lower solution is handled one-sidedly so the multipliers are
    still reported, but the verdict is ``degenerate``.
    """
    x = np.asarray(x, dtype=float).ravel()
    try:
        nu, w = solve_adjoint(p, x, sol, mu, one_sided=True)
    except (SingularSystemError, DegenerateError) as exc:
        return _degenerate_report(p, sol, cert_tol, str(exc))
    mults = recover_multipliers(sol, nu, w, p, x, mu)
    report = check_s_stationarity(p, x, sol, mults, cert_tol)
    d = lower_derivatives(p, x, sol, one_sided=True)
    M, _ = _system_from(d, sol.lam, p.m, p.n)
    rhs = np.zeros(M.shape[0])
    rhs[:p.m] = -_adjoint_rhs(p, x, sol.y, mults.mu)
    report.adjoint_residual = _inf(M.T @ np.concatenate([nu, w]) - rhs)
    return report


def certify(p, solve_report, cert_tol: float = 1e-4, lower_cfg=None) -> SStationarityReport:
    """Certificate for a finished solve; the lower level is re-solved at its x."""
    state = solve_report.state
    x = np.asarray(state.x, dtype=float)
    sol = solve_lower(p, x, cfg=lower_cfg)
    if not sol.ok:
        s = len(p.lower_constraints)
        nan = float("nan")
        return SStationarityReport(verdict=VIOLATED, stationarity_residuals=(nan, nan, nan),
                                   index_sets=((), tuple(range(s)), ()), sign_rule_ok=(False,) * s,
                                   cert_tol=cert_tol,
                                   notes=[f"lower level not solved at x (status {sol.status})"])
    report = certify_point(p, x, sol, state.mu, cert_tol)
    if state.termination == "stalled":
        report.notes.append("solve ended on the stall criterion; primal accuracy is looser than kkt_tol")
    return report
