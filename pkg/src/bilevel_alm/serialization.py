"""JSON-ready dictionaries for solve reports and certificates.

Floats are stored as Python floats, so ``json.dumps`` writes them in the
shortest decimal form that reads back to the same double.  Non-finite
values use the ``NaN`` / ``Infinity`` tokens accepted by ``json.loads``.
"""

import numpy as np

from .alm import AlmState, KktResiduals, SolveReport, TraceRecord
from .stationarity import MpccMultipliers, SStationarityReport

__all__ = ["SCHEMA_VERSION", "report_to_dict", "report_from_dict",
           "certificate_to_dict", "certificate_from_dict"]

SCHEMA_VERSION = 1


def _vec(v):
    return [float(a) for a in np.ravel(v)] if v is not None else None


def _arr(v):
    return np.array(v, dtype=float) if v is not None else None


def _residuals_to_dict(r: KktResiduals):
    return {"stat": float(r.stat), "feas": float(r.feas), "comp": float(r.comp),
            "overall": float(r.overall)}


def _residuals_from_dict(d):
    return KktResiduals(stat=d["stat"], feas=d["feas"], comp=d["comp"])


def _trace_to_dict(t: TraceRecord):
    return {
        "iteration": int(t.iteration),
        "x": _vec(t.x),
        "y": _vec(t.y),
        "F": float(t.F),
        "mu": _vec(t.mu),
        "rho": float(t.rho),
        "rho_next": float(t.rho_next),
        "residuals": _residuals_to_dict(t.residuals),
        "inner_iterations": int(t.inner_iterations),
        "inner_status": t.inner_status,
        "feas_test_fired": bool(t.feas_test_fired),
        "penalty_retry": bool(t.penalty_retry),
        "reduced_sensitivity": bool(t.reduced_sensitivity),
        "inner_history": [float(v) for v in t.inner_history],
    }


def _trace_from_dict(d):
    return TraceRecord(
        iteration=d["iteration"], x=_arr(d["x"]), y=_arr(d["y"]), F=d["F"], mu=_arr(d["mu"]),
        rho=d["rho"], rho_next=d["rho_next"], residuals=_residuals_from_dict(d["residuals"]),
        inner_iterations=d["inner_iterations"], inner_status=d["inner_status"],
        feas_test_fired=d["feas_test_fired"], penalty_retry=d["penalty_retry"],
        reduced_sensitivity=d["reduced_sensitivity"], inner_history=list(d["inner_history"]))


def certificate_to_dict(c: SStationarityReport):
    if c is None:
        return None
    m = c.multipliers
    return {
        "verdict": c.verdict,
        "stationarity_residuals": [float(v) for v in c.stationarity_residuals],
        "index_sets": {"active": list(c.index_sets[0]), "inactive": list(c.index_sets[1]),
                       "biactive": list(c.index_sets[2])},
        "sign_rule_ok": [bool(v) for v in c.sign_rule_ok],
        "strict_sign_ok": [bool(v) for v in c.strict_sign_ok],
        "feasibility": float(c.feasibility),
        "complementarity": float(c.complementarity),
        "adjoint_residual": float(c.adjoint_residual),
        "implicit_stationarity": float(c.implicit_stationarity),
        "cert_tol": float(c.cert_tol),
        "multipliers": None if m is None else {
            "mu": _vec(m.mu), "nu": _vec(m.nu), "pi": _vec(m.pi), "xi": _vec(m.xi)},
        "notes": list(c.notes),
    }


def certificate_from_dict(d):
    if d is None:
        return None
    m = d["multipliers"]
    sets = d["index_sets"]
    return SStationarityReport(
        verdict=d["verdict"],
        stationarity_residuals=tuple(d["stationarity_residuals"]),
        index_sets=(tuple(sets["active"]), tuple(sets["inactive"]), tuple(sets["biactive"])),
        sign_rule_ok=tuple(d["sign_rule_ok"]),
        strict_sign_ok=tuple(d["strict_sign_ok"]),
        feasibility=d["feasibility"],
        complementarity=d["complementarity"],
        multipliers=None if m is None else MpccMultipliers(
            mu=_arr(m["mu"]), nu=_arr(m["nu"]), pi=_arr(m["pi"]), xi=_arr(m["xi"])),
        adjoint_residual=d["adjoint_residual"],
        implicit_stationarity=d["implicit_stationarity"],
        cert_tol=d["cert_tol"],
        notes=list(d["notes"]),
    )


def report_to_dict(report: SolveReport, timing: bool = True):
    """Every field of ``report``; ``wall_time`` is None when ``timing`` is False."""
    s = report.state
    return {
        "problem": report.problem,
        "x0": _vec(report.x0),
        "x": _vec(s.x),
        "y": _vec(s.y),
        "F": float(report.F_value),
        "mu": _vec(s.mu),
        "rho": float(s.rho),
        "termination": s.termination,
        "message": s.message,
        "outer_iterations": int(s.outer_iter),
        "residuals": _residuals_to_dict(s.residuals),
        "feas_history": [float(v) for v in s.feas_history],
        "wall_time": float(report.wall_time) if timing else None,
        "trace": [_trace_to_dict(t) for t in report.trace],
        "certificate": certificate_to_dict(report.certificate),
    }


def report_from_dict(d) -> SolveReport:
    state = AlmState(x=_arr(d["x"]), y=_arr(d["y"]), mu=_arr(d["mu"]), rho=d["rho"],
                     residuals=_residuals_from_dict(d["residuals"]),
                     outer_iter=d["outer_iterations"], feas_history=list(d["feas_history"]),
                     termination=d["termination"], message=d["message"])
    wall = d["wall_time"]
    return SolveReport(problem=d["problem"], x0=_arr(d["x0"]), state=state, F_value=d["F"],
                       trace=[_trace_from_dict(t) for t in d["trace"]],
                       wall_time=float("nan") if wall is None else wall,
                       certificate=certificate_from_dict(d["certificate"]))
