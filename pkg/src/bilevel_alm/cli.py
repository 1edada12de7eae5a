"""Command line: ``bilevel-alm {solve,benchmark,scan,list}``.

Exit codes: 0 success, 1 solver failure, 2 usage or input error.
"""

import argparse
import csv
import io
import json
import sys
import time

import numpy as np

from . import benchmarks
from .alm import AlmConfig, multistart
from .errors import InputError, SolverFailure, UnknownProblemError
from .landscape import scan, signature_changes
from .serialization import SCHEMA_VERSION, report_to_dict
from .stationarity import certify

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE"]

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

BENCHMARK_TOL = 1e-3

# flag name -> AlmConfig field
_OVERRIDES = {
    "tol": "kkt_tol",
    "stall_tol": "stall_tol",
    "inner_tol": "inner_tol",
    "rho0": "rho0",
    "gamma": "gamma",
    "feas_factor": "feas_factor",
    "max_outer": "max_outer",
}


class _Usage(Exception):
    """Raised for bad arguments after argparse has accepted them."""


def _g(v):
    return f"{v:.6g}"


def _vec_h(v):
    return "[" + ", ".join(_g(float(a)) for a in np.ravel(v)) + "]"


def _floats(text, what):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise _Usage(f"{what}: expected a comma-separated list of numbers, got {text!r}") from None
    if not all(np.isfinite(vals)):
        raise _Usage(f"{what}: values must be finite")
    return vals


def _add_config_flags(sp):
    g = sp.add_argument_group("solver settings")
    g.add_argument("--tol", type=float, help="KKT tolerance (default 1e-5)")
    g.add_argument("--stall-tol", type=float, help="stall tolerance on x and F (default 1e-5)")
    g.add_argument("--inner-tol", type=float, help="inner projected-gradient tolerance (default 1e-6)")
    g.add_argument("--rho0", type=float, help="initial penalty (default 10)")
    g.add_argument("--gamma", type=float, help="penalty growth factor (default 10)")
    g.add_argument("--feas-factor", type=float, help="required feasibility reduction (default 0.5)")
    g.add_argument("--max-outer", type=int, help="outer iteration limit (default 100)")


def _add_output_flags(sp, csv_help):
    sp.add_argument("--json", action="store_true", help="print JSON instead of text")
    sp.add_argument("--csv", metavar="PATH", help=csv_help)
    sp.add_argument("--no-timing", action="store_true",
                    help="omit wall times so repeated runs give identical output")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bilevel-alm",
        description="Sensitivity-based augmented Lagrangian solver for bilevel programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve one registered problem")
    sp.add_argument("problem", help="registered problem name (see 'list')")
    starts = sp.add_mutually_exclusive_group()
    starts.add_argument("--x0", action="append", metavar="V1,V2,...",
                        help="start point; repeat for several starts (default: the registered start)")
    starts.add_argument("--grid", action="store_true", help="multistart over the default grid")
    _add_config_flags(sp)
    _add_output_flags(sp, "write one row per start to PATH")

    sp = sub.add_parser("benchmark", help="solve the benchmark suite and compare with references")
    sp.add_argument("--only", action="append", metavar="NAME", help="restrict to NAME (repeatable)")
    _add_config_flags(sp)
    _add_output_flags(sp, "write one row per problem to PATH")

    sp = sub.add_parser("scan", help="sample the implicit objective of a one-dimensional problem")
    sp.add_argument("problem")
    sp.add_argument("--points", type=int, default=401, help="number of samples (default 401)")
    sp.add_argument("--range", metavar="LO,HI", help="x interval (default: the x-box)")
    sp.add_argument("--csv", metavar="PATH", help="write the CSV to PATH instead of stdout")
    sp.add_argument("--json", action="store_true", help="print the samples as JSON")

    sp = sub.add_parser("list", help="list registered problems")
    sp.add_argument("--json", action="store_true")
    return parser


def _config(args):
    changes = {field: getattr(args, flag) for flag, field in _OVERRIDES.items()
               if getattr(args, flag, None) is not None}
    try:
        return AlmConfig().replace(**changes)
    except InputError as exc:
        raise _Usage(str(exc)) from None


def _entry(name):
    entry = benchmarks.get(name)
    if not entry.solvable:
        raise _Usage(f"{name} cannot be solved: {entry.dispute_reason}")
    return entry


def _write_csv(path, header, rows, out):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path in (None, "-"):
        out.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _dump(doc, out):
    out.write(json.dumps(doc, indent=2))
    out.write("\n")


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def cmd_solve(args, out):
    entry = _entry(args.problem)
    p = entry.solver_problem()
    cfg = _config(args)
    if args.grid:
        try:
            starts = benchmarks.default_multistart_grid(entry)
        except InputError as exc:
            raise _Usage(str(exc)) from None
    elif args.x0:
        starts = [_floats(s, "--x0") for s in args.x0]
        for s in starts:
            if len(s) != p.n:
                raise _Usage(f"--x0 has {len(s)} values, {entry.name} has n={p.n}")
    else:
        starts = [list(entry.x0_best)]
    try:
        result = multistart(p, starts, cfg)
    except SolverFailure as exc:
        sys.stderr.write(f"solver failure on {entry.name}:\n{exc}\n")
        return EXIT_FAILURE
    best = result.best
    best.certificate = certify(p, best, lower_cfg=cfg.lower)
    timing = not args.no_timing

    if args.csv:
        rows = []
        for i, r in enumerate(result.reports):
            rows.append([i, " ".join(repr(float(v)) for v in r.x0),
                         " ".join(repr(float(v)) for v in r.state.x), repr(float(r.F_value)),
                         r.termination, r.state.outer_iter, repr(float(r.state.residuals.overall)),
                         int(i == result.best_index)]
                        + ([repr(float(r.wall_time))] if timing else []))
        header = ["start", "x0", "x", "F", "termination", "outer_iterations", "kkt_residual",
                  "best"] + (["wall_time"] if timing else [])
        _write_csv(args.csv, header, rows, out)
    if args.json:
        _dump({
            "schema_version": SCHEMA_VERSION,
            "command": "solve",
            "problem": entry.name,
            "best_index": result.best_index,
            "best": report_to_dict(best, timing),
            "reports": [report_to_dict(r, timing) for r in result.reports],
        }, out)
    elif not args.csv:
        _print_solve(entry, result, timing, out)
    return EXIT_OK if best.success else EXIT_FAILURE


def _print_solve(entry, result, timing, out):
    best = result.best
    s = best.state
    r = s.residuals
    out.write(f"problem      {entry.name}  (n={entry.n}, m={entry.m})\n")
    out.write(f"start        {_vec_h(best.x0)}\n")
    out.write(f"termination  {s.termination}" + (f"  ({s.message})" if s.message else "") + "\n")
    out.write(f"x            {_vec_h(s.x)}\n")
    out.write(f"y            {_vec_h(s.y)}\n")
    out.write(f"F            {_g(best.F_value)}   (reference {_g(entry.F_ref)})\n")
    if s.mu.size:
        out.write(f"mu           {_vec_h(s.mu)}\n")
    out.write(f"residuals    stat {_g(r.stat)}  feas {_g(r.feas)}  comp {_g(r.comp)}\n")
    out.write(f"outer iters  {s.outer_iter}\n")
    if timing:
        out.write(f"wall time    {_g(best.wall_time)} s\n")
    c = best.certificate
    if c is not None:
        out.write(f"certificate  {c.verdict}  (residuals {_vec_h(c.stationarity_residuals)})\n")
        for note in c.notes:
            out.write(f"             {note}\n")
    if len(result.reports) > 1:
        out.write(f"\n{len(result.reports)} starts:\n")
        for i, rep in enumerate(result.reports):
            mark = "*" if i == result.best_index else " "
            out.write(f" {mark} x0={_vec_h(rep.x0)}  x={_vec_h(rep.state.x)}  "
                      f"F={_g(rep.F_value)}  {rep.termination}\n")


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def cmd_benchmark(args, out):
    cfg = _config(args)
    entries = benchmarks.list_entries()
    if args.only:
        for name in args.only:
            benchmarks.get(name)  # unknown names are usage errors
        entries = [e for e in entries if e.name in set(args.only)]
    excluded = sorted(e.name for e in entries if not e.solvable)
    entries = sorted((e for e in entries if e.solvable), key=lambda e: e.name)
    if not entries:
        raise _Usage("no solvable problem matches the filter"
                     + (f" (excluded: {', '.join(excluded)})" if excluded else ""))
    timing = not args.no_timing
    rows = []
    for e in entries:
        t0 = time.perf_counter()
        try:
            rep = multistart(e.solver_problem(), [list(e.x0_best)], cfg).best
            F, status, outer = rep.F_value, rep.termination, rep.state.outer_iter
        except SolverFailure as exc:
            F, status, outer = float("nan"), "failed", 0
            sys.stderr.write(f"{e.name}: {exc}\n")
        elapsed = time.perf_counter() - t0
        ok = bool(np.isfinite(F) and abs(F - e.F_ref) <= BENCHMARK_TOL)
        rows.append({"name": e.name, "n": e.n, "m": e.m, "x0": [float(v) for v in e.x0_best],
                     "F_ref": float(e.F_ref), "F": float(F), "termination": status,
                     "outer_iterations": int(outer), "pass": ok,
                     "wall_time": elapsed if timing else None})

    if args.csv:
        header = ["name", "n", "m", "x0", "F_ref", "F", "abs_error", "termination",
                  "outer_iterations", "pass"] + (["wall_time"] if timing else [])
        _write_csv(args.csv, header, [
            [r["name"], r["n"], r["m"], " ".join(repr(v) for v in r["x0"]), repr(r["F_ref"]),
             repr(r["F"]), repr(abs(r["F"] - r["F_ref"])), r["termination"],
             r["outer_iterations"], int(r["pass"])]
            + ([repr(r["wall_time"])] if timing else []) for r in rows], out)
    if args.json:
        _dump({"schema_version": SCHEMA_VERSION, "command": "benchmark", "tolerance": BENCHMARK_TOL,
               "rows": rows, "excluded": excluded}, out)
    elif not args.csv:
        out.write(f"{'problem':<26} {'(n,m)':<6} {'x0':<18} {'F_ref':>9} {'F':>12} "
                  f"{'outer':>5} {'status':<8}" + (f" {'time[s]':>8}" if timing else "") + "  ok\n")
        for r in rows:
            out.write(f"{r['name']:<26} {'(%d,%d)' % (r['n'], r['m']):<6} {_vec_h(r['x0']):<18} "
                      f"{_g(r['F_ref']):>9} {_g(r['F']):>12} {r['outer_iterations']:>5} "
                      f"{r['termination']:<8}"
                      + (f" {r['wall_time']:>8.2f}" if timing else "")
                      + ("  yes" if r["pass"] else "  NO") + "\n")
        if excluded:
            out.write(f"excluded (disputed definition): {', '.join(excluded)}\n")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAILURE


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


def cmd_scan(args, out):
    entry = _entry(args.problem)
    p = entry.solver_problem()
    if p.n != 1:
        raise _Usage(f"scan is one-dimensional; {entry.name} has n={p.n}")
    lo = hi = None
    if args.range:
        vals = _floats(args.range, "--range")
        if len(vals) != 2:
            raise _Usage("--range expects LO,HI")
        lo, hi = vals
    try:
        rows = scan(p, lo, hi, args.points)
    except InputError as exc:
        raise _Usage(str(exc)) from None
    m = p.m
    if args.json:
        _dump({"schema_version": SCHEMA_VERSION, "command": "scan", "problem": entry.name,
               "rows": [{"x": r.x, "y": list(r.y), "F": r.F, "active_set": r.signature,
                         "dy_dx": list(r.dy_dx)} for r in rows],
               "signature_changes": [list(c) for c in signature_changes(rows)]}, out)
        return EXIT_OK
    header = (["x"] + [f"y{i + 1}" for i in range(m)] + ["F", "active_set"]
              + [f"dy{i + 1}_dx" for i in range(m)])
    body = [[repr(r.x)] + [repr(v) for v in r.y] + [repr(r.F), r.signature]
            + [repr(v) for v in r.dy_dx] for r in rows]
    _write_csv(args.csv, header, body, out)
    if args.csv:
        feasible = [r for r in rows if r.feasible]
        out.write(f"wrote {len(rows)} rows to {args.csv}\n")
        for a, b, s1, s2 in signature_changes(rows):
            out.write(f"active set {s1} -> {s2} between x={_g(a)} and x={_g(b)}\n")
        if feasible:
            best = min(feasible, key=lambda r: r.F)
            out.write(f"minimum sampled F={_g(best.F)} at x={_g(best.x)}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# list
# ---------------------------------------------------------------------------


def cmd_list(args, out):
    entries = benchmarks.list_entries()
    if args.json:
        _dump({"schema_version": SCHEMA_VERSION, "command": "list",
               "problems": benchmarks.export()}, out)
        return EXIT_OK
    for e in entries:
        flags = []
        if e.needs_lp_regularization:
            flags.append("regularized lower level")
        if not e.solvable:
            flags.append("disputed: " + e.dispute_reason)
        out.write(f"{e.name:<26} ({e.n},{e.m})  x0={_vec_h(e.x0_best):<18} F_ref={_g(e.F_ref)}"
                  + (f"  [{'; '.join(flags)}]" if flags else "") + "\n")
    return EXIT_OK


_COMMANDS = {"solve": cmd_solve, "benchmark": cmd_benchmark, "scan": cmd_scan, "list": cmd_list}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return _COMMANDS[args.command](args, out)
    except UnknownProblemError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (_Usage, InputError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
