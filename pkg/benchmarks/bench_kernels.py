"""Time the numba and numpy kernel backends side by side.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--no-solve]

The kernel table calls each backend directly through
``_kernels.IMPLEMENTATIONS``.  The solve table runs the benchmark suite in a
subprocess per value of BILEVEL_ALM_JIT, since the backend is chosen at
import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from bilevel_alm import _kernels

SOLVE_SNIPPET = """
import time
from bilevel_alm import benchmarks, run, _kernels
t0 = time.perf_counter()
for e in benchmarks.list_entries():
    if e.solvable:
        run(e.solver_problem(), e.x0_best)
print(_kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_cases(rng, n):
    ag, bg = rng.normal(size=(2, n))
    aH, bH = rng.normal(size=(2, n, n))
    S, Y = rng.normal(size=(2, 8, n))
    free = np.ones(n, dtype=bool)
    A = rng.normal(size=(n, n)) + n * np.eye(n)
    b = rng.normal(size=n)
    return {
        "hd_mul": lambda k: k.hd_mul(1.3, ag, aH, -0.4, bg, bH),
        "hd_unary": lambda k: k.hd_unary(0.5, -0.25, ag, aH),
        "lbfgs_direction": lambda k: k.lbfgs_direction(ag, S, Y, free),
        "dense_solve": lambda k: k.dense_solve(A, b),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    backends = sorted(_kernels.IMPLEMENTATIONS)
    print(f"{'kernel':<16} {'size':>4} " + " ".join(f"{b + ' [us]':>12}" for b in backends))
    for n in (3, 6, 12):
        for name, call in kernel_cases(rng, n).items():
            cells = []
            for b in backends:
                impl = _kernels.IMPLEMENTATIONS[b]
                call(impl)  # compile outside the timing
                t = min(timeit.repeat(lambda: call(impl), number=repeat, repeat=5)) / repeat
                cells.append(f"{t * 1e6:>12.2f}")
            print(f"{name:<16} {n:>4} " + " ".join(cells))


def bench_solves():
    print("\nbenchmark suite from the reference starts")
    for flag in ("0", "1"):
        env = dict(os.environ, BILEVEL_ALM_JIT=flag)
        out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"BILEVEL_ALM_JIT={flag}: backend {out[0]:<6} {float(out[1]):.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--no-solve", action="store_true")
    args = ap.parse_args()
    if "numba" not in _kernels.IMPLEMENTATIONS:
        print("numba is not installed; only the numpy backend is available")
    bench_kernels(args.repeat)
    if not args.no_solve:
        bench_solves()


if __name__ == "__main__":
    main()
