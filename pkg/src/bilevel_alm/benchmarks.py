"""Registry of the benchmark suite with reference objective values and starts.

Problem definitions other than ClarkWesterberg1990 are transcriptions of
BOLIB library problems.  Each transcription was checked against its reference
value by a brute-force grid over x with an independent lower-level solve.
Entries whose definition could not be reproduced are kept with their
reference metadata, marked ``disputed`` and carry ``problem=None``; harnesses
skip them and list them.
"""

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, UnknownProblemError
from .problem import BilevelProblem, regularize_linear_lower

__all__ = [
    "BenchmarkEntry",
    "get",
    "list_entries",
    "names",
    "register",
    "default_multistart_grid",
    "export",
]


@dataclass(frozen=True)
class BenchmarkEntry:
    name: str
    dims: tuple
    x0_best: tuple
    F_ref: float
    problem: Optional[BilevelProblem] = None
    extra_starts: tuple = ()
    needs_lp_regularization: bool = False
    sampling_box: Optional[tuple] = None
    disputed: bool = False
    dispute_reason: str = ""
    note: str = ""

    def __post_init__(self):
        if not np.isfinite(self.F_ref):
            raise InputError(f"{self.name}: F_ref must be finite")
        if self.problem is not None and (self.problem.n, self.problem.m) != tuple(self.dims):
            raise InputError(f"{self.name}: dims {self.dims} do not match the problem")
        if len(self.x0_best) != self.dims[0]:
            raise InputError(f"{self.name}: x0_best has the wrong length")

    @property
    def n(self):
        return self.dims[0]

    @property
    def m(self):
        return self.dims[1]

    @property
    def solvable(self):
        return self.problem is not None and not self.disputed

    def solver_problem(self) -> BilevelProblem:
        """The problem handed to the solver, regularized when the lower level is linear."""
        if self.problem is None:
            raise InputError(f"{self.name} has no usable definition: {self.dispute_reason}")
        if self.needs_lp_regularization:
            return regularize_linear_lower(self.problem, epsilon=1e-6)
        return self.problem


# ---------------------------------------------------------------------------
# problem definitions
# ---------------------------------------------------------------------------


def _clark_westerberg_1990():
    return BilevelProblem(
        n=1, m=1,
        F=lambda x, y: (x[0] - 3) ** 2 + (y[0] - 2) ** 2,
        f=lambda x, y: (y[0] - 5) ** 2,
        g=[
            lambda x, y: -2 * x[0] + y[0] - 1,
            lambda x, y: x[0] - 2 * y[0] + 2,
            lambda x, y: x[0] + 2 * y[0] - 14,
        ],
        x_bounds=[(0.0, 8.0)],
        name="ClarkWesterberg1990",
    )


def _aiyoshi_shimizu_1984_ex2():
    # local optimum (25, 30; 5, 10) with F = 5 is the reference; (0, 30; -10, 10) gives F = 0
    return BilevelProblem(
        n=2, m=2,
        F=lambda x, y: 2 * x[0] + 2 * x[1] - 3 * y[0] - 3 * y[1] - 60,
        f=lambda x, y: (y[0] - x[0] + 20) ** 2 + (y[1] - x[1] + 20) ** 2,
        G=[lambda x, y: x[0] + x[1] + y[0] - 2 * y[1] - 40],
        g=[
            lambda x, y: 2 * y[0] - x[0] + 10,
            lambda x, y: 2 * y[1] - x[1] + 10,
        ],
        x_bounds=[(0.0, 50.0), (0.0, 50.0)],
        y_bounds=[(-10.0, 20.0), (-10.0, 20.0)],
        name="AiyoshiShimizu1984Ex2",
    )


def _allende_still_2013():
    return BilevelProblem(
        n=2, m=2,
        F=lambda x, y: x[0] ** 2 - 2 * x[0] + x[1] ** 2 - 2 * x[1] + y[0] ** 2 + y[1] ** 2,
        f=lambda x, y: (y[0] - x[0]) ** 2 + (y[1] - x[1]) ** 2,
        G=[lambda x, y: -x[0], lambda x, y: -x[1]],
        y_bounds=[(0.5, 1.5), (0.5, 1.5)],
        name="AllendeStill2013",
    )


def _bard_1988_ex1():
    # the lower level is infeasible for x < 1; the optimum x = 1 sits on that edge
    return BilevelProblem(
        n=1, m=1,
        F=lambda x, y: (x[0] - 5) ** 2 + (2 * y[0] + 1) ** 2,
        f=lambda x, y: (y[0] - 1) ** 2 - 1.5 * x[0] * y[0],
        G=[lambda x, y: -x[0]],
        g=[
            lambda x, y: -3 * x[0] + y[0] + 3,
            lambda x, y: x[0] - 0.5 * y[0] - 4,
            lambda x, y: x[0] + y[0] - 7,
            lambda x, y: -y[0],
        ],
        name="Bard_1988_ex1",
    )


def _bard_1991_ex1():
    return BilevelProblem(
        n=1, m=2,
        F=lambda x, y: x[0] + y[1],
        f=lambda x, y: 2 * y[0] + x[0] * y[1],
        g=[
            lambda x, y: x[0] - y[0] - y[1] + 4,
            lambda x, y: -y[0],
            lambda x, y: -y[1],
        ],
        x_bounds=[(2.0, 4.0)],
        name="Bard_1991_ex1",
        linear_lower=True,
    )


def _shimizu_aiyoshi_1981_ex2():
    return BilevelProblem(
        n=2, m=2,
        F=lambda x, y: (x[0] - 30) ** 2 + (x[1] - 20) ** 2 - 20 * y[0] + 20 * y[1],
        f=lambda x, y: (x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2,
        G=[
            lambda x, y: 30 - x[0] - 2 * x[1],
            lambda x, y: x[0] + x[1] - 25,
            lambda x, y: x[1] - 15,
        ],
        y_bounds=[(0.0, 10.0), (0.0, 10.0)],
        name="Shimizu_Aiyoshi_1981_ex2",
    )


_UNAVAILABLE = "problem definition not available offline; reference value kept for listing only"


def _builtin_entries():
    return [
        BenchmarkEntry("AiyoshiShimizu1984Ex2", (2, 2), (20.0, 20.0), 5.0,
                       _aiyoshi_shimizu_1984_ex2(),
                       note="the reference is a local optimum with a biactive lower constraint"),
        BenchmarkEntry("AllendeStill2013", (2, 2), (2.0, 2.0), -1.0, _allende_still_2013(),
                       sampling_box=((0.0, 3.0), (0.0, 3.0))),
        BenchmarkEntry("Bard_1988_ex1", (1, 1), (2.0,), 17.0, _bard_1988_ex1(),
                       sampling_box=((0.0, 8.0),)),
        BenchmarkEntry("Bard_1991_ex1", (1, 2), (4.0,), 2.0, _bard_1991_ex1(),
                       needs_lp_regularization=True),
        BenchmarkEntry("Bard_Book_1998", (2, 2), (15.0, 15.0), 0.0,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("ClarkWesterberg1990", (1, 1), (1.7,), 5.0, _clark_westerberg_1990()),
        BenchmarkEntry("DempeEtal2012", (1, 1), (0.9,), -1.0,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("Dempe_Franke_2011_ex42", (2, 2), (-0.9, 0.9), 3.0,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("Dempe_Lohse_2011_ex31a", (2, 2), (-0.4, -0.4), -5.5,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("Dempe_Lohse_2011_ex31b", (3, 3), (4.0, 4.0, 4.0), -12.0,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("FloudasEtal2013", (2, 2), (10.0, 10.0), 0.0,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("Outrata_Cervinka_2009", (2, 2), (-10.0, -1.0), 0.0,
                       disputed=True, dispute_reason=_UNAVAILABLE),
        BenchmarkEntry("Shimizu_Aiyoshi_1981_ex2", (2, 2), (10.0, 1.0), 225.0,
                       _shimizu_aiyoshi_1981_ex2(), sampling_box=((0.0, 30.0), (0.0, 30.0))),
    ]


_REGISTRY = {e.name: e for e in _builtin_entries()}


def get(name) -> BenchmarkEntry:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownProblemError(name, names()) from None


def names():
    return list(_REGISTRY)


def list_entries():
    """Every entry, built-ins first in their fixed order, then registered extras."""
    return list(_REGISTRY.values())


def register(entry: BenchmarkEntry, replace: bool = False):
    """Add a user problem so the CLI and harness can refer to it by name."""
    if entry.name in _REGISTRY and not replace:
        raise InputError(f"{entry.name!r} is already registered")
    _REGISTRY[entry.name] = entry
    return entry


def _sampling_box(entry):
    if entry.sampling_box is not None:
        box = np.array(entry.sampling_box, dtype=float)
    elif entry.problem is not None:
        box = np.array(entry.problem.x_bounds, dtype=float)
    else:
        box = np.full((entry.n, 2), np.nan)
    if box.shape != (entry.n, 2) or not np.all(np.isfinite(box)):
        raise InputError(
            f"{entry.name}: x is unbounded and no sampling box is declared; "
            "give explicit starts instead")
    return box


def default_multistart_grid(entry: BenchmarkEntry, points_per_dim: int = 3):
    """Lattice of ``points_per_dim`` values per coordinate over the sampling box.

    ``x0_best`` is appended when it is not already a lattice point, so the
    grid has at most ``points_per_dim ** n + 1`` starts.  Extra starts
    declared on the entry follow.
    """
    if points_per_dim < 1:
        raise InputError("points_per_dim must be >= 1")
    box = _sampling_box(entry)
    axes = [np.linspace(lo, hi, points_per_dim) if points_per_dim > 1 else np.array([0.5 * (lo + hi)])
            for lo, hi in box]
    grid = [np.array(pt, dtype=float) for pt in itertools.product(*axes)]
    for extra in (entry.x0_best,) + tuple(entry.extra_starts):
        extra = np.array(extra, dtype=float)
        if not any(np.array_equal(extra, g) for g in grid):
            grid.append(extra)
    return grid


def export(path=None):
    """Registry metadata as a JSON-ready list; written to ``path`` when given."""
    rows = []
    for e in list_entries():
        rows.append({
            "name": e.name,
            "n": e.n,
            "m": e.m,
            "x0_best": list(e.x0_best),
            "F_ref": e.F_ref,
            "needs_lp_regularization": e.needs_lp_regularization,
            "disputed": e.disputed,
            "dispute_reason": e.dispute_reason,
            "defined": e.problem is not None,
        })
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    return rows
