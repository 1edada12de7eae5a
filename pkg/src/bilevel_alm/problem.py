"""Optimistic bilevel problem data, validation and structural transforms."""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .autodiff import DifferentiableFunction, as_function
from .errors import InputError

__all__ = [
    "BilevelProblem",
    "RegularizationConfig",
    "ValidationReport",
    "validate",
    "regularize_linear_lower",
    "boxes_to_constraints",
]


def _bounds_array(bounds, size, label):
    if bounds is None:
        arr = np.tile([-np.inf, np.inf], (size, 1))
    else:
        arr = np.array(bounds, dtype=float)
        if arr.ndim == 1 and arr.shape[0] == 2 and size == 1:
            arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError(f"{label} must be a sequence of (lo, hi) pairs")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BilevelProblem:
    """min_x F(x, y) s.t. G(x, y) <= 0, x in X, y solves min_y {f : g <= 0, y in Y}.

    Plain callables passed for ``F``, ``f``, ``G`` and ``g`` are wrapped as
    :class:`~bilevel_alm.autodiff.DifferentiableFunction` with arity
    ``(n, m)``.  Bounds are ``(lo, hi)`` pairs with ``+-inf`` for "unbounded".
    Construction never rejects a problem; call :func:`validate`.
    """

    n: int
    m: int
    F: DifferentiableFunction
    f: DifferentiableFunction
    G: Sequence[DifferentiableFunction] = ()
    g: Sequence[DifferentiableFunction] = ()
    x_bounds: np.ndarray = None
    y_bounds: np.ndarray = None
    name: str = "bilevel"
    linear_lower: bool = False

    def __post_init__(self):
        n, m = int(self.n), int(self.m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "F", as_function(self.F, n, m, "F"))
        object.__setattr__(self, "f", as_function(self.f, n, m, "f"))
        object.__setattr__(self, "G", tuple(
            as_function(fn, n, m, f"G{i + 1}") for i, fn in enumerate(self.G)))
        object.__setattr__(self, "g", tuple(
            as_function(fn, n, m, f"g{i + 1}") for i, fn in enumerate(self.g)))
        object.__setattr__(self, "x_bounds", _bounds_array(self.x_bounds, max(n, 0), "x_bounds"))
        object.__setattr__(self, "y_bounds", _bounds_array(self.y_bounds, max(m, 0), "y_bounds"))

    @property
    def r(self):
        return len(self.G)

    @property
    def s(self):
        return len(self.g)

    @cached_property
    def lower_constraints(self):
        """``g`` followed by one constraint per finite y bound.

        The lower solver works on this list, so multipliers and active sets
        index into it.
        """
        return self.g + _box_constraints(self.y_bounds, self.n, self.m, block="y")

    def clip_x(self, x):
        return np.clip(np.asarray(x, dtype=float), self.x_bounds[:, 0], self.x_bounds[:, 1])

    def replace(self, **changes):
        fields = dict(n=self.n, m=self.m, F=self.F, f=self.f, G=self.G, g=self.g,
                      x_bounds=self.x_bounds, y_bounds=self.y_bounds, name=self.name,
                      linear_lower=self.linear_lower)
        fields.update(changes)
        return BilevelProblem(**fields)


@dataclass(frozen=True)
class RegularizationConfig:
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    info: list = field(default_factory=list)

    @property
    def valid(self):
        return not self.errors

    def __bool__(self):
        return self.valid


def _probe(fn, n, m):
    try:
        fn(np.zeros(n).tolist(), np.zeros(m).tolist())
    except (IndexError, TypeError) as exc:
        return str(exc)
    except Exception:  # noqa: BLE001 - domain errors at the origin are not arity errors
        return None
    return None


def validate(p: BilevelProblem) -> ValidationReport:
    """Report dimension mismatches, reversed bounds and arity problems."""
    report = ValidationReport()
    if p.n < 1:
        report.errors.append(f"n must be >= 1, got {p.n}")
    if p.m < 1:
        report.errors.append(f"m must be >= 1, got {p.m}")
    for label, bounds, size in (("x", p.x_bounds, p.n), ("y", p.y_bounds, p.m)):
        if bounds.shape[0] != size:
            report.errors.append(f"{label}_bounds has {bounds.shape[0]} pairs, expected {size}")
            continue
        for i, (lo, hi) in enumerate(bounds):
            if np.isnan(lo) or np.isnan(hi) or lo > hi:
                report.errors.append(f"{label}_bounds[{i}] = ({lo}, {hi}) has lo > hi")
    if report.errors:
        return report
    groups = [("F", [p.F]), ("f", [p.f]), ("G", list(p.G)), ("g", list(p.g))]
    for label, fns in groups:
        for i, fn in enumerate(fns):
            tag = label if label in ("F", "f") else f"{label}[{i}]"
            if (fn.n, fn.m) != (p.n, p.m):
                report.errors.append(
                    f"{tag} declares arity ({fn.n}, {fn.m}), problem is ({p.n}, {p.m})")
                continue
            problem = _probe(fn, p.n, p.m)
            if problem is not None:
                report.errors.append(f"{tag} cannot be evaluated with (n, m) = ({p.n}, {p.m}): {problem}")
    if not p.G:
        report.info.append("no upper-level constraints G")
    if not p.g:
        report.info.append("no lower-level constraints g")
    return report


def regularize_linear_lower(p: BilevelProblem, cfg: RegularizationConfig = None,
                            epsilon: float = None) -> BilevelProblem:
    """Add ``epsilon * ||y||^2`` to a lower objective the caller declares linear in y."""
    if epsilon is not None:
        cfg = RegularizationConfig(epsilon)
    cfg = cfg or RegularizationConfig()
    eps = cfg.epsilon
    base = p.f

    def regularized(x, y):
        acc = base(x, y)
        for yi in y:
            acc = acc + eps * (yi * yi)
        return acc

    f = DifferentiableFunction(regularized, p.n, p.m, f"{base.name}+eps|y|^2")
    return p.replace(f=f, linear_lower=False)


def _box_constraints(bounds, n, m, block):
    out = []
    for i, (lo, hi) in enumerate(bounds):
        if np.isfinite(lo):
            out.append(DifferentiableFunction(_lower_bound(block, i, float(lo)), n, m,
                                              f"{lo:g}-{block}{i + 1}"))
        if np.isfinite(hi):
            out.append(DifferentiableFunction(_upper_bound(block, i, float(hi)), n, m,
                                              f"{block}{i + 1}-{hi:g}"))
    return tuple(out)


def _lower_bound(block, i, lo) -> Callable:
    if block == "x":
        return lambda x, y: lo - x[i]
    return lambda x, y: lo - y[i]


def _upper_bound(block, i, hi) -> Callable:
    if block == "x":
        return lambda x, y: x[i] - hi
    return lambda x, y: y[i] - hi


def boxes_to_constraints(p: BilevelProblem, x: bool = True, y: bool = True) -> BilevelProblem:
    """Move finite bounds into ``G`` (x-bounds) and ``g`` (y-bounds)."""
    changes = {}
    if x:
        changes["G"] = tuple(p.G) + _box_constraints(p.x_bounds, p.n, p.m, "x")
        changes["x_bounds"] = None
    if y:
        changes["g"] = tuple(p.g) + _box_constraints(p.y_bounds, p.n, p.m, "y")
        changes["y_bounds"] = None
    return p.replace(**changes)
