"""Second-order forward-mode automatic differentiation.

A :class:`Scalar2` carries a value, its gradient and its Hessian with respect
to a set of seeded directions.  User functions are plain Python callables
``fn(x, y)`` that index into ``x`` and ``y`` and combine the entries with
ordinary arithmetic and the elementary functions exported here (``exp``,
``log``, ``sqrt``, ...).  The same callable runs on floats for cheap value-only
evaluation and on :class:`Scalar2` inputs when derivatives are needed.

Problem sizes are tiny (a handful of variables per level), so every
derivative is obtained from a single forward sweep over all seeded directions.
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import EvaluationError, InputError

__all__ = [
    "Scalar2",
    "DifferentiableFunction",
    "as_function",
    "seed",
    "evaluate",
    "value",
    "gradient",
    "hessian",
    "jacobian",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "tanh",
]


class Scalar2:
    """Value with exact first and second derivatives over ``k`` directions.

    Arrays are treated as immutable; every operation allocates new ones.
    """

    __slots__ = ("value", "first", "second")
    __array_ufunc__ = None  # make numpy scalars defer to the reflected ops

    def __init__(self, value, first, second):
        self.value = float(value)
        self.first = first
        self.second = second

    @classmethod
    def constant(cls, value, k):
        return cls(value, np.zeros(k), np.zeros((k, k)))

    @property
    def size(self):
        return self.first.shape[0]

    def __repr__(self):
        return f"Scalar2({self.value!r}, first={self.first!r})"

    def __float__(self):
        return self.value

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Scalar2):
            return Scalar2(self.value + other.value, self.first + other.first,
                           self.second + other.second)
        return Scalar2(self.value + other, self.first, self.second)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Scalar2):
            return Scalar2(self.value - other.value, self.first - other.first,
                           self.second - other.second)
        return Scalar2(self.value - other, self.first, self.second)

    def __rsub__(self, other):
        return Scalar2(other - self.value, -self.first, -self.second)

    def __neg__(self):
        return Scalar2(-self.value, -self.first, -self.second)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Scalar2):
            g, H = _kernels.hd_mul(self.value, self.first, self.second,
                                   other.value, other.first, other.second)
            return Scalar2(self.value * other.value, g, H)
        return Scalar2(self.value * other, self.first * other, self.second * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Scalar2):
            out = self * other._reciprocal()
            out.value = self.value / other.value  # keep the value bit-identical to float division
            return out
        return Scalar2(self.value / other, self.first / other, self.second / other)

    def __rtruediv__(self, other):
        out = self._reciprocal() * other
        out.value = other / self.value
        return out

    def _reciprocal(self):
        v = self.value
        if v == 0.0:
            raise EvaluationError("division by zero in differentiated expression")
        inv = 1.0 / v
        return _unary(self, inv, -inv * inv, 2.0 * inv * inv * inv)

    def __pow__(self, power):
        if isinstance(power, Scalar2):
            return exp(power * log(self))
        if power == 2:
            return self * self
        if power == 1:
            return self
        if power == 0:
            return Scalar2.constant(1.0, self.size)
        v = self.value
        p = float(power)
        try:
            return _unary(self, v ** p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))
        except (ZeroDivisionError, OverflowError) as exc:
            raise EvaluationError(f"power {p} undefined at {v}") from exc

    def __rpow__(self, base):
        return exp(self * math.log(base))

    def __abs__(self):
        sign = 1.0 if self.value >= 0.0 else -1.0
        return Scalar2(abs(self.value), sign * self.first, sign * self.second)

    # comparisons act on the value channel so user code may branch
    def __lt__(self, other):
        return self.value < float(other)

    def __le__(self, other):
        return self.value <= float(other)

    def __gt__(self, other):
        return self.value > float(other)

    def __ge__(self, other):
        return self.value >= float(other)


def _unary(a, v, d1, d2):
    g, H = _kernels.hd_unary(d1, d2, a.first, a.second)
    return Scalar2(v, g, H)


def _elementary(name, fn, d1, d2):
    def apply(t):
        if isinstance(t, Scalar2):
            try:
                v = fn(t.value)
                return _unary(t, v, d1(t.value, v), d2(t.value, v))
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise EvaluationError(f"{name}({t.value}) is undefined") from exc
        try:
            return fn(float(t))
        except (ValueError, OverflowError) as exc:
            raise EvaluationError(f"{name}({t}) is undefined") from exc

    apply.__name__ = name
    return apply


exp = _elementary("exp", math.exp, lambda t, v: v, lambda t, v: v)
log = _elementary("log", math.log, lambda t, v: 1.0 / t, lambda t, v: -1.0 / (t * t))
sqrt = _elementary("sqrt", math.sqrt, lambda t, v: 0.5 / v, lambda t, v: -0.25 / (v * t))
sin = _elementary("sin", math.sin, lambda t, v: math.cos(t), lambda t, v: -v)
cos = _elementary("cos", math.cos, lambda t, v: -math.sin(t), lambda t, v: -v)
tanh = _elementary("tanh", math.tanh, lambda t, v: 1.0 - v * v,
                   lambda t, v: -2.0 * v * (1.0 - v * v))


@dataclass(frozen=True)
class DifferentiableFunction:
    """A scalar function of ``(x, y)`` with declared arity ``(n, m)``."""

    func: Callable
    n: int
    m: int
    name: str = ""

    def __call__(self, x, y):
        return self.func(x, y)


def as_function(fn, n, m, name=""):
    """Wrap a bare callable; pass through an existing :class:`DifferentiableFunction`."""
    if isinstance(fn, DifferentiableFunction):
        return fn
    if not callable(fn):
        raise InputError(f"expected a callable, got {type(fn).__name__}")
    return DifferentiableFunction(fn, n, m, name or getattr(fn, "__name__", ""))


def _check_point(fn, x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != fn.n or y.shape[0] != fn.m:
        raise InputError(
            f"{fn.name or 'function'} expects (n, m) = ({fn.n}, {fn.m}); "
            f"got x of length {x.shape[0]} and y of length {y.shape[0]}"
        )
    return x, y


def seed(values, offset, k):
    """Independent variables ``values`` occupying directions ``offset..`` of ``k``."""
    out = []
    for i, v in enumerate(values):
        g = np.zeros(k)
        g[offset + i] = 1.0
        out.append(Scalar2(v, g, np.zeros((k, k))))
    return out


def _run(fn, xs, ys):
    try:
        out = fn(xs, ys)
    except (ZeroDivisionError, OverflowError) as exc:
        raise EvaluationError(f"{fn.name or 'function'}: {exc}") from exc
    return out


def evaluate(fn, x, y, wrt="xy"):
    """Evaluate ``fn`` with derivatives over the block(s) named by ``wrt``.

    Returns ``(value, gradient, hessian)`` where derivative directions are
    ordered x first, then y.  ``wrt`` is one of ``"x"``, ``"y"``, ``"xy"``.
    """
    x, y = _check_point(fn, x, y)
    n, m = x.shape[0], y.shape[0]
    if wrt == "x":
        k = n
        xs, ys = seed(x, 0, k), y.tolist()
    elif wrt == "y":
        k = m
        xs, ys = x.tolist(), seed(y, 0, k)
    elif wrt == "xy":
        k = n + m
        xs, ys = seed(x, 0, k), seed(y, n, k)
    else:
        raise InputError(f"wrt must be 'x', 'y' or 'xy', got {wrt!r}")
    out = _run(fn, xs, ys)
    if not isinstance(out, Scalar2):
        out = Scalar2.constant(float(out), k)
    v, g, H = out.value, out.first, out.second
    if not (math.isfinite(v) and np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise EvaluationError(
            f"{fn.name or 'function'} is not finite at x={x.tolist()}, y={y.tolist()}"
        )
    return v, g, H


def value(fn, x, y):
    """Plain float evaluation, no derivative channels."""
    x, y = _check_point(fn, x, y)
    out = _run(fn, x.tolist(), y.tolist())
    v = float(out)
    if not math.isfinite(v):
        raise EvaluationError(
            f"{fn.name or 'function'} is not finite at x={x.tolist()}, y={y.tolist()}"
        )
    return v


def gradient(fn: DifferentiableFunction, x, y, wrt: str = "x") -> np.ndarray:
    """Exact partial gradient with respect to the ``"x"`` or ``"y"`` block."""
    if wrt not in ("x", "y"):
        raise InputError(f"wrt must be 'x' or 'y', got {wrt!r}")
    return evaluate(fn, x, y, wrt)[1]


def hessian(fn: DifferentiableFunction, x, y, wrt=("y", "y")) -> np.ndarray:
    """Exact second-derivative block; ``wrt`` is a pair such as ``("y", "x")``.

    ``("y", "x")`` returns the m-by-n matrix of mixed partials
    d^2 fn / dy_i dx_j.
    """
    wrt = tuple(wrt)
    if wrt == ("y", "y"):
        return evaluate(fn, x, y, "y")[2]
    if wrt == ("x", "x"):
        return evaluate(fn, x, y, "x")[2]
    if wrt in (("y", "x"), ("x", "y")):
        H = evaluate(fn, x, y, "xy")[2]
        n = fn.n
        block = H[n:, :n]
        return block if wrt == ("y", "x") else block.T
    raise InputError(f"unsupported block pair {wrt!r}")


def jacobian(fns: Sequence[DifferentiableFunction], x, y, wrt: str = "x") -> np.ndarray:
    """Stack the block gradients of ``fns`` as rows."""
    if wrt not in ("x", "y"):
        raise InputError(f"wrt must be 'x' or 'y', got {wrt!r}")
    fns = list(fns)
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    width = x.shape[0] if wrt == "x" else y.shape[0]
    if not fns:
        return np.zeros((0, width))
    arities = {(fn.n, fn.m) for fn in fns}
    if len(arities) != 1:
        raise InputError(f"functions disagree on arity: {sorted(arities)}")
    return np.array([evaluate(fn, x, y, wrt)[1] for fn in fns]).reshape(len(fns), width)
