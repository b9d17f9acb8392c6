"""Scalar reverse-mode automatic differentiation.

A :class:`Tape` records every operation applied to :class:`Var` nodes in
evaluation order (define-by-run).  ``Tape.backward`` sweeps the list once in
reverse and accumulates adjoints, so gradients of any recorded scalar with
respect to the lifted inputs come out in a single pass.

The module-level math functions (``exp``, ``log``, ...) accept plain floats as
well as ``Var``; on floats they fall through to :mod:`math`.  Model code
written against them runs unchanged with or without a tape, which is what the
score-function estimator and the finite-difference oracles rely on.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Union

__all__ = [
    "DomainError",
    "NonFiniteError",
    "Tape",
    "Var",
    "value_of",
    "exp",
    "log",
    "log1p",
    "expm1",
    "sqrt",
    "tanh",
    "power",
    "vsum",
    "mean",
    "vmax",
    "vmin",
]


class DomainError(ValueError):
    """An elementary op was evaluated outside its domain."""

    def __init__(self, op: str, value: float, message: str = ""):
        self.op = op
        self.value = value
        super().__init__(f"{op}: argument {value!r} outside domain{': ' + message if message else ''}")


class NonFiniteError(ArithmeticError):
    """A recorded value overflowed or became NaN."""

    def __init__(self, op: str, value: float = math.inf):
        self.op = op
        self.value = value
        super().__init__(f"{op}: non-finite result {value!r}")


class Var:
    """A scalar node on a tape."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: float):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def node_id(self) -> int:
        return self.idx

    def __repr__(self) -> str:
        return f"Var(value={self.value!r}, node_id={self.idx})"

    def __float__(self) -> float:
        return float(self.value)

    # binary arithmetic; floats on either side are treated as constants
    def __add__(self, other):
        if isinstance(other, Var):
            _same_tape(self, other)
            return self.tape._push(self.value + other.value, (self.idx, other.idx), (1.0, 1.0))
        return self.tape._push(self.value + other, (self.idx,), (1.0,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            _same_tape(self, other)
            return self.tape._push(self.value - other.value, (self.idx, other.idx), (1.0, -1.0))
        return self.tape._push(self.value - other, (self.idx,), (1.0,))

    def __rsub__(self, other):
        return self.tape._push(other - self.value, (self.idx,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, Var):
            _same_tape(self, other)
            return self.tape._push(
                self.value * other.value, (self.idx, other.idx), (other.value, self.value)
            )
        return self.tape._push(self.value * other, (self.idx,), (float(other),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            _same_tape(self, other)
            d = other.value
            if d == 0.0:
                raise DomainError("div", d, "zero denominator")
            q = self.value / d
            return self.tape._push(q, (self.idx, other.idx), (1.0 / d, -q / d))
        if other == 0:
            raise DomainError("div", float(other), "zero denominator")
        return self.tape._push(self.value / other, (self.idx,), (1.0 / other,))

    def __rtruediv__(self, other):
        d = self.value
        if d == 0.0:
            raise DomainError("div", d, "zero denominator")
        q = other / d
        return self.tape._push(q, (self.idx,), (-q / d,))

    def __neg__(self):
        return self.tape._push(-self.value, (self.idx,), (-1.0,))

    def __pos__(self):
        return self

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)


Scalar = Union[Var, float]


def _same_tape(a: Var, b: Var) -> None:
    if a.tape is not b.tape:
        raise ValueError("operands live on different tapes")


class Tape:
    """Append-only record of scalar operations.

    Nodes are stored as parallel lists of values, parent indices and local
    partial derivatives.  Parents always precede children, so a reverse sweep
    over indices is a valid topological order.
    """

    def __init__(self):
        self.values: list[float] = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.roots: list[int] = []

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, value: float, parents: tuple, partials: tuple) -> Var:
        idx = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.partials.append(partials)
        return Var(self, idx, value)

    def lift(self, x: float) -> Var:
        """Record ``x`` as an independent input."""
        x = float(x)
        if not math.isfinite(x):
            raise NonFiniteError("lift", x)
        v = self._push(x, (), ())
        self.roots.append(v.idx)
        return v

    def lift_all(self, xs: Iterable[float]) -> list[Var]:
        return [self.lift(x) for x in xs]

    def adjoints(self, output: Var) -> list[float]:
        """Adjoint of ``output`` with respect to every node recorded before it."""
        if not isinstance(output, Var) or output.tape is not self:
            raise ValueError("output is not a node on this tape")
        n = output.idx + 1
        adj = [0.0] * n
        adj[output.idx] = 1.0
        parents = self.parents
        partials = self.partials
        for i in range(output.idx, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            for p, d in zip(parents[i], partials[i]):
                adj[p] += a * d
        return adj

    def backward(self, output: Var) -> dict[int, float]:
        """Gradient of ``output`` keyed by root node id."""
        adj = self.adjoints(output)
        n = len(adj)
        return {r: (adj[r] if r < n else 0.0) for r in self.roots}

    def gradient(self, output: Var, wrt: Sequence[Var]) -> list[float]:
        """Gradient of ``output`` with respect to ``wrt`` in order."""
        adj = self.adjoints(output)
        n = len(adj)
        out = []
        for v in wrt:
            if v.tape is not self:
                raise ValueError("wrt variable belongs to a different tape")
            out.append(adj[v.idx] if v.idx < n else 0.0)
        return out


def value_of(x: Scalar) -> float:
    return x.value if isinstance(x, Var) else float(x)


def exp(x: Scalar) -> Scalar:
    if isinstance(x, Var):
        try:
            y = math.exp(x.value)
        except OverflowError:
            raise NonFiniteError("exp", x.value) from None
        return x.tape._push(y, (x.idx,), (y,))
    try:
        return math.exp(x)
    except OverflowError:
        raise NonFiniteError("exp", x) from None


def log(x: Scalar) -> Scalar:
    v = x.value if isinstance(x, Var) else x
    if not v > 0.0:
        raise DomainError("log", v, "argument must be > 0")
    if isinstance(x, Var):
        return x.tape._push(math.log(v), (x.idx,), (1.0 / v,))
    return math.log(v)


def expm1(x: Scalar) -> Scalar:
    if isinstance(x, Var):
        try:
            y = math.expm1(x.value)
        except OverflowError:
            raise NonFiniteError("expm1", x.value) from None
        return x.tape._push(y, (x.idx,), (y + 1.0,))
    try:
        return math.expm1(x)
    except OverflowError:
        raise NonFiniteError("expm1", x) from None


def log1p(x: Scalar) -> Scalar:
    v = x.value if isinstance(x, Var) else x
    if not v > -1.0:
        raise DomainError("log1p", v, "argument must be > -1")
    if isinstance(x, Var):
        return x.tape._push(math.log1p(v), (x.idx,), (1.0 / (1.0 + v),))
    return math.log1p(v)


def sqrt(x: Scalar) -> Scalar:
    v = x.value if isinstance(x, Var) else x
    if not v >= 0.0:
        raise DomainError("sqrt", v, "argument must be >= 0")
    r = math.sqrt(v)
    if isinstance(x, Var):
        if r == 0.0:
            raise DomainError("sqrt", v, "derivative undefined at 0")
        return x.tape._push(r, (x.idx,), (0.5 / r,))
    return r


def tanh(x: Scalar) -> Scalar:
    if isinstance(x, Var):
        t = math.tanh(x.value)
        return x.tape._push(t, (x.idx,), (1.0 - t * t,))
    return math.tanh(x)


def power(x: Scalar, y: Scalar) -> Scalar:
    """``x ** y``.  A variable exponent requires a positive base."""
    xv = x.value if isinstance(x, Var) else x
    if isinstance(y, Var):
        if not xv > 0.0:
            raise DomainError("pow", xv, "base must be > 0 for a variable exponent")
        try:
            r = xv ** y.value
        except OverflowError:
            raise NonFiniteError("pow", xv) from None
        lx = math.log(xv)
        if isinstance(x, Var):
            _same_tape(x, y)
            return x.tape._push(r, (x.idx, y.idx), (y.value * r / xv, r * lx))
        return y.tape._push(r, (y.idx,), (r * lx,))
    yv = float(y)
    if xv < 0.0 and not yv.is_integer():
        raise DomainError("pow", xv, "negative base with non-integer exponent")
    if xv == 0.0 and yv < 1.0 and isinstance(x, Var):
        raise DomainError("pow", xv, "derivative undefined at 0")
    try:
        r = xv ** yv
    except OverflowError:
        raise NonFiniteError("pow", xv) from None
    if isinstance(x, Var):
        d = yv * xv ** (yv - 1.0) if yv != 0.0 else 0.0
        return x.tape._push(r, (x.idx,), (d,))
    return r


def _tape_of(xs: Sequence[Scalar]):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands live on different tapes")
    return tape


def vsum(xs: Sequence[Scalar]) -> Scalar:
    """Sum as a single fused node."""
    xs = list(xs)
    tape = _tape_of(xs)
    if tape is None:
        total = 0.0
        for x in xs:
            total += x
        return total
    total = 0.0
    idx = []
    for x in xs:
        if isinstance(x, Var):
            total += x.value
            idx.append(x.idx)
        else:
            total += x
    return tape._push(total, tuple(idx), (1.0,) * len(idx))


def mean(xs: Sequence[Scalar]) -> Scalar:
    xs = list(xs)
    if not xs:
        raise DomainError("mean", 0.0, "empty collection")
    n = len(xs)
    tape = _tape_of(xs)
    if tape is None:
        total = 0.0
        for x in xs:
            total += x
        return total / n
    total = 0.0
    idx = []
    for x in xs:
        if isinstance(x, Var):
            total += x.value
            idx.append(x.idx)
        else:
            total += x
    w = 1.0 / n
    return tape._push(total / n, tuple(idx), (w,) * len(idx))


def _extreme(xs: Sequence[Scalar], op: str, better) -> Scalar:
    xs = list(xs)
    if not xs:
        raise DomainError(op, 0.0, "empty collection")
    best = 0
    best_v = value_of(xs[0])
    for i in range(1, len(xs)):
        v = value_of(xs[i])
        if better(v, best_v):
            best, best_v = i, v
    # ties go to the first attaining argument
    return xs[best]


def vmax(xs: Sequence[Scalar]) -> Scalar:
    return _extreme(xs, "max", lambda a, b: a > b)


def vmin(xs: Sequence[Scalar]) -> Scalar:
    return _extreme(xs, "min", lambda a, b: a < b)
