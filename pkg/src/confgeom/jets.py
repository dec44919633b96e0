"""Truncated Taylor jets and the expression language used for chart fields.

A :class:`Jet` holds, for every entry of a (possibly tensor-shaped) quantity,
the Taylor coefficients ``d^a f(p) / a!`` for all multi-indices ``|a| <= order``
in ``d`` variables.  Arithmetic on jets is exact polynomial arithmetic modulo
terms of degree ``> order``, so derivatives up to order 3 come out to machine
precision without finite differences.

Expressions (:class:`Expr`) are small ASTs over ``x1..x8``.  They evaluate on
floats or on jets, can be differentiated symbolically and substituted into one
another, which is how pull-backs along immersions are formed.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_DIM = 8
MAX_ORDER = 3


class DomainError(ArithmeticError):
    """Raised for log/sqrt of a non-positive value or division by zero."""


class ExprSyntaxError(ValueError):
    """Raised by :func:`parse` with the offending character position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class UnknownIdentifier(ExprSyntaxError):
    pass


# ---------------------------------------------------------------------------
# jet spaces


class JetSpace:
    """Multi-index bookkeeping for jets in ``d`` variables up to ``order``.

    Multi-indices are stored graded by degree, so the space of order ``k - 1``
    is a prefix of the space of order ``k`` and truncation is a slice.
    """

    def __init__(self, d: int, order: int):
        if not 1 <= d <= MAX_DIM:
            raise ValueError(f"jet dimension must be in 1..{MAX_DIM}, got {d}")
        if not 0 <= order <= MAX_ORDER:
            raise ValueError(f"jet order must be in 0..{MAX_ORDER}, got {order}")
        self.d = d
        self.order = order
        alphas: list[tuple[int, ...]] = []
        for deg in range(order + 1):
            level = [a for a in itertools.product(range(deg + 1), repeat=d) if sum(a) == deg]
            level.sort(reverse=True)
            alphas.extend(level)
        self.alphas = alphas
        self.index = {a: i for i, a in enumerate(alphas)}
        self.size = len(alphas)
        self.degree = np.array([sum(a) for a in alphas])

        ii, jj, kk = [], [], []
        for i, a in enumerate(alphas):
            for j, b in enumerate(alphas):
                if sum(a) + sum(b) <= order:
                    ii.append(i)
                    jj.append(j)
                    kk.append(self.index[tuple(x + y for x, y in zip(a, b))])
        self.left = np.array(ii, dtype=np.intp)
        self.right = np.array(jj, dtype=np.intp)
        scatter = np.zeros((len(kk), self.size))
        scatter[np.arange(len(kk)), kk] = 1.0
        self.scatter = scatter

    def __repr__(self) -> str:
        return f"JetSpace(d={self.d}, order={self.order})"

    @lru_cache(maxsize=None)
    def diff_table(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Source indices and factors for differentiating in variable ``v``."""
        lower = jet_space(self.d, self.order - 1)
        src = np.empty(lower.size, dtype=np.intp)
        fac = np.empty(lower.size)
        for i, a in enumerate(lower.alphas):
            up = list(a)
            up[v] += 1
            src[i] = self.index[tuple(up)]
            fac[i] = up[v]
        return src, fac

    def constant(self, value) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros(value.shape + (self.size,))
        c[..., 0] = value
        return Jet(self, c)

    def variables(self, point: Sequence[float]) -> list["Jet"]:
        """Identity jets ``x_i = p_i + dx_i`` at ``point``."""
        if len(point) != self.d:
            raise ValueError(f"point has {len(point)} coordinates, expected {self.d}")
        out = []
        for i, p in enumerate(point):
            c = np.zeros(self.size)
            c[0] = float(p)
            if self.order >= 1:
                c[1 + i] = 1.0
            out.append(Jet(self, c))
        return out


@lru_cache(maxsize=None)
def jet_space(d: int, order: int) -> JetSpace:
    return JetSpace(d, order)


# ---------------------------------------------------------------------------
# jets


class Jet:
    """Tensor-valued truncated Taylor polynomial.

    ``c`` has shape ``shape + (space.size,)``; leading axes are tensor indices.
    """

    __slots__ = ("space", "c")
    __array_priority__ = 100

    def __init__(self, space: JetSpace, c: np.ndarray):
        self.space = space
        self.c = c

    # -- basic properties
    @property
    def shape(self) -> tuple[int, ...]:
        return self.c.shape[:-1]

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def value(self):
        v = self.c[..., 0]
        return float(v) if v.ndim == 0 else v.copy()

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, d={self.space.d}, order={self.order})"

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.space, self.c[idx + (Ellipsis,)] if Ellipsis not in idx else self.c[idx])

    def coefficient(self, alpha: Sequence[int]):
        """Taylor coefficient ``d^alpha f / alpha!``."""
        return self.c[..., self.space.index[tuple(alpha)]]

    def partial(self, alpha: Sequence[int]):
        """Plain partial derivative ``d^alpha f`` at the base point."""
        fact = math.prod(math.factorial(a) for a in alpha)
        return self.coefficient(alpha) * fact

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        sp = jet_space(self.space.d, order)
        return Jet(sp, self.c[..., : sp.size])

    def reshape(self, *shape) -> "Jet":
        return Jet(self.space, self.c.reshape(tuple(shape) + (self.space.size,)))

    def transpose(self, *axes) -> "Jet":
        return Jet(self.space, np.transpose(self.c, tuple(axes) + (self.c.ndim - 1,)))

    @property
    def T(self) -> "Jet":
        return self.transpose(*reversed(range(len(self.shape))))

    def sum(self, axis=None) -> "Jet":
        if axis is None:
            axis = tuple(range(len(self.shape)))
        return Jet(self.space, self.c.sum(axis=axis))

    # -- calculus
    def diff(self, v: int) -> "Jet":
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = self.space.diff_table(v)
        return Jet(jet_space(self.space.d, self.order - 1), self.c[..., src] * fac)

    def grad(self) -> "Jet":
        """Append a trailing tensor axis holding the first partials."""
        parts = [self.diff(v).c for v in range(self.space.d)]
        return Jet(jet_space(self.space.d, self.order - 1), np.stack(parts, axis=-2))

    # -- arithmetic
    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.space.d != self.space.d:
                raise ValueError("jets over different numbers of variables")
            if other.order == self.order:
                return self, other
            k = min(self.order, other.order)
            return self.truncate(k), other.truncate(k)
        return None

    def __add__(self, other):
        pair = self._coerce(other)
        if pair is not None:
            a, b = pair
            return Jet(a.space, a.c + b.c)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        c = np.broadcast_to(self.c, shape + (self.space.size,)).copy()
        c[..., 0] += other
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        pair = self._coerce(other)
        if pair is not None:
            a, b = pair
            sp = a.space
            prod = a.c[..., sp.left] * b.c[..., sp.right]
            return Jet(sp, prod @ sp.scatter)
        other = np.asarray(other, dtype=float)
        return Jet(self.space, self.c * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        if np.any(other == 0):
            raise DomainError("division by zero")
        return Jet(self.space, self.c / other[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n):
        if isinstance(n, (int, np.integer)):
            if n < 0:
                return self.reciprocal() ** (-n)
            out = self.space.constant(np.ones(self.shape))
            base = self
            while n:
                if n & 1:
                    out = out * base
                n >>= 1
                if n:
                    base = base * base
            return out
        return power(self, float(n))

    def reciprocal(self) -> "Jet":
        v = self.c[..., 0]
        if np.any(v == 0):
            raise DomainError("division by zero")
        return _compose(self, lambda u, k: (-1.0) ** k / u ** (k + 1))


def _compose(u: Jet, coeff: Callable[[np.ndarray, int], np.ndarray]) -> Jet:
    """Evaluate ``F(u)`` for a univariate ``F`` given its Taylor coefficients.

    ``coeff(u0, k)`` must return ``F^(k)(u0) / k!``.
    """
    u0 = u.c[..., 0]
    nil = Jet(u.space, u.c.copy())
    nil.c[..., 0] = 0.0
    out = Jet(u.space, np.zeros_like(u.c))
    out.c[..., 0] = coeff(u0, 0)
    term = None
    for k in range(1, u.order + 1):
        term = nil if term is None else term * nil
        out = out + term * coeff(u0, k)
    return out


def _taylor_exp(u0, k):
    return np.exp(u0) / math.factorial(k)


def _taylor_sin(u0, k):
    return [np.sin, np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z)][k % 4](u0) / math.factorial(k)


def _taylor_cos(u0, k):
    return [np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z), np.sin][k % 4](u0) / math.factorial(k)


def _taylor_log(u0, k):
    if k == 0:
        return np.log(u0)
    return (-1.0) ** (k + 1) / (k * u0 ** k)


def _taylor_power(p: float):
    def coeff(u0, k):
        binom = math.prod(p - j for j in range(k)) / math.factorial(k)
        return binom * u0 ** (p - k)

    return coeff


def _positive(x, name):
    v = x.c[..., 0] if isinstance(x, Jet) else np.asarray(x)
    if np.any(v <= 0):
        raise DomainError(f"{name} of non-positive value")


def exp(x):
    return _compose(x, _taylor_exp) if isinstance(x, Jet) else math.exp(x)


def sin(x):
    return _compose(x, _taylor_sin) if isinstance(x, Jet) else math.sin(x)


def cos(x):
    return _compose(x, _taylor_cos) if isinstance(x, Jet) else math.cos(x)


def log(x):
    _positive(x, "log")
    return _compose(x, _taylor_log) if isinstance(x, Jet) else math.log(x)


def sqrt(x):
    _positive(x, "sqrt")
    return _compose(x, _taylor_power(0.5)) if isinstance(x, Jet) else math.sqrt(x)


def power(x, p: float):
    if isinstance(x, Jet):
        if float(p).is_integer():
            return x ** int(p)
        _positive(x, "power")
        return _compose(x, _taylor_power(p))
    return x ** p


# ---------------------------------------------------------------------------
# tensor helpers on jets


def jet_array(items) -> Jet:
    """Stack a nested list of jets (and plain numbers) into one tensor jet."""
    flat: list = []
    shape: list[int] = []

    def walk(obj, depth):
        if isinstance(obj, (list, tuple)):
            if len(shape) <= depth:
                shape.append(len(obj))
            elif shape[depth] != len(obj):
                raise ValueError("ragged nested list")
            for o in obj:
                walk(o, depth + 1)
        else:
            flat.append(obj)

    walk(items, 0)
    spaces = [f.space for f in flat if isinstance(f, Jet)]
    if not spaces:
        raise ValueError("jet_array needs at least one jet")
    sp = min(spaces, key=lambda s: s.order)
    rows = []
    for f in flat:
        if isinstance(f, Jet):
            rows.append(f.truncate(sp.order).c if f.order != sp.order else f.c)
        else:
            r = np.zeros(sp.size)
            r[0] = float(f)
            rows.append(r)
    return Jet(sp, np.stack(rows).reshape(tuple(shape) + (sp.size,)))


def jeinsum(subscripts: str, *operands) -> Jet:
    """``numpy.einsum`` over tensor axes with jet multiplication on coefficients.

    Operands may be jets or plain arrays; at least one must be a jet.
    """
    inputs, output = subscripts.replace(" ", "").split("->")
    terms = inputs.split(",")
    if len(terms) != len(operands):
        raise ValueError("subscripts do not match number of operands")
    free = next(ch for ch in "zyZYwW" if ch not in subscripts)
    jet_terms, jet_ops, plain_terms, plain_ops = [], [], [], []
    for t, op in zip(terms, operands):
        if isinstance(op, Jet):
            jet_terms.append(t)
            jet_ops.append(op)
        else:
            plain_terms.append(t)
            plain_ops.append(np.asarray(op, dtype=float))
    if not jet_ops:
        raise ValueError("jeinsum needs at least one jet operand")
    order = min(j.order for j in jet_ops)
    jet_ops = [j if j.order == order else j.truncate(order) for j in jet_ops]
    sp = jet_ops[0].space
    acc_term, acc = jet_terms[0], jet_ops[0].c
    for k in range(1, len(jet_ops)):
        t = jet_terms[k]
        # keep an index only if the output or a later operand still needs it
        later = output + "".join(jet_terms[k + 1:]) + "".join(plain_terms)
        keep = "".join(dict.fromkeys(ch for ch in acc_term + t if ch in later))
        a = acc[..., sp.left]
        b = jet_ops[k].c[..., sp.right]
        acc = np.einsum(f"{acc_term}{free},{t}{free}->{keep}{free}", a, b) @ sp.scatter
        acc_term = keep
    spec = ",".join([acc_term + free] + plain_terms) + "->" + output + free
    return Jet(sp, np.einsum(spec, acc, *plain_ops))


def jinv(a: Jet) -> Jet:
    """Inverse of a square-matrix jet via the nilpotent Neumann series."""
    n = a.shape[0]
    a0 = a.c[..., 0]
    try:
        inv0 = np.linalg.inv(a0)
    except np.linalg.LinAlgError as exc:
        raise DomainError("singular matrix") from exc
    if np.linalg.cond(a0) > 1e12:
        raise DomainError("singular matrix")
    nil = Jet(a.space, a.c.copy())
    nil.c[..., 0] = 0.0
    step = -jeinsum("ij,jk->ik", inv0, nil)
    out = a.space.constant(inv0)
    term = a.space.constant(np.eye(n))
    for _ in range(a.order):
        term = jeinsum("ij,jk->ik", step, term)
        out = out + jeinsum("ij,jk->ik", term, inv0)
    return out


def compose(outer: Jet, inner: Jet) -> Jet:
    """Compose ``outer`` (a jet in D variables at q) with ``inner`` (a jet of shape (D,) whose value is q).

    Returns the jet of ``outer(inner(x))`` in the variables of ``inner``.
    """
    D = outer.space.d
    if inner.shape != (D,):
        raise ValueError("inner jet must have shape (D,)")
    order = min(outer.order, inner.order)
    outer = outer.truncate(order)
    inner = inner.truncate(order)
    delta = Jet(inner.space, inner.c.copy())
    delta.c[:, 0] = 0.0
    sp_out = outer.space
    monos = np.zeros((sp_out.size, inner.space.size))
    cache: dict[tuple[int, ...], Jet] = {}
    for i, alpha in enumerate(sp_out.alphas):
        if sum(alpha) == 0:
            monos[i, 0] = 1.0
            continue
        v = next(k for k, a in enumerate(alpha) if a)
        prev = list(alpha)
        prev[v] -= 1
        prev = tuple(prev)
        m = delta[v] if sum(prev) == 0 else cache[prev] * delta[v]
        cache[alpha] = m
        monos[i] = m.c
    return Jet(inner.space, outer.c @ monos)


# ---------------------------------------------------------------------------
# expressions


class Expr:
    """Immutable expression node over variables ``x1..x8``."""

    __slots__ = ()

    precedence = 100

    def evaluate(self, env: Sequence):
        raise NotImplementedError

    def diff(self, i: int) -> "Expr":
        raise NotImplementedError

    def substitute(self, env: Sequence["Expr"]) -> "Expr":
        raise NotImplementedError

    def variables(self) -> set[int]:
        raise NotImplementedError

    def is_const(self) -> bool:
        return not self.variables()

    # construction helpers
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return pow_(self, int(n))

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, i):
        return ZERO

    def substitute(self, env):
        return self

    def variables(self):
        return set()


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int  # zero-based

    def evaluate(self, env):
        return env[self.index]

    def diff(self, i):
        return ONE if i == self.index else ZERO

    def substitute(self, env):
        return env[self.index]

    def variables(self):
        return {self.index}


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def precedence(self):
        return {"+": 1, "-": 1, "*": 2, "/": 2}[self.op]

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if not isinstance(b, Jet) and b == 0:
            raise DomainError("division by zero")
        return a / b

    def diff(self, i):
        a, b = self.left, self.right
        da, db = a.diff(i), b.diff(i)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        return div(sub(mul(da, b), mul(a, db)), pow_(b, 2))

    def substitute(self, env):
        a, b = self.left.substitute(env), self.right.substitute(env)
        return {"+": add, "-": sub, "*": mul, "/": div}[self.op](a, b)

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    precedence = 5

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, i):
        return neg(self.arg.diff(i))

    def substitute(self, env):
        return neg(self.arg.substitute(env))

    def variables(self):
        return self.arg.variables()


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = 4

    def evaluate(self, env):
        b = self.base.evaluate(env)
        if isinstance(b, Jet):
            return b ** self.exponent
        if b == 0 and self.exponent < 0:
            raise DomainError("division by zero")
        return b ** self.exponent

    def diff(self, i):
        return mul(mul(Const(float(self.exponent)), pow_(self.base, self.exponent - 1)), self.base.diff(i))

    def substitute(self, env):
        return pow_(self.base.substitute(env), self.exponent)

    def variables(self):
        return self.base.variables()


_FUNCS: dict[str, Callable] = {"sin": sin, "cos": cos, "exp": exp, "log": log, "sqrt": sqrt}


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr

    def evaluate(self, env):
        return _FUNCS[self.name](self.arg.evaluate(env))

    def diff(self, i):
        u = self.arg
        du = u.diff(i)
        if self.name == "sin":
            outer = Func("cos", u)
        elif self.name == "cos":
            outer = neg(Func("sin", u))
        elif self.name == "exp":
            outer = self
        elif self.name == "log":
            outer = div(ONE, u)
        else:
            outer = div(Const(0.5), self)
        return mul(outer, du)

    def substitute(self, env):
        a = self.arg.substitute(env)
        if isinstance(a, Const):
            return Const(float(_FUNCS[self.name](a.value)))
        return Func(self.name, a)

    def variables(self):
        return self.arg.variables()


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        return parse(x)
    return Const(float(x))


# smart constructors: fold constants and the trivial identities only


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and b.value == 0:
        raise DomainError("division by zero")
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def pow_(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        if a.value == 0 and n < 0:
            raise DomainError("division by zero")
        return Const(a.value ** n)
    return Pow(a, n)


def func(name: str, arg) -> Expr:
    if name not in _FUNCS:
        raise ValueError(f"unknown function {name!r}")
    arg = as_expr(arg)
    if isinstance(arg, Const):
        return Const(float(_FUNCS[name](arg.value)))
    return Func(name, arg)


# ---------------------------------------------------------------------------
# parser and printer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    src = src.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        self.i += 1
        return tok

    def expr(self) -> Expr:
        # a leading sign is accepted as a convenience
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            first = self.term()
            if val == "+":
                node = first
            elif isinstance(first, Const):
                node = Const(-first.value)
            else:
                node = Neg(first)
        else:
            node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                node = BinOp(val, node, self.factor())
            else:
                return node

    def factor(self) -> Expr:
        base = self.base()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            k, v, p = self.take()
            if k != "num" or not v.isdigit():
                raise ExprSyntaxError("exponent must be an integer", p)
            return Pow(base, sign * int(v))
        return base

    def base(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "id":
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                k = int(m.group(1))
                if not 1 <= k <= MAX_DIM:
                    raise UnknownIdentifier(f"variable {val!r} out of range x1..x{MAX_DIM}", pos)
                return Var(k - 1)
            if val in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Func(val, arg)
            raise UnknownIdentifier(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos)


def parse(source: str) -> Expr:
    """Parse an expression such as ``"x1^2 + sin(x2)"``."""
    p = _Parser(source)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected {val!r}", pos)
    return node


def _fmt_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_source(e: Expr) -> str:
    """Print an expression in the parser's grammar (minimal parentheses)."""
    if isinstance(e, Const):
        s = _fmt_number(abs(e.value))
        return f"(-{s})" if math.copysign(1.0, e.value) < 0 else s
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Func):
        return f"{e.name}({to_source(e.arg)})"
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, Pow):
        b = to_source(e.base)
        if isinstance(e.base, (BinOp, Pow)):
            b = f"({b})"
        return f"{b}^{e.exponent}"
    assert isinstance(e, BinOp)
    left = to_source(e.left)
    right = to_source(e.right)
    p = e.precedence
    if e.left.precedence < p:
        left = f"({left})"
    if e.right.precedence < p or (e.right.precedence == p and e.op in "-/") or (
        e.right.precedence == p and isinstance(e.right, BinOp)
    ):
        right = f"({right})"
    return f"{left} {e.op} {right}"


# ---------------------------------------------------------------------------
# scalar fields


class ScalarField:
    """An expression bound to a chart dimension."""

    __slots__ = ("expr", "dim")

    def __init__(self, expr, dim: int):
        if not 1 <= dim <= MAX_DIM:
            raise ValueError(f"chart dimension must be in 1..{MAX_DIM}")
        self.expr = as_expr(expr)
        self.dim = dim
        bad = [i for i in self.expr.variables() if i >= dim]
        if bad:
            raise ValueError(f"variable x{max(bad) + 1} exceeds chart dimension {dim}")

    def __repr__(self) -> str:
        return f"ScalarField({to_source(self.expr)!r}, dim={self.dim})"

    def __call__(self, point: Sequence[float]) -> float:
        return float(self.expr.evaluate([float(p) for p in point]))

    def on(self, env: Sequence) -> Jet | float:
        """Evaluate with variables bound to jets (composition) or numbers."""
        val = self.expr.evaluate(env)
        if isinstance(val, Jet):
            return val
        jets = [v for v in env if isinstance(v, Jet)]
        if jets:
            return jets[0].space.constant(val)
        return val

    def jet(self, point: Sequence[float], order: int) -> Jet:
        return eval_jet(self, point, order)

    def diff(self, i: int) -> "ScalarField":
        return ScalarField(self.expr.diff(i), self.dim)


def as_field(x, dim: int) -> ScalarField:
    if isinstance(x, ScalarField):
        if x.dim != dim:
            x = ScalarField(x.expr, dim)
        return x
    return ScalarField(x, dim)


def eval_jet(f: ScalarField | Expr | str, point: Sequence[float], order: int) -> Jet:
    """Jet of ``f`` at ``point`` carrying all partials up to ``order``."""
    if not isinstance(f, ScalarField):
        f = ScalarField(f, len(point))
    if len(point) != f.dim:
        raise ValueError(f"point has {len(point)} coordinates, field has dimension {f.dim}")
    sp = jet_space(f.dim, order)
    return f.on(sp.variables(point))


def field_array_jet(fields, point: Sequence[float], order: int) -> Jet:
    """Jet of a nested list of fields at ``point``."""
    sp = jet_space(len(point), order)
    env = sp.variables(point)

    def walk(obj):
        if isinstance(obj, (list, tuple)):
            return [walk(o) for o in obj]
        val = obj.on(env) if isinstance(obj, ScalarField) else as_expr(obj).evaluate(env)
        return val if isinstance(val, Jet) else sp.constant(val)

    return jet_array(walk(fields))


def exprs_on(exprs, env: Sequence) -> Jet:
    """Evaluate a nested list of expressions with jet-valued variables."""
    sp = next(v.space for v in env if isinstance(v, Jet))

    def walk(obj):
        if isinstance(obj, (list, tuple)):
            return [walk(o) for o in obj]
        e = obj.expr if isinstance(obj, ScalarField) else as_expr(obj)
        val = e.evaluate(env)
        return val if isinstance(val, Jet) else sp.constant(val)

    return jet_array(walk(exprs))


def iter_nested(obj) -> Iterable:
    if isinstance(obj, (list, tuple)):
        for o in obj:
            yield from iter_nested(o)
    else:
        yield obj
