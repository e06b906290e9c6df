"""Expression trees over the variable alphabet ``t, z, x_k^{(j)}`` (and ``s``).

Lagrangians and symmetry generators are written in a small infix language::

    x1'^2/2 - x1^2/2 - z
    sin(t) + x1*z

``x<k>`` followed by ``j`` primes is the j-th time derivative of the k-th state
component. Trees are immutable, compare structurally, and can be evaluated
(tree walk) or compiled to plain Python closures for the hot loops.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DomainError,
    ExprSyntaxError,
    IndexExceeded,
    OrderExceeded,
    UnknownIdentifier,
)

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class VarKind(enum.Enum):
    TIME = "t"
    Z = "z"
    STATE = "x"
    PARAM = "s"


@dataclass(frozen=True, order=True)
class VarRef:
    kind: VarKind
    k: int = 0
    j: int = 0

    def __post_init__(self):
        if self.kind is VarKind.STATE:
            if self.k < 1 or self.j < 0:
                raise ValueError(f"invalid state reference x{self.k} order {self.j}")
        elif self.k or self.j:
            raise ValueError(f"{self.kind.value} carries no index or order")

    def __str__(self):
        if self.kind is VarKind.STATE:
            return f"x{self.k}" + "'" * self.j
        return self.kind.value


T = VarRef(VarKind.TIME)
Z = VarRef(VarKind.Z)
S = VarRef(VarKind.PARAM)


def x(k: int, j: int = 0) -> VarRef:
    return VarRef(VarKind.STATE, k, j)


# --------------------------------------------------------------------------
# Nodes


class Expr:
    """Base node. Subclasses are frozen dataclasses, so ``==`` is structural."""

    __slots__ = ()

    def children(self) -> tuple["Expr", ...]:
        return ()

    def __str__(self):
        return to_source(self)

    # Builders used by tests and callers assembling generators by hand.
    def __add__(self, other):
        return Add(self, _lift(other))

    def __radd__(self, other):
        return Add(_lift(other), self)

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __rsub__(self, other):
        return Sub(_lift(other), self)

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __rmul__(self, other):
        return Mul(_lift(other), self)

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __rtruediv__(self, other):
        return Div(_lift(other), self)

    def __pow__(self, other):
        return Pow(self, _lift(other))

    def __neg__(self):
        return Neg(self)


def _lift(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, VarRef):
        return Var(value)
    return Const(float(value))


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    ref: VarRef


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class _Binary(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


class Add(_Binary):
    pass


class Sub(_Binary):
    pass


class Mul(_Binary):
    pass


class Div(_Binary):
    pass


class Pow(_Binary):
    pass


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown function {self.name!r}")

    def children(self):
        return (self.arg,)


ZERO = Const(0.0)
ONE = Const(1.0)


def variables(e: Expr) -> set[VarRef]:
    out: set[VarRef] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.ref)
        stack.extend(node.children())
    return out


def check_bounds(e: Expr, n: int, m: int, allow_param: bool = False) -> None:
    """Raise if ``e`` references a variable outside the (n, m) alphabet."""
    for ref in variables(e):
        if ref.kind is VarKind.STATE:
            if ref.k > m:
                raise IndexExceeded(f"component x{ref.k} exceeds dimension {m}")
            if ref.j > n:
                raise OrderExceeded(f"derivative order {ref.j} of x{ref.k} exceeds order {n}")
        elif ref.kind is VarKind.PARAM and not allow_param:
            raise UnknownIdentifier("parameter 's' is only allowed in finite families")


# --------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalPoint:
    """A point ``(t, x, z)`` with ``x[k-1, j]`` holding ``x_k^{(j)}``.

    ``s`` is the family parameter; it is ignored by expressions without it.
    """

    t: float
    x: np.ndarray
    z: float
    s: float = 0.0

    def __post_init__(self):
        arr = np.array(self.x, dtype=float)
        if arr.ndim != 2:
            raise ValueError("x must be an m x (n+1) matrix")
        arr.setflags(write=False)
        object.__setattr__(self, "x", arr)
        if not (np.all(np.isfinite(arr)) and math.isfinite(self.t) and math.isfinite(self.z)):
            raise ValueError("evaluation point must be finite")

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1] - 1

    def flat(self) -> list[float]:
        """State values in derivative-major order (x^{(0)} block, x^{(1)} block, ...)."""
        return self.x.T.ravel().tolist()


# The helpers below are shared by the tree walker and the compiled closures so
# the two paths produce bit-identical results.


def _div(a, b):
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _pow(a, b):
    if b == 2.0:
        return a * a
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power")
    if a < 0.0 and b != math.floor(b):
        raise DomainError("negative base with non-integer exponent")
    try:
        return a ** b
    except OverflowError:
        return math.copysign(math.inf, a) if b % 2.0 == 1.0 else math.inf


def _log(a):
    if a <= 0.0:
        raise DomainError("log of non-positive value")
    return math.log(a)


def _sqrt(a):
    if a < 0.0:
        raise DomainError("sqrt of negative value")
    return math.sqrt(a)


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _sin(a):
    if math.isinf(a):
        raise DomainError("sin of infinite value")
    return math.sin(a)


def _cos(a):
    if math.isinf(a):
        raise DomainError("cos of infinite value")
    return math.cos(a)


_FUNC_IMPL = {"sin": _sin, "cos": _cos, "exp": _exp, "log": _log, "sqrt": _sqrt}


def evaluate(e: Expr, p: EvalPoint) -> float:
    """Evaluate ``e`` at ``p`` by walking the tree."""
    match e:
        case Const(value):
            return value
        case Var(ref):
            if ref.kind is VarKind.TIME:
                return float(p.t)
            if ref.kind is VarKind.Z:
                return float(p.z)
            if ref.kind is VarKind.PARAM:
                return float(p.s)
            if ref.k > p.m or ref.j > p.n:
                raise IndexError(f"{ref} is outside the evaluation point")
            return float(p.x[ref.k - 1, ref.j])
        case Neg(arg):
            return -evaluate(arg, p)
        case Add(l, r):
            return evaluate(l, p) + evaluate(r, p)
        case Sub(l, r):
            return evaluate(l, p) - evaluate(r, p)
        case Mul(l, r):
            return evaluate(l, p) * evaluate(r, p)
        case Div(l, r):
            return _div(evaluate(l, p), evaluate(r, p))
        case Pow(l, r):
            return _pow(evaluate(l, p), evaluate(r, p))
        case Func(name, arg):
            return _FUNC_IMPL[name](evaluate(arg, p))
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Compilation to Python closures


def _flat_index(ref: VarRef, m: int) -> int:
    return ref.j * m + (ref.k - 1)


def _emit(e: Expr, m: int) -> str:
    match e:
        case Const(value):
            return repr(float(value))
        case Var(ref):
            if ref.kind is VarKind.STATE:
                return f"xs[{_flat_index(ref, m)}]"
            return {VarKind.TIME: "t", VarKind.Z: "z", VarKind.PARAM: "s"}[ref.kind]
        case Neg(arg):
            return f"(-{_emit(arg, m)})"
        case Add(l, r):
            return f"({_emit(l, m)} + {_emit(r, m)})"
        case Sub(l, r):
            return f"({_emit(l, m)} - {_emit(r, m)})"
        case Mul(l, r):
            return f"({_emit(l, m)} * {_emit(r, m)})"
        case Div(l, Const(value)) if value != 0.0:
            return f"({_emit(l, m)} / {float(value)!r})"
        case Div(l, r):
            return f"_div({_emit(l, m)}, {_emit(r, m)})"
        case Pow(l, Const(2.0)):
            base = _emit(l, m)
            if isinstance(l, (Var, Const)):
                return f"({base} * {base})"
            return f"_pow({base}, 2.0)"
        case Pow(l, r):
            return f"_pow({_emit(l, m)}, {_emit(r, m)})"
        case Func(name, arg):
            return f"_{name}({_emit(arg, m)})"
    raise TypeError(f"not an expression node: {e!r}")


def _build(body: str) -> Callable:
    src = f"def _compiled(t, xs, z, s=0.0):\n    return {body}\n"
    namespace = {
        "_div": _div,
        "_pow": _pow,
        **{f"_{name}": impl for name, impl in _FUNC_IMPL.items()},
    }
    exec(compile(src, "<herglotz-expr>", "exec"), namespace)
    return namespace["_compiled"]


def compile_exprs(exprs: Sequence[Expr], m: int) -> Callable[..., tuple[float, ...]]:
    """Compile expressions into ``f(t, xs, z, s=0.0) -> tuple``.

    ``xs`` is a flat derivative-major sequence of floats: ``xs[j*m + k-1]`` is
    ``x_k^{(j)}``. Results match :func:`evaluate` bit for bit.
    """
    items = [_emit(e, m) for e in exprs]
    return _build("(" + ", ".join(items) + ("," if len(items) == 1 else "") + ")")


def compile_expr(e: Expr, m: int) -> Callable[..., float]:
    """Scalar form of :func:`compile_exprs`."""
    return _build(_emit(e, m))


# --------------------------------------------------------------------------
# Simplifying constructors (identity/annihilator rules plus constant folding)


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return ONE
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        try:
            return Const(_pow(a.value, b.value))
        except DomainError:
            pass
    return Pow(a, b)


def func(name: str, a: Expr) -> Expr:
    return Func(name, a)


# --------------------------------------------------------------------------
# Symbolic partial differentiation


def diff(e: Expr, v: VarRef) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``v``.

    Every ``x_k^{(j)}`` is an independent variable here; this is a partial,
    not a total, derivative.
    """
    if v not in variables(e):
        return ZERO
    return _d(e, v)


def _d(e: Expr, v: VarRef) -> Expr:
    match e:
        case Const():
            return ZERO
        case Var(ref):
            return ONE if ref == v else ZERO
        case Neg(arg):
            return neg(_d(arg, v))
        case Add(l, r):
            return add(_d(l, v), _d(r, v))
        case Sub(l, r):
            return sub(_d(l, v), _d(r, v))
        case Mul(l, r):
            return add(mul(_d(l, v), r), mul(l, _d(r, v)))
        case Div(l, r):
            dl, dr = _d(l, v), _d(r, v)
            if _is_const(dr, 0.0):
                return div(dl, r)
            return div(sub(mul(dl, r), mul(l, dr)), power(r, Const(2.0)))
        case Pow(base, exponent):
            db = _d(base, v)
            if v not in variables(exponent):
                return mul(mul(exponent, power(base, sub(exponent, ONE))), db)
            de = _d(exponent, v)
            return mul(e, add(mul(de, func("log", base)), div(mul(exponent, db), base)))
        case Func(name, arg):
            da = _d(arg, v)
            if name == "sin":
                outer = func("cos", arg)
            elif name == "cos":
                outer = neg(func("sin", arg))
            elif name == "exp":
                outer = e
            elif name == "log":
                return div(da, arg)
            else:  # sqrt
                return div(da, mul(Const(2.0), e))
            return mul(outer, da)
    raise TypeError(f"not an expression node: {e!r}")


def substitute(e: Expr, mapping: dict[VarRef, Expr]) -> Expr:
    """Replace variables by expressions (no simplification)."""
    match e:
        case Var(ref):
            return mapping.get(ref, e)
        case Const():
            return e
        case Neg(arg):
            return Neg(substitute(arg, mapping))
        case Func(name, arg):
            return Func(name, substitute(arg, mapping))
        case _Binary(l, r):
            return type(e)(substitute(l, mapping), substitute(r, mapping))
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Canonical printer

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}
_ATOM = 5


def _prec(e: Expr) -> int:
    if isinstance(e, Const):
        return _PREC[Neg] if e.value < 0 or math.copysign(1.0, e.value) < 0 else _ATOM
    return _PREC.get(type(e), _ATOM)


def _num(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError("cannot print a non-finite constant")
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def to_source(e: Expr) -> str:
    """Print ``e`` so that ``parse(to_source(e), ...) == e``."""
    match e:
        case Const(value):
            return _num(value)
        case Var(ref):
            return str(ref)
        case Neg(arg):
            # '-' followed directly by a literal would re-parse as a negative constant
            if _prec(arg) < _ATOM or isinstance(arg, Const):
                return f"-({to_source(arg)})"
            return f"-{to_source(arg)}"
        case Func(name, arg):
            return f"{name}({to_source(arg)})"
        case Pow(l, r):
            left = to_source(l)
            if _prec(l) <= _PREC[Pow]:
                left = f"({left})"
            right = to_source(r)
            if _prec(r) < _ATOM:
                right = f"({right})"
            return f"{left}^{right}"
        case _Binary(l, r):
            op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
            p = _PREC[type(e)]
            left, right = to_source(l), to_source(r)
            if _prec(l) < p or _prec(l) == _PREC[Neg]:
                left = f"({left})"
            if _prec(r) <= p or _prec(r) == _PREC[Neg]:
                right = f"({right})"
            return f"{left} {op} {right}"
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*'*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_STATE = re.compile(r"x(\d+)('*)$")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(source):
        match = _TOKEN.match(source, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        if match.lastgroup != "ws":
            toks.append(_Tok(match.lastgroup, match.group(), pos))
        pos = match.end()
    toks.append(_Tok("end", "", len(source)))
    return toks


@dataclass
class _Parser:
    toks: list[_Tok]
    n: int
    m: int
    allow_param: bool
    i: int = field(default=0)

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.take()
        if tok.text != text:
            found = repr(tok.text) if tok.kind != "end" else "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found}", tok.pos)

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.take()
            nxt = self.peek()
            if nxt.kind == "num" and self.toks[self.i + 1].text != "^":
                self.take()
                return Const(-float(nxt.text))
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.base()
        if self.peek().text == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def base(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "ident":
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(tok.text, arg)
            return Var(self.ident(tok))
        found = repr(tok.text) if tok.kind != "end" else "end of input"
        raise ExprSyntaxError(f"unexpected {found}", tok.pos)

    def ident(self, tok: _Tok) -> VarRef:
        name = tok.text
        if name == "t":
            return T
        if name == "z":
            return Z
        if name == "s" and self.allow_param:
            return S
        match = _STATE.match(name)
        if match is None:
            raise UnknownIdentifier(f"unknown identifier {name!r}", tok.pos)
        k, j = int(match.group(1)), len(match.group(2))
        if k < 1 or k > self.m:
            raise IndexExceeded(f"component index {k} outside 1..{self.m}", tok.pos)
        if j > self.n:
            raise OrderExceeded(f"derivative order {j} exceeds problem order {self.n}", tok.pos)
        return x(k, j)


def parse(source: str, n: int, m: int, allow_param: bool = False) -> Expr:
    """Parse ``source`` into an ``Expr`` bounded by order ``n`` and dimension ``m``.

    With ``allow_param`` the family parameter ``s`` is accepted as well.
    """
    if n < 1 or m < 1:
        raise ValueError("order and dimension must be at least 1")
    parser = _Parser(_tokenize(source), n, m, allow_param)
    if parser.peek().kind == "end":
        raise ExprSyntaxError("empty expression", 0)
    node = parser.expr()
    tail = parser.peek()
    if tail.kind != "end":
        raise ExprSyntaxError(f"unexpected {tail.text!r}", tail.pos)
    return node


def state_refs(n: int, m: int) -> Iterable[VarRef]:
    """All state references in derivative-major order, matching compiled ``xs``."""
    for j in range(n + 1):
        for k in range(1, m + 1):
            yield x(k, j)
