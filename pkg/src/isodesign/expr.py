"""Closed-form scalar expressions with exact first and second derivatives.

Expressions in the coordinates ``x1 .. xn`` are parsed by a small recursive
descent parser and evaluated either to plain values or to :class:`Jet2`
objects, which carry the value, gradient and Hessian through forward-mode
differentiation. All evaluators are vectorized: ``x`` may have any leading
batch shape ``(..., n)``.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' exponent)?
    base   := number | var | func '(' expr ')' | '(' expr ')' | '-' base
    var    := 'x' digit+
    func   := 'exp' | 'log' | 'sin' | 'cos' | 'sqrt'

``exponent`` is a number, optionally signed, or a parenthesized expression
free of variables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ParseError, UnknownFunction, UnknownVariable

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: float


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Expression"


Expression = Union[Const, Var, Neg, BinOp, Pow, Func]


def variables(e: Expression) -> set[int]:
    """Indices of the coordinates ``e`` depends on syntactically."""
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, (Neg, Func)):
        return variables(e.arg)
    if isinstance(e, Pow):
        return variables(e.base)
    raise TypeError(f"not an expression node: {e!r}")


def is_zero(e: Expression) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def to_string(e: Expression) -> str:
    """Print ``e`` in the input grammar; ``parse(to_string(e))`` evaluates identically."""
    if isinstance(e, Const):
        s = repr(float(e.value))
        return f"(-{s[1:]})" if e.value < 0 or s.startswith("-") else s
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        # parenthesized so a power argument is not re-read as a power of a negated base
        return f"(-({to_string(e.arg)}))"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Pow):
        p = repr(float(e.exponent))
        if e.exponent < 0:
            p = f"(-{p[1:]})"
        return f"({to_string(e.base)})^{p}"
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def diff(e: Expression, i: int) -> Expression:
    """Symbolic partial derivative of ``e`` in ``x{i}`` (1-based), unsimplified."""
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.index == i else 0.0)
    if isinstance(e, Neg):
        return Neg(diff(e.arg, i))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = diff(a, i), diff(b, i)
        if e.op in "+-":
            return BinOp(e.op, da, db)
        if e.op == "*":
            return BinOp("+", BinOp("*", da, b), BinOp("*", a, db))
        # (a/b)' = a'/b - a b' / b^2
        return BinOp("-", BinOp("/", da, b), BinOp("/", BinOp("*", a, db), Pow(b, 2.0)))
    if isinstance(e, Pow):
        if e.exponent == 0.0:
            return Const(0.0)
        inner = Const(1.0) if e.exponent == 1.0 else Pow(e.base, e.exponent - 1.0)
        return BinOp("*", BinOp("*", Const(e.exponent), inner), diff(e.base, i))
    if isinstance(e, Func):
        u, du = e.arg, diff(e.arg, i)
        outer = {
            "exp": lambda: e,
            "log": lambda: BinOp("/", Const(1.0), u),
            "sin": lambda: Func("cos", u),
            "cos": lambda: Neg(Func("sin", u)),
            "sqrt": lambda: BinOp("/", Const(0.5), e),
        }[e.name]()
        return BinOp("*", outer, du)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass
class _Tok:
    kind: str  # 'num' | 'name' | 'op' | 'end'
    text: str
    pos: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {source[pos]!r}", pos, "number, variable, function or operator")
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(source)))
    return toks


class _Parser:
    def __init__(self, source: str, dim: int):
        self.toks = _tokenize(source)
        self.i = 0
        self.dim = dim

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def _expect(self, text: str) -> None:
        if not self._accept(text):
            raise ParseError(f"unexpected {self.tok.text or 'end of input'!r}", self.tok.pos, repr(text))

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected {self.tok.text!r}", self.tok.pos, "operator or end of input")
        return e

    def expr(self) -> Expression:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expression:
        e = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.factor())
        return e

    def factor(self) -> Expression:
        base = self.base()
        if self._accept("^"):
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> float:
        tok = self.tok
        sign = 1.0
        if self._accept("-"):
            sign = -1.0
            tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return sign * float(tok.text)
        if self._accept("("):
            inner = self.expr()
            self._expect(")")
            if variables(inner):
                raise ParseError("exponent must be constant", tok.pos, "constant exponent")
            return sign * float(evaluate(inner, np.zeros(max(self.dim, 1))))
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.pos, "constant exponent")

    def base(self) -> Expression:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            m = re.fullmatch(r"x(\d+)", tok.text)
            if m:
                idx = int(m.group(1))
                if idx < 1 or idx > self.dim:
                    raise UnknownVariable(f"variable {tok.text} out of range for dim={self.dim}", tok.pos, f"x1..x{self.dim}")
                return Var(idx)
            if tok.text not in FUNCTIONS:
                raise UnknownFunction(f"unknown function {tok.text!r}", tok.pos, "one of " + ", ".join(FUNCTIONS))
            self._expect("(")
            arg = self.expr()
            self._expect(")")
            return Func(tok.text, arg)
        if self._accept("("):
            e = self.expr()
            self._expect(")")
            return e
        if self._accept("-"):
            return Neg(self.base())
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.pos, "number, variable, function or '('")


def parse(source: str, dim: int) -> Expression:
    """Parse ``source`` into an expression over ``x1 .. x{dim}``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not source or not source.strip():
        raise ParseError("empty expression", 0, "expression")
    return _Parser(source, dim).parse()


# ---------------------------------------------------------------------------
# Second-order jets


class Jet2:
    """Value, gradient and Hessian of a scalar field at a batch of points.

    ``value`` has the batch shape ``B``; ``grad`` is ``B + (n,)`` and ``hess``
    is ``B + (n, n)``.
    """

    __slots__ = ("value", "grad", "hess")
    __array_priority__ = 100

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def constant(cls, c, batch_shape, n):
        v = np.broadcast_to(np.asarray(c, dtype=float), batch_shape).copy()
        return cls(v, np.zeros(batch_shape + (n,)), np.zeros(batch_shape + (n, n)))

    @classmethod
    def variable(cls, x, i):
        """Jet of the coordinate ``x_{i+1}`` (0-based ``i``) at points ``x``."""
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        g = np.zeros(x.shape)
        g[..., i] = 1.0
        return cls(x[..., i].copy(), g, np.zeros(x.shape[:-1] + (n, n)))

    @property
    def n(self) -> int:
        return self.grad.shape[-1]

    def _lift(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            return other
        return Jet2.constant(other, np.shape(self.value), self.n)

    def __add__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.value + other, self.grad, self.hess)
        return Jet2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            c = np.asarray(other, dtype=float)
            return Jet2(self.value * c, self.grad * c[..., None], self.hess * c[..., None, None])
        a, b = self, other
        ga, gb = a.grad, b.grad
        cross = ga[..., :, None] * gb[..., None, :]
        hess = a.hess * b.value[..., None, None] + b.hess * a.value[..., None, None] + cross + np.swapaxes(cross, -1, -2)
        return Jet2(a.value * b.value, ga * b.value[..., None] + gb * a.value[..., None], hess)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet2":
        v = self.value
        return self._chain(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def __truediv__(self, other):
        if not isinstance(other, Jet2):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def _chain(self, f, df, d2f) -> "Jet2":
        g = self.grad
        hess = self.hess * df[..., None, None] + d2f[..., None, None] * (g[..., :, None] * g[..., None, :])
        return Jet2(f, g * df[..., None], hess)

    def __pow__(self, p: float):
        v = self.value
        p = float(p)
        if p == 0.0:
            return Jet2.constant(1.0, np.shape(v), self.n)
        return self._chain(v**p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))

    def exp(self):
        e = np.exp(self.value)
        return self._chain(e, e, e)

    def log(self):
        v = self.value
        return self._chain(np.log(v), 1.0 / v, -1.0 / v**2)

    def sqrt(self):
        s = np.sqrt(self.value)
        return self._chain(s, 0.5 / s, -0.25 / (s * self.value))

    def sin(self):
        s, c = np.sin(self.value), np.cos(self.value)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.value), np.cos(self.value)
        return self._chain(c, -s, -c)

    def entry(self, *idx) -> "Jet2":
        """Select trailing batch entries, e.g. ``J.entry(i, j)`` of a matrix of jets."""
        k = (Ellipsis,) + idx
        return Jet2(self.value[k], self.grad[k + (slice(None),)], self.hess[k + (slice(None), slice(None))])

    def __repr__(self) -> str:
        return f"Jet2(value={self.value!r}, grad={self.grad!r}, hess={self.hess!r})"


# ---------------------------------------------------------------------------
# Evaluation


def _check(bad, x, message):
    if np.any(bad):
        x = np.asarray(x)
        mask = np.broadcast_to(bad, x.shape[:-1]).reshape(-1)
        raise DomainError(message, x.reshape(-1, x.shape[-1])[np.argmax(mask)])


def _check_pow(base_value, p, x):
    if float(p).is_integer():
        if p < 0:
            _check(base_value == 0.0, x, "zero raised to a negative power")
    else:
        _check(base_value <= 0.0 if p < 0 else base_value < 0.0, x, f"non-integer power {p} of a nonpositive base")


def _eval(e: Expression, x, lift, var):
    """Shared tree walk; ``lift``/``var`` build leaves for values or jets."""
    if isinstance(e, Const):
        return lift(e.value)
    if isinstance(e, Var):
        return var(e.index - 1)
    if isinstance(e, Neg):
        return -_eval(e.arg, x, lift, var)
    if isinstance(e, BinOp):
        a = _eval(e.left, x, lift, var)
        b = _eval(e.right, x, lift, var)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        bv = b.value if isinstance(b, Jet2) else b
        _check(bv == 0.0, x, "division by zero")
        return a / b
    if isinstance(e, Pow):
        a = _eval(e.base, x, lift, var)
        _check_pow(a.value if isinstance(a, Jet2) else a, e.exponent, x)
        return a**e.exponent
    if isinstance(e, Func):
        a = _eval(e.arg, x, lift, var)
        av = a.value if isinstance(a, Jet2) else a
        if e.name == "log":
            _check(av <= 0.0, x, "log of a nonpositive number")
        elif e.name == "sqrt":
            _check(av <= 0.0, x, "sqrt of a nonpositive number")
        if isinstance(a, Jet2):
            return getattr(a, e.name)()
        return getattr(np, e.name)(a)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expression, x) -> np.ndarray:
    """Value of ``e`` at points ``x`` of shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]

    def lift(c):
        return np.full(batch, c, dtype=float)

    def var(i):
        if i >= x.shape[-1]:
            raise DomainError(f"point has no coordinate x{i + 1}")
        return x[..., i]

    with np.errstate(all="ignore"):
        out = _eval(e, x, lift, var)
    return np.broadcast_to(out, batch).astype(float)


def eval_jet2(e: Expression, x) -> Jet2:
    """Value, gradient and Hessian of ``e`` at points ``x`` of shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    batch, n = x.shape[:-1], x.shape[-1]

    def lift(c):
        return Jet2.constant(c, batch, n)

    def var(i):
        if i >= n:
            raise DomainError(f"point has no coordinate x{i + 1}")
        return Jet2.variable(x, i)

    with np.errstate(all="ignore"):
        return _eval(e, x, lift, var)
