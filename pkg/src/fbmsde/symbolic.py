"""Symbolic scalar expressions on R^n.

Expression trees over variables ``x1..xn`` with operations
{+, -, *, /, pow(rational), exp, log, sin, cos}.  The module provides exact
symbolic differentiation, vectorized numpy evaluation, and a small infix
parser.  Simplification is deliberately limited to constant folding and
zero/one pruning: correctness over beauty.  A node-count cap guards against
expression blowup under repeated differentiation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError, NumericalError

DEFAULT_NODE_CAP = 1_000_000

_FUNCTIONS = ("exp", "log", "sin", "cos")


def short_str(e, budget=100):
    """A rendering of ``e`` truncated to roughly ``budget`` characters.

    Repeated differentiation produces heavily shared DAGs whose full infix
    form can be astronomically long; error messages must never try to build
    it.  Rendering stops once the budget is spent.
    """
    pieces = []
    spent = 0

    def emit(text):
        nonlocal spent
        pieces.append(text)
        spent += len(text)

    def walk(node):
        if spent > budget:
            return
        if isinstance(node, (Const, Var)):
            emit(str(node))
        elif isinstance(node, _Binary):
            emit("(")
            walk(node.a)
            emit(node.symbol)
            walk(node.b)
            emit(")")
        elif isinstance(node, Pow):
            emit("(")
            walk(node.base)
            q = node.exponent
            emit(f")^({q.numerator}/{q.denominator})" if q.denominator != 1
                 else f")^{q.numerator}")
        else:
            emit(f"{node.fn}(")
            walk(node.arg)
            emit(")")

    walk(e)
    text = "".join(pieces)
    return text if spent <= budget else text[:budget] + "..."


def distinct_size(e):
    """Number of distinct nodes in the expression DAG.

    ``size`` counts the unfolded tree and overstates shared structure;
    this is the honest measure of evaluation and differentiation cost.
    """
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(node._children())
    return len(seen)


class Expr:
    """Base class for immutable expression nodes.

    Every node carries its unfolded subtree node count (``size``) and the
    number of ambient variables it references (``max_var``, so the
    expression is a function on R^n for any n >= max_var).  Subtrees are
    shared aggressively, so evaluation and differentiation are memoized per
    node and cost is governed by :func:`distinct_size`, not ``size``.
    """

    __slots__ = ()

    size: int
    max_var: int

    def _children(self):
        return ()

    def diff(self, index):
        """Exact partial derivative with respect to x_{index+1} (0-based)."""
        return self._diff(index, {})

    def _diff(self, index, memo):
        raise NotImplementedError

    def _eval(self, cols, memo):
        raise NotImplementedError

    def evaluate(self, x):
        """Evaluate at one point (1-D input) or a batch of points (2-D).

        Returns a float for a single point and a 1-D array for a batch.
        Raises :class:`NumericalError` naming the offending subexpression on
        division by zero, log/power domain violations, or non-finite results.
        """
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if pts.ndim != 2:
            raise DomainError(f"points must be 1-D or 2-D, got shape {pts.shape}")
        if pts.shape[1] < self.max_var:
            raise DomainError(
                f"expression references x{self.max_var} but points have "
                f"dimension {pts.shape[1]}"
            )
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = np.asarray(self._eval(pts, {}), dtype=float)
        if out.ndim == 0:
            out = np.full(pts.shape[0], float(out))
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite value from {short_str(self)}")
        return float(out[0]) if single else out


@dataclass(frozen=True)
class Const(Expr):
    value: float

    size = 1
    max_var = 0

    def _diff(self, index, memo):
        return Const(0.0)

    def _eval(self, cols, memo):
        return self.value

    def __str__(self):
        return format(self.value, ".17g")


@dataclass(frozen=True)
class Var(Expr):
    index: int

    size = 1

    def __post_init__(self):
        if self.index < 0:
            raise DomainError(f"variable index must be >= 0, got {self.index}")

    @property
    def max_var(self):
        return self.index + 1

    def _diff(self, index, memo):
        return Const(1.0 if index == self.index else 0.0)

    def _eval(self, cols, memo):
        return cols[:, self.index]

    def __str__(self):
        return f"x{self.index + 1}"


class _Binary(Expr):
    __slots__ = ("a", "b", "size", "max_var")

    symbol = "?"

    def __init__(self, a, b):
        self.a = a
        self.b = b
        self.size = a.size + b.size + 1
        self.max_var = max(a.max_var, b.max_var)

    def _children(self):
        return (self.a, self.b)

    def _diff(self, index, memo):
        out = memo.get(id(self))
        if out is None:
            out = self._diff_rule(index, memo)
            memo[id(self)] = out
        return out

    def _eval(self, cols, memo):
        out = memo.get(id(self))
        if out is None:
            out = self._eval_rule(cols, memo)
            memo[id(self)] = out
        return out

    def __str__(self):
        prec = _PRECEDENCE[type(self)]
        left = _wrap(self.a, prec, strict=False)
        right = _wrap(self.b, prec, strict=type(self) in (Sub, Div))
        return f"{left}{self.symbol}{right}"


class Add(_Binary):
    __slots__ = ()
    symbol = "+"

    def _diff_rule(self, index, memo):
        return add(self.a._diff(index, memo), self.b._diff(index, memo))

    def _eval_rule(self, cols, memo):
        return self.a._eval(cols, memo) + self.b._eval(cols, memo)


class Sub(_Binary):
    __slots__ = ()
    symbol = "-"

    def _diff_rule(self, index, memo):
        return sub(self.a._diff(index, memo), self.b._diff(index, memo))

    def _eval_rule(self, cols, memo):
        return self.a._eval(cols, memo) - self.b._eval(cols, memo)


class Mul(_Binary):
    __slots__ = ()
    symbol = "*"

    def _diff_rule(self, index, memo):
        da, db = self.a._diff(index, memo), self.b._diff(index, memo)
        return add(mul(da, self.b), mul(self.a, db))

    def _eval_rule(self, cols, memo):
        return self.a._eval(cols, memo) * self.b._eval(cols, memo)


class Div(_Binary):
    __slots__ = ()
    symbol = "/"

    def _diff_rule(self, index, memo):
        da, db = self.a._diff(index, memo), self.b._diff(index, memo)
        return sub(div(da, self.b), div(mul(self.a, db), mul(self.b, self.b)))

    def _eval_rule(self, cols, memo):
        denom = self.b._eval(cols, memo)
        if np.any(np.asarray(denom) == 0.0):
            raise NumericalError(f"division by zero in {short_str(self)}")
        return self.a._eval(cols, memo) / denom


class Pow(Expr):
    """base ** exponent with a fixed rational exponent."""

    __slots__ = ("base", "exponent", "size", "max_var")

    def __init__(self, base, exponent):
        if not isinstance(exponent, Fraction):
            raise DomainError("power exponent must be a Fraction")
        self.base = base
        self.exponent = exponent
        self.size = base.size + 1
        self.max_var = base.max_var

    def _children(self):
        return (self.base,)

    def _diff(self, index, memo):
        out = memo.get(id(self))
        if out is None:
            # d(u^q) = q * u^(q-1) * u'
            q = self.exponent
            out = mul(mul(Const(float(q)), powr(self.base, q - 1)),
                      self.base._diff(index, memo))
            memo[id(self)] = out
        return out

    def _eval(self, cols, memo):
        out = memo.get(id(self))
        if out is not None:
            return out
        base = np.asarray(self.base._eval(cols, memo))
        q = self.exponent
        if q.denominator == 1:
            if q < 0 and np.any(base == 0.0):
                raise NumericalError(
                    f"zero base with negative power in {short_str(self)}"
                )
            out = np.power(base, int(q))
        else:
            if np.any(base < 0.0):
                raise NumericalError(
                    f"negative base with fractional power in {short_str(self)}"
                )
            if q < 0 and np.any(base == 0.0):
                raise NumericalError(
                    f"zero base with negative power in {short_str(self)}"
                )
            out = np.power(base, float(q))
        memo[id(self)] = out
        return out

    def __str__(self):
        base = _wrap(self.base, _PRECEDENCE[Pow], strict=True)
        q = self.exponent
        if q.denominator == 1 and q >= 0:
            return f"{base}^{q.numerator}"
        if q.denominator == 1:
            return f"{base}^({q.numerator})"
        return f"{base}^({q.numerator}/{q.denominator})"


class Call(Expr):
    __slots__ = ("fn", "arg", "size", "max_var")

    def __init__(self, fn, arg):
        if fn not in _FUNCTIONS:
            raise DomainError(f"unknown function {fn!r}; supported: {_FUNCTIONS}")
        self.fn = fn
        self.arg = arg
        self.size = arg.size + 1
        self.max_var = arg.max_var

    def _children(self):
        return (self.arg,)

    def _diff(self, index, memo):
        out = memo.get(id(self))
        if out is None:
            da = self.arg._diff(index, memo)
            if self.fn == "exp":
                out = mul(self, da)
            elif self.fn == "log":
                out = div(da, self.arg)
            elif self.fn == "sin":
                out = mul(call("cos", self.arg), da)
            else:
                out = mul(Const(-1.0), mul(call("sin", self.arg), da))
            memo[id(self)] = out
        return out

    def _eval(self, cols, memo):
        out = memo.get(id(self))
        if out is not None:
            return out
        arg = np.asarray(self.arg._eval(cols, memo))
        if self.fn == "exp":
            out = np.exp(arg)
        elif self.fn == "log":
            if np.any(arg <= 0.0):
                raise NumericalError(
                    f"log of non-positive value in {short_str(self)}"
                )
            out = np.log(arg)
        elif self.fn == "sin":
            out = np.sin(arg)
        else:
            out = np.cos(arg)
        memo[id(self)] = out
        return out

    def __str__(self):
        return f"{self.fn}({self.arg})"


_PRECEDENCE = {Add: 1, Sub: 1, Mul: 2, Div: 2, Pow: 3, Call: 4, Const: 4, Var: 4}


def _prec(e):
    if isinstance(e, Const) and e.value < 0:
        return 1  # negative literals read like a sum; parenthesize in products
    return _PRECEDENCE[type(e)]


def _wrap(e, parent_prec, strict):
    p = _prec(e)
    if p < parent_prec or (strict and p == parent_prec):
        return f"({e})"
    return str(e)


# ---------------------------------------------------------------------------
# Smart constructors: constant folding plus zero/one pruning, nothing more.


def const(value):
    return Const(float(value))


def var(index):
    return Var(index)


def _const_value(e):
    return e.value if isinstance(e, Const) else None


def add(a, b):
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return Const(va + vb)
    if va == 0.0:
        return b
    if vb == 0.0:
        return a
    return Add(a, b)


def sub(a, b):
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return Const(va - vb)
    if vb == 0.0:
        return a
    if va == 0.0:
        return mul(Const(-1.0), b)
    return Sub(a, b)


def mul(a, b):
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return Const(va * vb)
    if va == 0.0 or vb == 0.0:
        return Const(0.0)
    if va == 1.0:
        return b
    if vb == 1.0:
        return a
    return Mul(a, b)


def div(a, b):
    va, vb = _const_value(a), _const_value(b)
    if vb is not None and vb != 0.0:
        if va is not None:
            return Const(va / vb)
        if vb == 1.0:
            return a
    if va == 0.0 and vb != 0.0:
        return Const(0.0)
    return Div(a, b)


def powr(base, exponent):
    """base ** exponent for a rational exponent (int, Fraction, or exact float)."""
    if not isinstance(exponent, Fraction):
        exponent = Fraction(exponent)
    if exponent == 0:
        return Const(1.0)
    if exponent == 1:
        return base
    vb = _const_value(base)
    if vb is not None:
        if exponent.denominator == 1 and (vb != 0.0 or exponent > 0):
            return Const(vb ** int(exponent))
        if vb > 0.0:
            return Const(vb ** float(exponent))
    return Pow(base, exponent)


def call(fn, arg):
    va = _const_value(arg)
    if va is not None:
        try:
            return Const(getattr(math, fn)(va))
        except (ValueError, OverflowError):
            pass  # leave the node in place; evaluation reports the singularity
    return Call(fn, arg)


# ---------------------------------------------------------------------------
# Infix parser.  Grammar (documented in the README):
#
#   expr   := term (("+" | "-") term)*
#   term   := unary (("*" | "/") unary)*
#   unary  := ("+" | "-") unary | power
#   power  := atom ("^" unary)?          -- right-associative, exponent must
#                                           reduce to a rational constant
#   atom   := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"
#
# Variables are x1, x2, ...; functions are exp, log, sin, cos.

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise DomainError(f"unexpected character {rest[0]!r} at position {pos}")
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num")), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


_VAR_NAME = re.compile(r"x([1-9]\d*)$")


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message):
        kind, value, pos = self.peek()
        what = "end of input" if kind == "end" else repr(value)
        raise DomainError(f"{message}, got {what} at position {pos}")

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail("expected end of expression")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            inner = self.unary()
            return mul(Const(-1.0), inner)
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            pos = self.take()[2]
            exponent = self.unary()
            return powr(base, self._rational(exponent, pos))
        return base

    def _rational(self, e, pos):
        v = _const_value(e)
        if v is None:
            raise DomainError(
                f"exponent after '^' at position {pos} must be a rational "
                f"constant, got {short_str(e)}"
            )
        frac = Fraction(v).limit_denominator(10**6)
        if abs(float(frac) - v) > 1e-12 * max(1.0, abs(v)):
            raise DomainError(f"exponent {v} at position {pos} is not rational")
        return frac

    def atom(self):
        kind, value, pos = self.peek()
        if kind == "num":
            self.take()
            return Const(value)
        if kind == "name":
            self.take()
            if value == "pi":
                return Const(math.pi)
            m = _VAR_NAME.match(value)
            if m:
                return Var(int(m.group(1)) - 1)
            if value in _FUNCTIONS:
                if self.peek()[:2] != ("op", "("):
                    self.fail(f"expected '(' after {value}")
                self.take()
                arg = self.expr()
                if self.peek()[:2] != ("op", ")"):
                    self.fail("expected ')'")
                self.take()
                return call(value, arg)
            raise DomainError(
                f"unknown name {value!r} at position {pos}; variables are "
                f"x1, x2, ... and functions are {', '.join(_FUNCTIONS)}"
            )
        if kind == "op" and value == "(":
            self.take()
            e = self.expr()
            if self.peek()[:2] != ("op", ")"):
                self.fail("expected ')'")
            self.take()
            return e
        self.fail("expected a number, variable, function, or '('")


def parse_expr(text):
    """Parse one infix expression into an :class:`Expr`."""
    if not text.strip():
        raise DomainError("empty expression")
    return _Parser(text).parse()
