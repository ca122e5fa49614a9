"""Expression trees for smooth vector fields.

Nodes are frozen dataclasses, so structural equality and hashing come for
free.  Constants are kept as :class:`fractions.Fraction` so that rational
coefficients such as ``8/3`` survive parsing, differentiation and printing
without rounding.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt")


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownIdentifierError(ParseError):
    pass


class EvaluationError(ArithmeticError):
    """Domain violation while evaluating an expression."""


# ---------------------------------------------------------------------------
# nodes


class Expr:
    precedence = 100

    def diff(self, index: int) -> "Expr":
        return derivative(self, index)

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: Fraction


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int  # 0-based; printed as x{index+1}


@dataclass(frozen=True, eq=True)
class Add(Expr):
    left: Expr
    right: Expr
    precedence = 10


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr
    precedence = 10


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    left: Expr
    right: Expr
    precedence = 20


@dataclass(frozen=True, eq=True)
class Div(Expr):
    left: Expr
    right: Expr
    precedence = 20


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    precedence = 30


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = 40


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def const(value) -> Const:
    return Const(Fraction(value))


def _is_const(e: Expr, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# ---------------------------------------------------------------------------
# simplifying constructors (used by differentiation)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    if a == b:
        return ZERO
    return Sub(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a, -1):
        return neg(b)
    if _is_const(b, -1):
        return neg(a)
    if _is_const(b):
        a, b = b, a
    if _is_const(a) and isinstance(b, Mul) and _is_const(b.left):
        return mul(Const(a.value * b.left.value), b.right)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        raise ExpressionError("symbolic division by zero")
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    if _is_const(b):
        return mul(Const(1 / b.value), a)
    return Div(a, b)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        if a.value == 0 and n < 0:
            raise ExpressionError("symbolic division by zero")
        return Const(a.value**n)
    return Pow(a, n)


def func(name: str, a: Expr) -> Expr:
    if isinstance(a, Const) and a.value == 0:
        if name in ("sin", "sqrt"):
            return ZERO
        return ONE
    return Func(name, a)


def sum_exprs(terms: Sequence[Expr]) -> Expr:
    out: Expr = ZERO
    for t in terms:
        out = add(out, t)
    return out


# ---------------------------------------------------------------------------
# differentiation


def derivative(e: Expr, index: int) -> Expr:
    """Symbolic partial derivative with respect to ``x{index+1}``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == index else ZERO
    if isinstance(e, Add):
        return add(derivative(e.left, index), derivative(e.right, index))
    if isinstance(e, Sub):
        return sub(derivative(e.left, index), derivative(e.right, index))
    if isinstance(e, Neg):
        return neg(derivative(e.arg, index))
    if isinstance(e, Mul):
        return add(
            mul(derivative(e.left, index), e.right),
            mul(e.left, derivative(e.right, index)),
        )
    if isinstance(e, Div):
        da = derivative(e.left, index)
        db = derivative(e.right, index)
        if _is_const(db, 0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, 2))
    if isinstance(e, Pow):
        db = derivative(e.base, index)
        return mul(mul(const(e.exponent), power(e.base, e.exponent - 1)), db)
    if isinstance(e, Func):
        da = derivative(e.arg, index)
        if _is_const(da, 0):
            return ZERO
        if e.name == "sin":
            outer = func("cos", e.arg)
        elif e.name == "cos":
            outer = neg(func("sin", e.arg))
        elif e.name == "exp":
            outer = e
        elif e.name == "sqrt":
            outer = div(ONE, mul(const(2), e))
        else:
            raise ExpressionError(f"unknown function {e.name!r}")
        return mul(outer, da)
    raise TypeError(f"not an expression node: {e!r}")


def variables(e: Expr) -> set[int]:
    if isinstance(e, Var):
        return {e.index}
    out: set[int] = set()
    for child in _children(e):
        out |= variables(child)
    return out


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    if isinstance(e, Pow):
        return (e.base,)
    return ()


# ---------------------------------------------------------------------------
# printing


def _fmt_const(c: Fraction) -> str:
    if c.denominator == 1:
        s = str(c.numerator)
    else:
        s = f"{c.numerator}/{c.denominator}"
    if c < 0 or c.denominator != 1:
        return f"({s})"
    return s


def to_text(e: Expr) -> str:
    """Render with the minimum parentheses that re-parse to the same tree."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, e.precedence, strict=False)
    if isinstance(e, Pow):
        exp = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return _wrap(e.base, e.precedence, strict=True) + "^" + exp
    op = {Add: " + ", Sub: " - ", Mul: "*", Div: "/"}[type(e)]
    left = _wrap(e.left, e.precedence, strict=False)
    right = _wrap(e.right, e.precedence, strict=True)
    return left + op + right


def _wrap(child: Expr, prec: int, strict: bool) -> str:
    text = to_text(child)
    if child.precedence < prec or (strict and child.precedence == prec):
        return f"({text})"
    return text


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


@dataclass
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(text: str, line: int, col0: int) -> list[_Token]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            j = pos
            while j < len(text) and text[j].isspace():
                j += 1
            raise ParseError(f"unexpected character {text[j]!r}", line, col0 + j)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), col0 + m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", col0 + len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dimension, parameters, line, col0):
        self.tokens = _tokenize(text, line, col0)
        self.i = 0
        self.dimension = dimension
        self.parameters = parameters
        self.line = line

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None, cls=ParseError):
        tok = tok or self.peek()
        return cls(msg, self.line, tok.column)

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek().kind != "end":
            raise self.error(f"unexpected {self.peek().text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            e = _fold(Add(e, rhs) if op == "+" else Sub(e, rhs))
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            rhs = self.unary()
            if op == "/" and _is_const(rhs, 0):
                raise self.error("division by constant zero")
            e = _fold(Mul(e, rhs) if op == "*" else Div(e, rhs))
        return e

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.take()
            return _fold(Neg(self.unary()))
        if self.peek().text == "+":
            self.take()
            return self.unary()
        return self.pow()

    def pow(self) -> Expr:
        base = self.atom()
        if self.peek().text in ("^", "**"):
            self.take()
            if self.peek().text == "(":
                self.take()
                n = self._signed_int()
                if self.take().text != ")":
                    raise self.error("expected ')'")
            else:
                n = self._signed_int()
            if _is_const(base, 0) and n < 0:
                raise self.error("zero to a negative power")
            return _fold(Pow(base, n))
        return base

    def _signed_int(self) -> int:
        sign = 1
        if self.peek().text == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok.kind != "num" or not tok.text.isdigit():
            raise self.error("exponent must be an integer", tok)
        return sign * int(tok.text)

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(Fraction(tok.text))
        if tok.text == "(":
            e = self.expr()
            if self.take().text != ")":
                raise self.error("expected ')'", self.tokens[self.i - 1])
            return e
        if tok.kind == "name":
            name = tok.text
            if name in FUNCTIONS:
                if self.take().text != "(":
                    raise self.error(f"expected '(' after {name}", self.tokens[self.i - 1])
                arg = self.expr()
                if self.take().text != ")":
                    raise self.error("expected ')'", self.tokens[self.i - 1])
                return _fold(Func(name, arg))
            m = re.fullmatch(r"x([1-9][0-9]*)", name)
            if m and int(m.group(1)) <= self.dimension:
                return Var(int(m.group(1)) - 1)
            if name in self.parameters:
                return Const(self.parameters[name])
            raise self.error(f"unknown identifier {name!r}", tok, UnknownIdentifierError)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}", tok)


def _fold(e: Expr) -> Expr:
    """Constant folding only; keeps the parsed shape otherwise."""
    if isinstance(e, (Add, Sub, Mul, Div)) and _is_const(e.left) and _is_const(e.right):
        a, b = e.left.value, e.right.value
        if isinstance(e, Add):
            return Const(a + b)
        if isinstance(e, Sub):
            return Const(a - b)
        if isinstance(e, Mul):
            return Const(a * b)
        return Const(a / b)
    if isinstance(e, Neg) and _is_const(e.arg):
        return Const(-e.arg.value)
    if isinstance(e, Pow) and _is_const(e.base):
        return Const(e.base.value**e.exponent)
    return e


def parse_expression(
    text: str,
    dimension: int,
    parameters: Mapping[str, Fraction] | None = None,
    *,
    line: int = 1,
    column: int = 1,
) -> Expr:
    return _Parser(text, dimension, dict(parameters or {}), line, column).parse()


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, x: Sequence[float]) -> float:
    """Scalar evaluation; domain violations raise :class:`EvaluationError`."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        return float(x[e.index])
    if isinstance(e, Add):
        return evaluate(e.left, x) + evaluate(e.right, x)
    if isinstance(e, Sub):
        return evaluate(e.left, x) - evaluate(e.right, x)
    if isinstance(e, Mul):
        return evaluate(e.left, x) * evaluate(e.right, x)
    if isinstance(e, Neg):
        return -evaluate(e.arg, x)
    if isinstance(e, Div):
        den = evaluate(e.right, x)
        if den == 0.0:
            raise EvaluationError(f"division by zero in {to_text(e)}")
        return evaluate(e.left, x) / den
    if isinstance(e, Pow):
        b = evaluate(e.base, x)
        if b == 0.0 and e.exponent < 0:
            raise EvaluationError(f"division by zero in {to_text(e)}")
        return b**e.exponent
    if isinstance(e, Func):
        a = evaluate(e.arg, x)
        if e.name == "sqrt":
            if a < 0:
                raise EvaluationError(f"sqrt of negative value {a!r}")
            return math.sqrt(a)
        try:
            return getattr(math, e.name)(a)
        except OverflowError as exc:
            raise EvaluationError(str(exc)) from exc
    raise TypeError(f"not an expression node: {e!r}")


def _to_numpy_source(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Func):
        return f"np.{e.name}({_to_numpy_source(e.arg)})"
    if isinstance(e, Neg):
        return f"(-{_to_numpy_source(e.arg)})"
    if isinstance(e, Pow):
        return f"({_to_numpy_source(e.base)}**{e.exponent})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    return f"({_to_numpy_source(e.left)} {op} {_to_numpy_source(e.right)})"


def compile_exprs(exprs: Sequence[Expr], dimension: int) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions into a vectorised function.

    The returned callable maps an array of shape ``(..., dimension)`` to shape
    ``(..., len(exprs))``.  Floating point faults raise
    :class:`EvaluationError`.
    """
    args = "\n".join(f"    x{i} = X[..., {i}]" for i in range(dimension))
    body = "\n".join(
        f"    out[..., {k}] = {_to_numpy_source(e)}" for k, e in enumerate(exprs)
    )
    src = (
        "def _compiled(X):\n"
        f"{args}\n"
        f"    out = np.empty(X.shape[:-1] + ({len(exprs)},))\n"
        f"{body}\n"
        "    return out\n"
    )
    namespace: dict = {"np": np}
    exec(compile(src, "<foliacert-expr>", "exec"), namespace)
    raw = namespace["_compiled"]

    def compiled(X):
        X = np.asarray(X, dtype=float)
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                return raw(X)
        except FloatingPointError as exc:
            raise EvaluationError(str(exc)) from exc

    compiled.raw = raw
    compiled.source = src
    return compiled


# ---------------------------------------------------------------------------
# interval enclosure (outward rounded)


def _down(v):
    return np.nextafter(v, -np.inf)


def _up(v):
    return np.nextafter(v, np.inf)


def interval_eval(e: Expr, box: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Enclosure of the range of ``e`` over an axis-aligned box."""
    if isinstance(e, Const):
        v = float(e.value)
        if Fraction(v) == e.value:
            return v, v
        return float(_down(v)), float(_up(v))
    if isinstance(e, Var):
        lo, hi = box[e.index]
        return float(lo), float(hi)
    if isinstance(e, Neg):
        lo, hi = interval_eval(e.arg, box)
        return -hi, -lo
    if isinstance(e, (Add, Sub)):
        a = interval_eval(e.left, box)
        b = interval_eval(e.right, box)
        if isinstance(e, Add):
            return float(_down(a[0] + b[0])), float(_up(a[1] + b[1]))
        return float(_down(a[0] - b[1])), float(_up(a[1] - b[0]))
    if isinstance(e, Mul):
        a = interval_eval(e.left, box)
        b = interval_eval(e.right, box)
        prods = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
        return float(_down(min(prods))), float(_up(max(prods)))
    if isinstance(e, Div):
        a = interval_eval(e.left, box)
        b = interval_eval(e.right, box)
        if b[0] <= 0.0 <= b[1]:
            raise EvaluationError("denominator interval contains zero")
        inv = (float(_down(1.0 / b[1])), float(_up(1.0 / b[0])))
        prods = [a[0] * inv[0], a[0] * inv[1], a[1] * inv[0], a[1] * inv[1]]
        return float(_down(min(prods))), float(_up(max(prods)))
    if isinstance(e, Pow):
        lo, hi = interval_eval(e.base, box)
        n = e.exponent
        if n < 0:
            if lo <= 0.0 <= hi:
                raise EvaluationError("negative power of interval containing zero")
            lo, hi = float(_down(1.0 / hi)), float(_up(1.0 / lo))
            n = -n
        cands = [lo**n, hi**n]
        if n % 2 == 0 and lo <= 0.0 <= hi:
            return 0.0, float(_up(max(cands)))
        return float(_down(min(cands))), float(_up(max(cands)))
    if isinstance(e, Func):
        lo, hi = interval_eval(e.arg, box)
        if e.name == "exp":
            return float(_down(math.exp(lo))), float(_up(math.exp(hi)))
        if e.name == "sqrt":
            if lo < 0:
                raise EvaluationError("sqrt of interval with negative part")
            return float(_down(math.sqrt(lo))), float(_up(math.sqrt(hi)))
        return _trig_interval(e.name, lo, hi)
    raise TypeError(f"not an expression node: {e!r}")


def _trig_interval(name: str, lo: float, hi: float) -> tuple[float, float]:
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    f = math.sin if name == "sin" else math.cos
    # critical points: sin at pi/2 + k pi, cos at k pi
    offset = math.pi / 2 if name == "sin" else 0.0
    vals = [f(lo), f(hi)]
    k = math.ceil((lo - offset) / math.pi)
    while offset + k * math.pi <= hi:
        vals.append(f(offset + k * math.pi))
        k += 1
    return max(-1.0, float(_down(min(vals)))), min(1.0, float(_up(max(vals))))
