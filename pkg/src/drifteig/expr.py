"""Arithmetic expressions in ``x1, x2`` with exact first derivatives.

Expressions are parsed once into an immutable tree.  Three evaluation paths
share the same tree:

* :func:`evaluate` / :func:`grad` walk the tree with plain floats and
  :class:`Dual` numbers (reference path, raises :class:`DomainError`);
* :meth:`Expr.scalar_fn` / :meth:`Expr.scalar_grad_fn` compile the tree to
  straight-line Python using :mod:`math` (hot path for ODE right-hand sides);
* :meth:`Expr.array_fn` / :meth:`Expr.array_grad_fn` compile to numpy code
  that accepts arrays and yields ``nan`` where the scalar path would raise.

Grammar (whitespace ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom ("^" unary)?          # right associative, constant exponent
    atom    := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"
    VAR     := "x1" | "x2" | "x" | "y"
    FUNC    := "sin" | "cos" | "exp" | "ln" | "sqrt" | "abs" | "tanh"
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Unary", "Binary", "Dual",
    "ExprError", "ExprSyntaxError", "UnknownIdentifierError", "DomainError",
    "parse", "evaluate", "grad", "to_source",
]

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "abs", "tanh")
VARIABLES = {"x1": "x1", "x2": "x2", "x": "x1", "y": "x2"}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class DomainError(ExprError, ArithmeticError):
    """Raised when an operation leaves the real domain (ln/sqrt of a negative, ...)."""


# --------------------------------------------------------------------------- #
# tree
# --------------------------------------------------------------------------- #

class Expr:
    """Base class of expression nodes.  Nodes are frozen dataclasses."""

    def __call__(self, x1: float, x2: float) -> float:
        return self.scalar_fn(x1, x2)

    def __str__(self) -> str:
        return to_source(self)

    @cached_property
    def scalar_fn(self) -> Callable[[float, float], float]:
        return _compile(self, derivative=False, vectorized=False)

    @cached_property
    def scalar_grad_fn(self) -> Callable[[float, float], tuple[float, float, float]]:
        """Compiled ``(x1, x2) -> (value, d/dx1, d/dx2)``."""
        return _compile(self, derivative=True, vectorized=False)

    @cached_property
    def array_fn(self) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
        return _compile(self, derivative=False, vectorized=True)

    @cached_property
    def array_grad_fn(self):
        return _compile(self, derivative=True, vectorized=True)

    @property
    def is_constant(self) -> bool:
        return not _has_var(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str  # "x1" or "x2"


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str  # "neg" or one of FUNCTIONS
    arg: Expr


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str  # + - * / ^
    left: Expr
    right: Expr


def _has_var(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Unary):
        return _has_var(e.arg)
    if isinstance(e, Binary):
        return _has_var(e.left) or _has_var(e.right)
    return False


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", _byte_offset(src, pos))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(src, start)))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(src, n)))
    return tokens


def _byte_offset(src: str, pos: int) -> int:
    return len(src[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if text != value or kind != "op":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            arg = self.unary()
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Unary("neg", arg)
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, off = self.peek()
        if kind == "op" and text == "^":
            self.take()
            exp_off = self.peek()[2]
            exponent = self.unary()
            if _has_var(exponent):
                raise ExprSyntaxError("exponent must be constant", exp_off)
            try:
                value = evaluate(exponent, (0.0, 0.0))
            except DomainError as err:
                raise ExprSyntaxError(f"invalid exponent ({err})", exp_off) from None
            return Binary("^", base, Const(value))
        return base

    def atom(self) -> Expr:
        kind, text, off = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in VARIABLES:
                return Var(VARIABLES[text])
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            raise UnknownIdentifierError(text, off)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", off)


def parse(src: str) -> Expr:
    """Parse ``src`` into an expression tree.

    Raises
    ------
    ExprSyntaxError
        Malformed input; ``offset`` is the byte offset of the offending token.
    UnknownIdentifierError
        A name that is neither a variable nor a supported function.
    """
    if not src or not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(src).parse()


# --------------------------------------------------------------------------- #
# printing
# --------------------------------------------------------------------------- #

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e: Expr) -> str:
    """Render ``e`` in the input grammar; ``parse(to_source(e))`` rebuilds ``e``."""
    return _show(e)


def _show(e: Expr) -> str:
    if isinstance(e, Const):
        s = repr(float(e.value))
        if s in ("inf", "-inf", "nan"):
            raise ExprError(f"cannot print non-finite constant {s}")
        return f"({s})" if e.value < 0 or s.startswith("-") else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, _PREC["neg"], strict=False)
        return f"{e.op}({_show(e.arg)})"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        if e.op == "^":
            return f"{_wrap(e.left, p, strict=True)}^{_show(e.right)}"
        left = _wrap(e.left, p, strict=False)
        right = _wrap(e.right, p, strict=True)
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression node: {e!r}")


def _wrap(e: Expr, parent: int, strict: bool) -> str:
    s = _show(e)
    if isinstance(e, Binary):
        p = _PREC[e.op]
    elif isinstance(e, Unary) and e.op == "neg":
        p = _PREC["neg"]
    else:
        return s
    if p < parent or (strict and p == parent):
        return f"({s})"
    return s


# --------------------------------------------------------------------------- #
# reference evaluation and Dual numbers
# --------------------------------------------------------------------------- #

def _check(value: float, what: str) -> float:
    if math.isnan(value):
        raise DomainError(f"{what} produced nan")
    return value


def _ln(a: float) -> float:
    if a < 0:
        raise DomainError(f"ln of negative argument {a!r}")
    if a == 0:
        return -math.inf
    return math.log(a)


def _sqrt(a: float) -> float:
    if a < 0:
        raise DomainError(f"sqrt of negative argument {a!r}")
    return math.sqrt(a)


def _div(a: float, b: float) -> float:
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _pow(a: float, k: float) -> float:
    if k == int(k) and abs(k) < 2**31:
        ki = int(k)
        if a == 0 and ki < 0:
            raise DomainError("zero to a negative power")
        try:
            return float(a ** ki)
        except OverflowError:
            return math.copysign(math.inf, a) if ki % 2 else math.inf
    if a < 0:
        raise DomainError(f"negative base {a!r} with non-integer exponent {k!r}")
    if a == 0 and k < 0:
        raise DomainError("zero to a negative power")
    try:
        return a ** k
    except OverflowError:
        return math.inf


def _sign(a: float) -> float:
    return (a > 0) - (a < 0)


@dataclass(frozen=True)
class Dual:
    """First-order forward-mode number carrying d/dx1 and d/dx2."""

    value: float
    d1: float = 0.0
    d2: float = 0.0

    def __add__(self, o: "Dual") -> "Dual":
        return Dual(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    def __sub__(self, o: "Dual") -> "Dual":
        return Dual(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)

    def __mul__(self, o: "Dual") -> "Dual":
        return Dual(self.value * o.value,
                    self.d1 * o.value + self.value * o.d1,
                    self.d2 * o.value + self.value * o.d2)

    def __truediv__(self, o: "Dual") -> "Dual":
        q = _div(self.value, o.value)
        return Dual(q, (self.d1 - q * o.d1) / o.value, (self.d2 - q * o.d2) / o.value)

    def __neg__(self) -> "Dual":
        return Dual(-self.value, -self.d1, -self.d2)

    def scale(self, s: float) -> "Dual":
        return Dual(self.value, self.d1 * s, self.d2 * s)

    def powc(self, k: float) -> "Dual":
        if k == 0:
            return Dual(1.0, 0.0, 0.0)
        v = _pow(self.value, k)
        if k == 1:
            dv = 1.0
        else:
            dv = k * _pow(self.value, k - 1)
        return Dual(v, dv * self.d1, dv * self.d2)

    def apply(self, op: str) -> "Dual":
        v = self.value
        if op == "sin":
            return Dual(math.sin(v), *self._chain(math.cos(v)))
        if op == "cos":
            return Dual(math.cos(v), *self._chain(-math.sin(v)))
        if op == "exp":
            ev = _exp(v)
            return Dual(ev, *self._chain(ev))
        if op == "ln":
            lv = _ln(v)
            return Dual(lv, *self._chain(1.0 / v if v != 0 else math.inf))
        if op == "sqrt":
            s = _sqrt(v)
            return Dual(s, *self._chain(0.5 / s if s != 0 else math.inf))
        if op == "abs":
            return Dual(abs(v), *self._chain(_sign(v)))
        if op == "tanh":
            t = math.tanh(v)
            return Dual(t, *self._chain(1.0 - t * t))
        raise ExprError(f"unknown function {op!r}")

    def _chain(self, dv: float) -> tuple[float, float]:
        return dv * self.d1, dv * self.d2


def _eval_tree(e: Expr, x1, x2, lift):
    if isinstance(e, Const):
        return lift(e.value, None)
    if isinstance(e, Var):
        return x1 if e.name == "x1" else x2
    if isinstance(e, Unary):
        a = _eval_tree(e.arg, x1, x2, lift)
        if isinstance(a, Dual):
            return -a if e.op == "neg" else a.apply(e.op)
        return _SCALAR_UNARY[e.op](a)
    if isinstance(e, Binary):
        a = _eval_tree(e.left, x1, x2, lift)
        if e.op == "^":
            k = e.right.value
            return a.powc(k) if isinstance(a, Dual) else _pow(a, k)
        b = _eval_tree(e.right, x1, x2, lift)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b if isinstance(a, Dual) else _div(a, b)
    raise TypeError(f"not an expression node: {e!r}")


_SCALAR_UNARY = {
    "neg": lambda a: -a,
    "sin": math.sin,
    "cos": math.cos,
    "exp": _exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "abs": abs,
    "tanh": math.tanh,
}


def evaluate(e: Expr, p) -> float:
    """Evaluate ``e`` at the point ``p = (x1, x2)`` by walking the tree."""
    x1, x2 = float(p[0]), float(p[1])
    return _check(_eval_tree(e, x1, x2, lambda v, _: v), "evaluation")


def grad(e: Expr, p) -> tuple[float, float]:
    """Exact gradient of ``e`` at ``p`` via :class:`Dual` arithmetic."""
    x1 = Dual(float(p[0]), 1.0, 0.0)
    x2 = Dual(float(p[1]), 0.0, 1.0)
    out = _eval_tree(e, x1, x2, lambda v, _: Dual(v))
    if not isinstance(out, Dual):
        out = Dual(out)
    _check(out.value, "evaluation")
    return _check(out.d1, "derivative"), _check(out.d2, "derivative")


# --------------------------------------------------------------------------- #
# code generation
# --------------------------------------------------------------------------- #

def _np_ln(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(a)


def _np_sqrt(a):
    with np.errstate(invalid="ignore"):
        return np.sqrt(a)


def _np_div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.true_divide(a, b)


def _np_exp(a):
    with np.errstate(over="ignore"):
        return np.exp(a)


def _np_pow(a, k):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if k == int(k):
            return np.power(a, float(k))
        return np.where(np.asarray(a) < 0, np.nan, np.power(np.abs(a), k))


_SCALAR_NS = {
    "sin": math.sin, "cos": math.cos, "tanh": math.tanh, "abs": abs,
    "exp": _exp, "ln": _ln, "sqrt": _sqrt, "div": _div, "pw": _pow, "sign": _sign,
    "inf": math.inf, "chk": _check,
}
_ARRAY_NS = {
    "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "abs": np.abs,
    "exp": _np_exp, "ln": _np_ln, "sqrt": _np_sqrt, "div": _np_div, "pw": _np_pow,
    "sign": np.sign, "inf": np.inf, "chk": lambda v, _: v, "np": np,
}


class _Emitter:
    def __init__(self, derivative: bool, vectorized: bool):
        self.lines: list[str] = []
        self.count = 0
        self.derivative = derivative
        self.vectorized = vectorized

    def new(self) -> int:
        self.count += 1
        return self.count

    def emit(self, e: Expr) -> int:
        k = self.new()
        D = self.derivative
        L = self.lines.append
        if isinstance(e, Const):
            L(f"v{k} = {float(e.value)!r}")
            if D:
                L(f"a{k} = 0.0; b{k} = 0.0")
        elif isinstance(e, Var):
            L(f"v{k} = {e.name}")
            if D:
                L(f"a{k} = {1.0 if e.name == 'x1' else 0.0}; b{k} = {0.0 if e.name == 'x1' else 1.0}")
        elif isinstance(e, Unary):
            j = self.emit(e.arg)
            op = e.op
            if op == "neg":
                L(f"v{k} = -v{j}")
                dv = "-1.0"
            elif op == "sin":
                L(f"v{k} = sin(v{j})")
                dv = f"cos(v{j})"
            elif op == "cos":
                L(f"v{k} = cos(v{j})")
                dv = f"-sin(v{j})"
            elif op == "exp":
                L(f"v{k} = exp(v{j})")
                dv = f"v{k}"
            elif op == "ln":
                L(f"v{k} = ln(v{j})")
                dv = f"div(1.0, v{j})" if self.vectorized else f"(1.0 / v{j} if v{j} != 0 else inf)"
            elif op == "sqrt":
                L(f"v{k} = sqrt(v{j})")
                dv = f"(div(0.5, v{k}) if v{k} != 0 else inf)" if not self.vectorized else f"div(0.5, v{k})"
            elif op == "abs":
                L(f"v{k} = abs(v{j})")
                dv = f"sign(v{j})"
            elif op == "tanh":
                L(f"v{k} = tanh(v{j})")
                dv = f"(1.0 - v{k} * v{k})"
            else:
                raise ExprError(f"unknown function {op!r}")
            if D:
                L(f"t{k} = {dv}")
                L(f"a{k} = t{k} * a{j}; b{k} = t{k} * b{j}")
        elif isinstance(e, Binary):
            i = self.emit(e.left)
            if e.op == "^":
                kval = float(e.right.value)
                L(f"v{k} = pw(v{i}, {kval!r})")
                if D:
                    if kval == 0:
                        L(f"a{k} = 0.0 * a{i}; b{k} = 0.0 * b{i}")
                    elif kval == 1:
                        L(f"a{k} = a{i}; b{k} = b{i}")
                    else:
                        L(f"t{k} = {kval!r} * pw(v{i}, {kval - 1!r})")
                        L(f"a{k} = t{k} * a{i}; b{k} = t{k} * b{i}")
                return k
            j = self.emit(e.right)
            op = e.op
            if op in "+-":
                L(f"v{k} = v{i} {op} v{j}")
                if D:
                    L(f"a{k} = a{i} {op} a{j}; b{k} = b{i} {op} b{j}")
            elif op == "*":
                L(f"v{k} = v{i} * v{j}")
                if D:
                    L(f"a{k} = a{i} * v{j} + v{i} * a{j}; b{k} = b{i} * v{j} + v{i} * b{j}")
            else:
                L(f"v{k} = div(v{i}, v{j})")
                if D:
                    L(f"a{k} = div(a{i} - v{k} * a{j}, v{j}); b{k} = div(b{i} - v{k} * b{j}, v{j})")
        else:
            raise TypeError(f"not an expression node: {e!r}")
        return k


def _compile(e: Expr, derivative: bool, vectorized: bool):
    em = _Emitter(derivative, vectorized)
    root = em.emit(e)
    body = ["def _f(x1, x2):"]
    body += ["    " + line for line in em.lines]
    if vectorized:
        shape = "np.broadcast(x1, x2).shape"
        if derivative:
            body.append(
                f"    return (np.broadcast_to(v{root}, {shape}).astype(float), "
                f"np.broadcast_to(a{root}, {shape}).astype(float), "
                f"np.broadcast_to(b{root}, {shape}).astype(float))"
            )
        else:
            body.append(f"    return np.broadcast_to(v{root}, {shape}).astype(float)")
    elif derivative:
        body.append(f"    return chk(v{root}, 'evaluation'), chk(a{root}, 'derivative'), chk(b{root}, 'derivative')")
    else:
        body.append(f"    return chk(v{root}, 'evaluation')")
    ns = dict(_ARRAY_NS if vectorized else _SCALAR_NS)
    exec(compile("\n".join(body), f"<expr {to_source(e)[:40]}>", "exec"), ns)
    return ns["_f"]
