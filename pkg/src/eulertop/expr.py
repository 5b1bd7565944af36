"""Scalar expressions in the coordinates ``x1 ... xn`` and named parameters.

Expressions are immutable trees of frozen dataclasses, so structural
equality is plain ``==``.  The module provides a small text grammar, exact
symbolic partial derivatives, an identity-eliminating simplifier, a reference
tree-walking evaluator and a code generator that turns a batch of expressions
into one Python function sharing common subtrees.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' exponent)?          # '**' is accepted for '^'
    exponent := ['-'|'+'] INTEGER ('^' exponent)? | '(' exponent ')'
    atom   := NUMBER | xK | PARAM | FUNC '(' expr ')' | '(' expr ')'

Example
-------
>>> e = parse("g/x1 - g/x2", 3, {"g"})
>>> evaluate(e, (1.0, 2.0, 3.0), {"g": 1.0})
0.5
>>> to_text(simplify(differentiate(parse("g/x1", 3, {"g"}), 1)))
'(-(g / (x1 ^ 2)))'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

__all__ = [
    "Node", "Const", "Coord", "Param", "Neg", "BinOp", "Pow", "Func",
    "FUNCTIONS", "ExprError", "ParseError", "UnknownIdentifierError",
    "EvaluationError", "DivisionByZeroError", "DomainError",
    "UnboundParameterError", "parse", "to_text", "differentiate", "simplify",
    "evaluate", "compile_expressions", "coordinates", "parameters",
    "node_count", "const", "x",
]

FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sqrt": math.sqrt,
    "exp": math.exp,
    "ln": math.log,
    "sin": math.sin,
    "cos": math.cos,
}


# ---------------------------------------------------------------------------
# errors


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    """Malformed source text.  ``position`` is 1-based; end of input is
    ``len(source) + 1``."""

    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class UnknownIdentifierError(ParseError):
    pass


class EvaluationError(ExprError, ArithmeticError):
    pass


class DivisionByZeroError(EvaluationError, ZeroDivisionError):
    pass


class DomainError(EvaluationError, ValueError):
    pass


class UnboundParameterError(EvaluationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# ---------------------------------------------------------------------------
# nodes


class Node:
    """Common base of all expression nodes.

    The arithmetic operators build (unsimplified) trees, which keeps
    hand-written closed forms readable: ``x(2) * x(3) - const(1)``.
    """

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, _lift(other))

    def __radd__(self, other):
        return BinOp("+", _lift(other), self)

    def __sub__(self, other):
        return BinOp("-", self, _lift(other))

    def __rsub__(self, other):
        return BinOp("-", _lift(other), self)

    def __mul__(self, other):
        return BinOp("*", self, _lift(other))

    def __rmul__(self, other):
        return BinOp("*", _lift(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, _lift(other))

    def __rtruediv__(self, other):
        return BinOp("/", _lift(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int):
            raise TypeError("only integer exponents are supported")
        return Pow(self, exponent)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, repr=False, eq=True)
class Const(Node):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, repr=False)
class Coord(Node):
    index: int  # 1-based

    def __repr__(self):
        return f"Coord({self.index})"


@dataclass(frozen=True, repr=False)
class Param(Node):
    name: str

    def __repr__(self):
        return f"Param({self.name!r})"


@dataclass(frozen=True, repr=False)
class Neg(Node):
    arg: Node

    def __repr__(self):
        return f"Neg({self.arg!r})"


@dataclass(frozen=True, repr=False)
class BinOp(Node):
    op: str  # one of + - * /
    left: Node
    right: Node

    def __repr__(self):
        return f"BinOp({self.op!r}, {self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Pow(Node):
    base: Node
    exponent: int

    def __repr__(self):
        return f"Pow({self.base!r}, {self.exponent})"


@dataclass(frozen=True, repr=False)
class Func(Node):
    name: str
    arg: Node

    def __repr__(self):
        return f"Func({self.name!r}, {self.arg!r})"


Expression = Union[Const, Coord, Param, Neg, BinOp, Pow, Func]

ZERO = Const(0.0)
ONE = Const(1.0)


def const(value: float) -> Const:
    return Const(float(value))


def x(index: int) -> Coord:
    return Coord(index)


def _lift(value) -> Node:
    if isinstance(value, Node):
        return value
    if isinstance(value, (int, float)):
        return Const(float(value))
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


# ---------------------------------------------------------------------------
# tokenizer and parser

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)
_COORD = re.compile(r"x([1-9][0-9]*)$")


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    pos: int  # 1-based


def _tokenize(source: str) -> list[_Tok]:
    tokens = []
    i = 0
    while i < len(source):
        m = _TOKEN.match(source, i)
        if m is None:
            raise ParseError(f"unexpected character {source[i]!r}", i + 1, source)
        kind = m.lastgroup
        if kind != "ws":
            text = m.group()
            if text == "**":
                text = "^"
            tokens.append(_Tok(kind, text, i + 1))
        i = m.end()
    tokens.append(_Tok("end", "", len(source) + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, dimension: int, parameters: frozenset[str]):
        self.source = source
        self.dimension = dimension
        self.parameters = parameters
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.i]

    def advance(self) -> _Tok:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.tok
        if tok.kind == "end":
            message = f"{message}: unexpected end of input"
        else:
            message = f"{message}: unexpected {tok.text!r}"
        return ParseError(message, tok.pos, self.source)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind not in ("op",):
            raise self.error(f"expected {text!r}")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error("expected operator or end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        tok = self.tok
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            value = self.exponent()
            self.expect(")")
        else:
            sign = 1
            if tok.kind == "op" and tok.text in "+-":
                sign = -1 if tok.text == "-" else 1
                self.advance()
            tok = self.tok
            if tok.kind != "num" or not tok.text.isdigit():
                raise self.error("exponent must be an integer literal")
            self.advance()
            value = sign * int(tok.text)
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            inner = self.exponent()
            if inner < 0 and abs(value) != 1:
                raise self.error("exponent does not evaluate to an integer", tok)
            value = value ** inner if inner >= 0 else int(value ** inner)
        return value

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ParseError(f"numeric literal {tok.text!r} overflows", tok.pos, self.source)
            return Const(value)
        if tok.kind == "name":
            self.advance()
            return self.identifier(tok)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise self.error("expected number, identifier or '('")

    def identifier(self, tok: _Tok) -> Node:
        name = tok.text
        m = _COORD.match(name)
        if m:
            index = int(m.group(1))
            if not 1 <= index <= self.dimension:
                raise UnknownIdentifierError(
                    f"coordinate {name} out of range 1..{self.dimension}", tok.pos, self.source)
            return Coord(index)
        if name in FUNCTIONS:
            if not (self.tok.kind == "op" and self.tok.text == "("):
                raise self.error(f"expected '(' after function {name}")
            self.advance()
            arg = self.expr()
            self.expect(")")
            return Func(name, arg)
        if name in self.parameters:
            return Param(name)
        raise UnknownIdentifierError(f"unknown identifier {name!r}", tok.pos, self.source)


def parse(source: str, dimension: int, parameters: Iterable[str] = ()) -> Node:
    """Parse `source` into an expression over ``x1..x{dimension}``.

    Raises `ParseError` (with a 1-based ``position``) on malformed text and
    `UnknownIdentifierError` for names that are neither coordinates in range,
    declared parameters nor one of `FUNCTIONS`.
    """
    if dimension < 1:
        raise ValueError("dimension must be positive")
    if not source or not source.strip():
        raise ParseError("empty expression", 1, source)
    params = frozenset(parameters)
    for p in params:
        if _COORD.match(p) or p in FUNCTIONS:
            raise ValueError(f"parameter name {p!r} collides with a coordinate or function")
    return _Parser(source, dimension, params).parse()


# ---------------------------------------------------------------------------
# printing


def _const_text(value: float) -> str:
    if value.is_integer() and abs(value) < 1e16:
        text = str(int(abs(value)))
    else:
        text = repr(abs(value))
    if math.copysign(1.0, value) < 0:
        return f"(-{text})"
    return text


def to_text(e: Node) -> str:
    """Canonical text; every non-atomic child is parenthesized."""
    if isinstance(e, Const):
        return _const_text(e.value)
    if isinstance(e, Coord):
        return f"x{e.index}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        return f"({to_text(e.base)} ^ {e.exponent})"
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Node, coordinate: int) -> Node:
    """Exact partial derivative with respect to ``x{coordinate}``.

    The result is not simplified; run `simplify` on it if needed.
    """
    if not isinstance(coordinate, int) or coordinate < 1:
        raise ValueError(f"coordinate index must be a positive integer, got {coordinate!r}")
    return _diff(e, coordinate)


def _diff(e: Node, coordinate: int) -> Node:
    if isinstance(e, Const) or isinstance(e, Param):
        return ZERO
    if isinstance(e, Coord):
        return ONE if e.index == coordinate else ZERO
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, coordinate))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = _diff(a, coordinate), _diff(b, coordinate)
        if e.op in "+-":
            return BinOp(e.op, da, db)
        if e.op == "*":
            return BinOp("+", BinOp("*", da, b), BinOp("*", a, db))
        # quotient rule
        return BinOp("/", BinOp("-", BinOp("*", da, b), BinOp("*", a, db)), Pow(b, 2))
    if isinstance(e, Pow):
        n = e.exponent
        inner = BinOp("*", Const(float(n)), Pow(e.base, n - 1))
        return BinOp("*", inner, _diff(e.base, coordinate))
    if isinstance(e, Func):
        a = e.arg
        da = _diff(a, coordinate)
        if e.name == "sqrt":
            return BinOp("/", da, BinOp("*", Const(2.0), e))
        if e.name == "exp":
            return BinOp("*", e, da)
        if e.name == "ln":
            return BinOp("/", da, a)
        if e.name == "sin":
            return BinOp("*", Func("cos", a), da)
        if e.name == "cos":
            return BinOp("*", Neg(Func("sin", a)), da)
    raise TypeError(f"cannot differentiate {e!r}")


# ---------------------------------------------------------------------------
# simplification


def _is_const(e: Node, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _fold(e: Node) -> Node:
    """Replace an all-constant node by its value unless evaluation fails."""
    try:
        value = _eval(e, (), {})
    except (ArithmeticError, ValueError):
        return e
    if not math.isfinite(value):
        return e
    return Const(value)


def _negate(e: Node) -> Node:
    if isinstance(e, Const):
        return Const(-e.value)
    return e.arg if isinstance(e, Neg) else Neg(e)


def simplify(e: Node) -> Node:
    """Constant folding and removal of ``+0``, ``*1``, ``*0``, ``/1``, ``^1``,
    ``^0`` and double negation.  Values are preserved (up to the usual
    ``0 * inf`` caveat at singular points)."""
    if isinstance(e, (Const, Coord, Param)):
        return e
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Pow):
        b = simplify(e.base)
        if e.exponent == 1:
            return b
        if e.exponent == 0:
            return ONE
        node = Pow(b, e.exponent)
        return _fold(node) if isinstance(b, Const) else node
    if isinstance(e, Func):
        a = simplify(e.arg)
        node = Func(e.name, a)
        return _fold(node) if isinstance(a, Const) else node
    if isinstance(e, BinOp):
        a, b = simplify(e.left), simplify(e.right)
        if isinstance(a, Const) and isinstance(b, Const):
            folded = _fold(BinOp(e.op, a, b))
            if isinstance(folded, Const):
                return folded
        op = e.op
        if op == "+":
            if _is_const(a, 0.0):
                return b
            if _is_const(b, 0.0):
                return a
            if isinstance(b, Neg):
                return BinOp("-", a, b.arg)
        elif op == "-":
            if _is_const(b, 0.0):
                return a
            if _is_const(a, 0.0):
                return b.arg if isinstance(b, Neg) else Neg(b)
            if isinstance(b, Neg):
                return BinOp("+", a, b.arg)
        elif op in "*/":
            # negation is exact, so signs move outward without changing a bit
            neg = isinstance(a, Neg) != isinstance(b, Neg)
            a = a.arg if isinstance(a, Neg) else a
            b = b.arg if isinstance(b, Neg) else b
            if op == "*" and (_is_const(a, 0.0) or _is_const(b, 0.0)):
                return ZERO
            if _is_const(a, 0.0) and not _is_const(b, 0.0):
                return ZERO
            if op == "*" and _is_const(a, 1.0):
                out = b
            elif _is_const(b, 1.0):
                out = a
            elif op == "*" and _is_const(a, -1.0):
                out, neg = b, not neg
            elif _is_const(b, -1.0):
                out, neg = a, not neg
            else:
                out = BinOp(op, a, b)
            return _negate(out) if neg else out
        return BinOp(op, a, b)
    raise TypeError(f"cannot simplify {e!r}")


# ---------------------------------------------------------------------------
# evaluation


def _eval(e: Node, state: Sequence[float], bindings: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Coord):
        return state[e.index - 1]
    if isinstance(e, Param):
        try:
            return bindings[e.name]
        except KeyError:
            raise UnboundParameterError(f"parameter {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, state, bindings)
    if isinstance(e, BinOp):
        a = _eval(e.left, state, bindings)
        b = _eval(e.right, state, bindings)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b
    if isinstance(e, Pow):
        return _eval(e.base, state, bindings) ** e.exponent
    if isinstance(e, Func):
        return FUNCTIONS[e.name](_eval(e.arg, state, bindings))
    raise TypeError(f"cannot evaluate {e!r}")


def _translate(exc: Exception) -> EvaluationError:
    if isinstance(exc, EvaluationError):
        return exc
    if isinstance(exc, ZeroDivisionError):
        return DivisionByZeroError(f"division by zero ({exc})")
    if isinstance(exc, OverflowError):
        return EvaluationError(f"overflow ({exc})")
    return DomainError(f"domain error ({exc})")


def evaluate(e: Node, state: Sequence[float], bindings: Mapping[str, float] | None = None) -> float:
    """Evaluate `e` at `state` in IEEE double precision.

    Raises `DivisionByZeroError`, `DomainError` (sqrt/ln outside their
    domain) or `UnboundParameterError`.
    """
    values = [float(v) for v in state]
    for i in coordinates(e):
        if i > len(values):
            raise ValueError(f"state has length {len(values)} but x{i} is referenced")
    try:
        return _eval(e, values, bindings or {})
    except (ArithmeticError, ValueError) as exc:
        raise _translate(exc) from None


def compile_expressions(
    exprs: Sequence[Node],
    dimension: int,
    bindings: Mapping[str, float] | None = None,
) -> Callable[[Sequence[float]], tuple[float, ...]]:
    """Generate one Python function evaluating every expression in `exprs`.

    Shared subtrees (by identity, which is what `differentiate` produces)
    are computed once.  Operation order matches `evaluate`, so results agree
    bit for bit.  Parameters are bound at compile time.
    """
    bindings = dict(bindings or {})
    needed = set()
    for e in exprs:
        needed |= parameters(e)
    missing = needed - set(bindings)
    if missing:
        raise UnboundParameterError(f"unbound parameters: {sorted(missing)}")

    lines: list[str] = []
    names: dict[int, str] = {}
    counter = [0]

    def emit(e: Node) -> str:
        key = id(e)
        if key in names:
            return names[key]
        if isinstance(e, Const):
            return repr(e.value)
        if isinstance(e, Coord):
            return f"x{e.index}"
        if isinstance(e, Param):
            return f"p_{e.name}"
        if isinstance(e, Neg):
            code = f"-{emit(e.arg)}"
        elif isinstance(e, BinOp):
            code = f"{emit(e.left)} {e.op} {emit(e.right)}"
        elif isinstance(e, Pow):
            code = f"{emit(e.base)} ** {e.exponent}"
        elif isinstance(e, Func):
            code = f"_{e.name}({emit(e.arg)})"
        else:
            raise TypeError(f"cannot compile {e!r}")
        name = f"t{counter[0]}"
        counter[0] += 1
        lines.append(f"    {name} = {code}")
        names[key] = name
        return name

    outputs = [emit(e) for e in exprs]
    args = ", ".join(f"x{i}" for i in range(1, dimension + 1))
    pnames = sorted(bindings)
    header = f"def _f({args}{', ' if pnames else ''}{', '.join('p_' + p for p in pnames)}):"
    body = "\n".join(lines) if lines else "    pass"
    ret = f"    return ({', '.join(outputs)}{',' if len(outputs) == 1 else ''})"
    namespace = {f"_{k}": v for k, v in FUNCTIONS.items()}
    exec(compile(f"{header}\n{body}\n{ret}\n", "<eulertop.expr>", "exec"), namespace)
    raw = namespace["_f"]
    pvalues = tuple(float(bindings[p]) for p in pnames)

    def fn(state: Sequence[float]) -> tuple[float, ...]:
        if len(state) != dimension:
            raise ValueError(f"expected a state of length {dimension}, got {len(state)}")
        try:
            return raw(*[float(v) for v in state], *pvalues)
        except (ArithmeticError, ValueError) as exc:
            raise _translate(exc) from None

    fn.source = f"{header}\n{body}\n{ret}\n"
    return fn


# ---------------------------------------------------------------------------
# inspection


def _walk(e: Node):
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (Neg, Func)):
            stack.append(node.arg)
        elif isinstance(node, BinOp):
            stack.extend((node.left, node.right))
        elif isinstance(node, Pow):
            stack.append(node.base)


def coordinates(e: Node) -> set[int]:
    return {n.index for n in _walk(e) if isinstance(n, Coord)}


def parameters(e: Node) -> set[str]:
    return {n.name for n in _walk(e) if isinstance(n, Param)}


def node_count(e: Node) -> int:
    return sum(1 for _ in _walk(e))
