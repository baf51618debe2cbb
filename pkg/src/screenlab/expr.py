"""Scalar expression DSL with exact symbolic differentiation.

Expressions are written over variables ``x1..xm`` and ``y1..yn`` with the
operators ``+ - * / ^`` (power requires a constant exponent), unary minus,
and the functions ``exp, log, sqrt, sin, cos``.  The grammar deliberately
excludes non-smooth primitives so that four derivatives always exist inside
the grammar; differentiation is closed and carries no truncation error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ParseError",
    "DomainError",
    "parse",
    "differentiate",
    "evaluate",
    "to_string",
]

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos")


class ExpressionError(ValueError):
    """Base class for DSL errors."""


class ParseError(ExpressionError):
    """Raised on invalid input text; carries the byte offset of the error."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class DomainError(ExpressionError):
    """Evaluation produced a non-finite value or left a function's domain."""


# ---------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "y"
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    child: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float  # constant exponents only


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Pow, Call]


@dataclass(frozen=True)
class Expression:
    """Immutable parsed expression over declared dimensions (m, n)."""

    root: Node
    m: int
    n: int

    def __str__(self) -> str:
        return to_string(self)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+(\.\d*)?([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<pow>\*\*|\^)
  | (?P<op>[+\-*/()])
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(), pos))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent over: expr := term (+|- term)*, term := factor (*|/ factor)*,
    factor := - factor | power, power := atom (^ factor)?, atom := num | var | fn(expr) | (expr)."""

    def __init__(self, text: str, m: int, n: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.m = m
        self.n = n

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.peek()
        if text != value:
            raise ParseError(f"expected {value!r}, found {text or 'end of input'!r}", pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {text!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek()[1] == "-":
            self.advance()
            return Neg(self.factor())
        if self.peek()[1] == "+":
            self.advance()
            return self.factor()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "pow":
            self.advance()
            exponent = self.factor()
            folded = _fold(exponent)
            if not isinstance(folded, Num):
                raise ParseError("exponent must be a constant", pos)
            return Pow(base, folded.value)
        return base

    def atom(self) -> Node:
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            return self._variable(text, pos)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected token {text or 'end of input'!r}", pos)

    def _variable(self, name: str, pos: int) -> Var:
        match = re.fullmatch(r"([xy])([1-9]\d*)", name)
        if match is None:
            raise ParseError(f"unknown identifier {name!r}", pos)
        kind, idx = match.group(1), int(match.group(2))
        limit = self.m if kind == "x" else self.n
        if idx > limit:
            raise ParseError(f"{name} out of range (dimension is {limit})", pos)
        return Var(kind, idx - 1)


def parse(text: str, dims: tuple[int, int]) -> Expression:
    """Parse ``text`` over declared dimensions ``dims = (m, n)``.

    Rejects invalid input with a :class:`ParseError` carrying the byte
    offset; variables outside ``x1..xm`` / ``y1..yn`` are rejected.
    """
    m, n = dims
    if m < 0 or n < 0:
        raise ValueError("dimensions must be nonnegative")
    root = _Parser(text, m, n).parse()
    return Expression(_fold(root), m, n)


# ---------------------------------------------------------------------------
# Constant folding (bounds AST growth through repeated differentiation)


def _fold(node: Node) -> Node:
    if isinstance(node, (Num, Var)):
        return node
    if isinstance(node, Neg):
        child = _fold(node.child)
        if isinstance(child, Num):
            return Num(-child.value)
        if isinstance(child, Neg):
            return child.child
        return Neg(child)
    if isinstance(node, Pow):
        base = _fold(node.base)
        if node.exponent == 0:
            return Num(1.0)
        if node.exponent == 1:
            return base
        if isinstance(base, Num):
            value = float(base.value**node.exponent)
            if np.isfinite(value):
                return Num(value)
        return Pow(base, node.exponent)
    if isinstance(node, Call):
        arg = _fold(node.arg)
        if isinstance(arg, Num):
            with np.errstate(all="ignore"):
                value = float(getattr(np, node.fn)(arg.value))
            if np.isfinite(value):
                return Num(value)
        return Call(node.fn, arg)

    left, right = _fold(node.left), _fold(node.right)
    lnum = left.value if isinstance(left, Num) else None
    rnum = right.value if isinstance(right, Num) else None
    op = node.op
    if lnum is not None and rnum is not None:
        if op == "+":
            return Num(lnum + rnum)
        if op == "-":
            return Num(lnum - rnum)
        if op == "*":
            return Num(lnum * rnum)
        if op == "/" and rnum != 0:
            return Num(lnum / rnum)
    if op == "+":
        if lnum == 0:
            return right
        if rnum == 0:
            return left
    elif op == "-":
        if rnum == 0:
            return left
        if lnum == 0:
            return Neg(right) if not isinstance(right, Num) else Num(-right.value)
    elif op == "*":
        if lnum == 0 or rnum == 0:
            return Num(0.0)
        if lnum == 1:
            return right
        if rnum == 1:
            return left
    elif op == "/":
        if lnum == 0:
            return Num(0.0)
        if rnum == 1:
            return left
    return BinOp(op, left, right)


# ---------------------------------------------------------------------------
# Differentiation


def _diff(node: Node, kind: str, index: int) -> Node:
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if (node.kind, node.index) == (kind, index) else 0.0)
    if isinstance(node, Neg):
        return Neg(_diff(node.child, kind, index))
    if isinstance(node, Pow):
        # constant exponent: d u^p = p * u^(p-1) * u'
        du = _diff(node.base, kind, index)
        return BinOp("*", BinOp("*", Num(node.exponent), Pow(node.base, node.exponent - 1)), du)
    if isinstance(node, Call):
        du = _diff(node.arg, kind, index)
        u = node.arg
        if node.fn == "exp":
            outer: Node = Call("exp", u)
        elif node.fn == "log":
            outer = BinOp("/", Num(1.0), u)
        elif node.fn == "sqrt":
            outer = BinOp("/", Num(0.5), Call("sqrt", u))
        elif node.fn == "sin":
            outer = Call("cos", u)
        elif node.fn == "cos":
            outer = Neg(Call("sin", u))
        else:  # pragma: no cover - grammar admits no other function
            raise ExpressionError(f"cannot differentiate {node.fn}")
        return BinOp("*", outer, du)

    dl, dr = _diff(node.left, kind, index), _diff(node.right, kind, index)
    if node.op == "+":
        return BinOp("+", dl, dr)
    if node.op == "-":
        return BinOp("-", dl, dr)
    if node.op == "*":
        return BinOp("+", BinOp("*", dl, node.right), BinOp("*", node.left, dr))
    # quotient rule
    num = BinOp("-", BinOp("*", dl, node.right), BinOp("*", node.left, dr))
    return BinOp("/", num, Pow(node.right, 2.0))


def _parse_variable_id(variable: str) -> tuple[str, int]:
    match = re.fullmatch(r"([xy])([1-9]\d*)", variable)
    if match is None:
        raise ExpressionError(f"invalid variable id {variable!r}")
    return match.group(1), int(match.group(2)) - 1


def differentiate(e: Expression, variable: str) -> Expression:
    """Exact symbolic partial derivative with respect to e.g. ``"x1"`` or ``"y2"``.

    Repeated application yields higher-order mixed partials; results are
    constant-folded after each pass.
    """
    kind, index = _parse_variable_id(variable)
    limit = e.m if kind == "x" else e.n
    if index >= limit:
        raise ExpressionError(f"{variable} out of range (dimension is {limit})")
    return Expression(_fold(_diff(e.root, kind, index)), e.m, e.n)


# ---------------------------------------------------------------------------
# Evaluation


def _eval(node: Node, x, y):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        source = x if node.kind == "x" else y
        if source is None:
            raise DomainError(f"missing binding for {node.kind}{node.index + 1}")
        return source[..., node.index]
    if isinstance(node, Neg):
        return -_eval(node.child, x, y)
    if isinstance(node, Pow):
        return _eval(node.base, x, y) ** node.exponent
    if isinstance(node, Call):
        return getattr(np, node.fn)(_eval(node.arg, x, y))
    left = _eval(node.left, x, y)
    right = _eval(node.right, x, y)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    return left / right


def evaluate(e: Expression, x=None, y=None, validate: bool = True):
    """Evaluate on points; returns a float or a broadcast ndarray.

    ``x`` has shape ``(..., m)`` and ``y`` shape ``(..., n)``; the leading
    shapes broadcast against each other, so a pair grid is obtained by
    passing ``X[:, None, :]`` and ``Y[None, :, :]``.  Non-finite results
    raise :class:`DomainError` unless ``validate=False``.
    """
    if x is not None:
        x = np.asarray(x, dtype=float)
    if y is not None:
        y = np.asarray(y, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(e.root, x, y)
    out = np.asarray(out, dtype=float)
    if validate and not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(np.atleast_1d(out)))
        raise DomainError(f"non-finite value at flat index {tuple(bad[0])}")
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Printing (round-trips through parse exactly)


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def _print(node: Node, parent_prec: int, right_side: bool = False) -> str:
    if isinstance(node, Num):
        return repr(node.value) if node.value >= 0 else f"({node.value!r})"
    if isinstance(node, Var):
        return f"{node.kind}{node.index + 1}"
    if isinstance(node, Neg):
        return f"(-{_print(node.child, 4)})"
    if isinstance(node, Pow):
        exp = repr(node.exponent) if node.exponent >= 0 else f"({node.exponent!r})"
        text = f"{_print(node.base, 4)}^{exp}"
        # ^ binds tighter than * but a power base must itself be parenthesized
        return f"({text})" if parent_prec >= 4 else text
    if isinstance(node, Call):
        return f"{node.fn}({_print(node.arg, 0)})"
    prec = _PRECEDENCE[node.op]
    left = _print(node.left, prec)
    # the parser is left associative, so a same-precedence right operand
    # must keep its parentheses for the tree (and its rounding) to survive
    right = _print(node.right, prec + 1, True)
    text = f"{left} {node.op} {right}"
    if prec < parent_prec:
        return f"({text})"
    return text


def to_string(e: Expression) -> str:
    """Render to text; ``parse(to_string(e))`` evaluates identically to ``e``."""
    return _print(e.root, 0)
