"""Exact arithmetic for Game-of-24 expressions.

Grammar::

    expr   := term (("+" | "-" | "−") term)*
    term   := factor (("*" | "×" | "/" | "÷") factor)*
    factor := INT | "(" expr ")"

Unary minus is not part of the language.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence, Union

from tracewatch.extraction import ExtractedState
from tracewatch.trace import Verdict

TARGET = Fraction(24)
_OPS = {"+": "+", "-": "-", "−": "-", "*": "*", "×": "*", "/": "/", "÷": "/"}
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


class ExpressionError(ValueError):
    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at position {position}")
        self.position = position


class DivisionByZero(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: Expr
    right: Expr


Expr = Union[Num, BinOp]


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def _skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\n":
            self.pos += 1

    def _peek(self) -> str | None:
        self._skip()
        return self.text[self.pos] if self.pos < len(self.text) else None

    def parse(self) -> Expr:
        if self._peek() is None:
            raise ExpressionError("empty expression", self.pos)
        node = self._expr()
        if self._peek() is not None:
            ch = self.text[self.pos]
            raise ExpressionError(f"unexpected {ch!r}" if ch != ")" else "unbalanced ')'", self.pos)
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while (ch := self._peek()) is not None and _OPS.get(ch) in ("+", "-"):
            self.pos += 1
            node = BinOp(_OPS[ch], node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._factor()
        while (ch := self._peek()) is not None and _OPS.get(ch) in ("*", "/"):
            self.pos += 1
            if self._peek() in ("*", "/"):
                raise ExpressionError("doubled operator", self.pos)
            node = BinOp(_OPS[ch], node, self._factor())
        return node

    def _factor(self) -> Expr:
        ch = self._peek()
        if ch is None:
            raise ExpressionError("missing operand", self.pos)
        if ch == "(":
            open_at = self.pos
            self.pos += 1
            node = self._expr()
            if self._peek() != ")":
                raise ExpressionError("unbalanced '('", open_at)
            self.pos += 1
            return node
        if ch.isdigit():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            return Num(int(self.text[start : self.pos]))
        if ch in _OPS:
            raise ExpressionError("missing operand", self.pos)
        raise ExpressionError(f"unknown symbol {ch!r}", self.pos)


def parse_expression(text: str) -> Expr:
    return _Parser(text).parse()


def evaluate_exact(e: Expr) -> Fraction:
    if isinstance(e, Num):
        return Fraction(e.value)
    a, b = evaluate_exact(e.left), evaluate_exact(e.right)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if b == 0:
        raise DivisionByZero("division by zero")
    return a / b


def leaves(e: Expr) -> list[int]:
    if isinstance(e, Num):
        return [e.value]
    return leaves(e.left) + leaves(e.right)


def render(e: Expr) -> str:
    """Minimal-parenthesis rendering that parses back to the same tree."""
    if isinstance(e, Num):
        return str(e.value)
    p = _PREC[e.op]
    left = render(e.left)
    if isinstance(e.left, BinOp) and _PREC[e.left.op] < p:
        left = f"({left})"
    right = render(e.right)
    # same-precedence right operands keep their parentheses so the tree shape survives
    if isinstance(e.right, BinOp) and _PREC[e.right.op] <= p:
        right = f"({right})"
    return f"{left}{e.op}{right}"


def _fmt_value(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def verify_game24(expr_text: str, inputs: Sequence[int]) -> Verdict:
    if len(inputs) != 4:
        raise ValueError("Game-of-24 needs exactly four inputs")
    try:
        tree = parse_expression(expr_text)
    except ExpressionError as exc:
        return Verdict(False, f"the expression '{expr_text}' cannot be read: {exc}.")
    used, want = Counter(leaves(tree)), Counter(inputs)
    if used != want:
        missing = sorted((want - used).elements())
        extra = sorted((used - want).elements())
        parts = []
        if missing:
            parts.append(f"numbers {','.join(map(str, missing))} unused")
        if extra:
            parts.append(f"numbers {','.join(map(str, extra))} are not available")
        nums = ", ".join(map(str, sorted(inputs)))
        return Verdict(False, f"'{expr_text}' must use each of {nums} exactly once: {'; '.join(parts)}.")
    try:
        value = evaluate_exact(tree)
    except DivisionByZero:
        return Verdict(False, f"'{expr_text}' divides by zero.")
    if value != TARGET:
        return Verdict(False, f"'{expr_text}' evaluates to {_fmt_value(value)}, not 24.")
    return Verdict(True)


# the five binary tree shapes over four ordered leaves
def _shapes(a: Expr, b: Expr, c: Expr, d: Expr, o1: str, o2: str, o3: str) -> list[Expr]:
    return [
        BinOp(o1, BinOp(o2, BinOp(o3, a, b), c), d),
        BinOp(o1, BinOp(o2, a, BinOp(o3, b, c)), d),
        BinOp(o1, BinOp(o2, a, b), BinOp(o3, c, d)),
        BinOp(o1, a, BinOp(o2, BinOp(o3, b, c), d)),
        BinOp(o1, a, BinOp(o2, b, BinOp(o3, c, d))),
    ]


@lru_cache(maxsize=4096)
def _solve_sorted(nums: tuple[int, ...]) -> Expr | None:
    for perm in dict.fromkeys(itertools.permutations(nums)):
        leaves_ = [Num(n) for n in perm]
        for ops in itertools.product("+-*/", repeat=3):
            for tree in _shapes(*leaves_, *ops):
                try:
                    if evaluate_exact(tree) == TARGET:
                        return tree
                except DivisionByZero:
                    continue
    return None


def solve24(inputs: Sequence[int]) -> Expr | None:
    """Exhaustive search; returns a witness expression or None."""
    if len(inputs) != 4:
        raise ValueError("Game-of-24 needs exactly four inputs")
    return _solve_sorted(tuple(sorted(inputs)))


@dataclass
class Game24Verifier:
    inputs: tuple[int, ...]

    def verify(self, state: ExtractedState) -> Verdict:
        return verify_game24(state.payload, self.inputs)
