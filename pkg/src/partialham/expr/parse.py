"""Tokenizer and recursive-descent parser for the expression syntax.

Grammar (``^`` is right-associative and binds tighter than unary minus)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" exponent)?
    exponent := ("-" | "+") exponent | power
    atom   := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

Decimal literals are read as exact fractions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .nodes import PARAM, Const, Expr, Func, Symbol, sqrt
from .normal import simplify

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),=<>\[\]:])
""",
    re.VERBOSE,
)

_FUNCS: dict[str, Callable[[Expr], Expr]] = {
    "exp": lambda a: Func("exp", a),
    "ln": lambda a: Func("ln", a),
    "log": lambda a: Func("ln", a),
    "sin": lambda a: Func("sin", a),
    "cos": lambda a: Func("cos", a),
    "sqrt": sqrt,
}


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        where = f" at line {line}, column {col}" if line else ""
        super().__init__(f"{message}{where}")


@dataclass(frozen=True)
class Token:
    kind: str  # num, name, op, nl, end
    text: str
    line: int
    col: int


def tokenize(text: str, keep_newlines: bool = False) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            if keep_newlines:
                tokens.append(Token("nl", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("end", "", line, pos - line_start + 1))
    return tokens


class ExprParser:
    """Parses expressions from a token stream.

    ``resolve`` maps an identifier to a node; by default unknown names
    become parameters.
    """

    def __init__(self, tokens: list[Token], resolve: Callable[[str, Token], Expr] | None = None):
        self.tokens = tokens
        self.i = 0
        self.resolve = resolve or (lambda name, tok: Symbol(name, PARAM))

    # stream helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.kind == "op" and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.advance()

    def fail(self, message: str):
        t = self.tok
        found = t.text if t.kind != "end" else "end of input"
        if t.kind == "nl":
            found = "end of line"
        raise ParseError(f"{message}, found {found!r}", t.line, t.col)

    # grammar
    def expr(self) -> Expr:
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self) -> Expr:
        if self.at("-"):
            self.advance()
            return -self.unary()
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.at("^"):
            self.advance()
            return base ** self.exponent()
        return base

    def exponent(self) -> Expr:
        if self.at("-"):
            self.advance()
            return -self.exponent()
        if self.at("+"):
            self.advance()
            return self.exponent()
        return self.power()

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(Fraction(t.text))
        if t.kind == "name":
            self.advance()
            if self.at("("):
                fn = _FUNCS.get(t.text)
                if fn is None:
                    raise ParseError(f"unknown function {t.text!r}", t.line, t.col)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return fn(arg)
            if t.text in _FUNCS:
                raise ParseError(f"function {t.text!r} needs an argument", t.line, t.col)
            return self.resolve(t.text, t)
        if self.at("("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail("expected an expression")


def parse_expr(text: str, symbols: dict[str, Symbol] | None = None, strict: bool = False) -> Expr:
    """Parse a standalone expression into canonical form.

    Names found in ``symbols`` resolve to those symbols; other names become
    parameters unless ``strict`` is set, in which case they are an error.
    """
    return simplify(parse_tree(text, symbols, strict))


def parse_tree(text: str, symbols: dict[str, Symbol] | None = None, strict: bool = False) -> Expr:
    """Like parse_expr but keeps the tree as written (no expansion)."""
    symbols = symbols or {}

    def resolve(name: str, tok: Token) -> Expr:
        if name in symbols:
            return symbols[name]
        if strict:
            raise ParseError(f"unknown symbol {name!r}", tok.line, tok.col)
        return Symbol(name, PARAM)

    p = ExprParser(tokenize(text), resolve)
    node = p.expr()
    if p.tok.kind != "end":
        p.fail("unexpected trailing input")
    return node
