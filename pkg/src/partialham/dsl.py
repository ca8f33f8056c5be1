"""Model file reader.

Grammar (statements may span or share lines; ``#`` starts a comment)::

    model    := "model" NAME stmt*
    stmt     := "param" NAME sign? ("=" number)?
              | "pair" "(" NAME "," NAME ")"
              | "control" NAME "with" NAME "=" expr
              | "H" "=" expr
              | "Gamma" "[" NAME "]" "=" expr
              | "separate_by" NAME ("," NAME)*
              | "assume" expr "=" "0"
    sign     := (">" | "<") "0"

Names must be declared before use; ``t`` is the time variable.
"""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path

from .expr import Const, Expr, ParseError, Symbol, simplify
from .expr.nodes import PARAM, VAR
from .expr.parse import ExprParser, Token, tokenize
from .hamsys import ConstraintSet, Control, ModelError, ParamSpec, SystemModel

KEYWORDS = {"model", "param", "pair", "control", "with", "H", "Gamma", "separate_by", "assume"}


class _ModelParser(ExprParser):
    def __init__(self, text: str):
        super().__init__(tokenize(text), self._resolve)
        self.table: dict[str, Symbol] = {"t": Symbol("t", VAR)}

    def _resolve(self, name: str, tok: Token) -> Expr:
        if name in KEYWORDS:
            raise ParseError(f"keyword {name!r} used as a symbol", tok.line, tok.col)
        if name not in self.table:
            raise ParseError(f"undeclared symbol {name!r}", tok.line, tok.col)
        return self.table[name]

    def name(self) -> Token:
        if self.tok.kind != "name":
            self.fail("expected a name")
        return self.advance()

    def keyword(self, word: str) -> None:
        if not (self.tok.kind == "name" and self.tok.text == word):
            self.fail(f"expected {word!r}")
        self.advance()

    def declare(self, tok: Token, kind: str, sign: int | None = None) -> None:
        if tok.text in KEYWORDS:
            raise ParseError(f"keyword {tok.text!r} cannot be declared", tok.line, tok.col)
        if tok.text in self.table:
            raise ParseError(f"{tok.text!r} declared twice", tok.line, tok.col)
        self.table[tok.text] = Symbol(tok.text, kind, sign)

    def model(self) -> SystemModel:
        self.keyword("model")
        name = self.name().text
        params: list[ParamSpec] = []
        pairs: list[tuple[str, str]] = []
        controls: list[Control] = []
        gamma: list[tuple[str, Expr]] = []
        sep: list[str] = []
        assume: list[Expr] = []
        H: Expr | None = None
        while self.tok.kind != "end":
            tok = self.tok
            if tok.kind != "name" or tok.text not in KEYWORDS - {"model", "with"}:
                self.fail("expected a statement")
            self.advance()
            word = tok.text
            if word == "param":
                ptok = self.name()
                sign = None
                if self.at(">") or self.at("<"):
                    sign = 1 if self.advance().text == ">" else -1
                    z = self.advance()
                    if z.kind != "num" or Fraction(z.text) != 0:
                        raise ParseError("sign declarations must compare with 0", z.line, z.col)
                value = None
                if self.at("="):
                    self.advance()
                    v = simplify(self.expr())
                    if not isinstance(v, Const):
                        raise ParseError("parameter value must be a number", ptok.line, ptok.col)
                    value = v.value
                self.declare(ptok, PARAM, sign)
                params.append(ParamSpec(ptok.text, sign, value))
            elif word == "pair":
                self.expect("(")
                q = self.name()
                self.expect(",")
                p = self.name()
                self.expect(")")
                self.declare(q, VAR)
                self.declare(p, VAR)
                pairs.append((q.text, p.text))
            elif word == "control":
                u = self.name()
                self.declare(u, VAR)
                self.keyword("with")
                m = self.name()
                if m.text not in {p for _, p in pairs}:
                    raise ParseError(f"{m.text!r} is not a declared momentum", m.line, m.col)
                self.expect("=")
                controls.append(Control(u.text, m.text, simplify(self.expr())))
            elif word == "H":
                if H is not None:
                    raise ParseError("H defined twice", tok.line, tok.col)
                self.expect("=")
                H = simplify(self.expr())
            elif word == "Gamma":
                self.expect("[")
                m = self.name()
                if m.text not in {p for _, p in pairs}:
                    raise ParseError(f"{m.text!r} is not a declared momentum", m.line, m.col)
                self.expect("]")
                self.expect("=")
                gamma.append((m.text, simplify(self.expr())))
            elif word == "separate_by":
                sep.append(self.name().text)
                while self.at(","):
                    self.advance()
                    sep.append(self.name().text)
            elif word == "assume":
                lhs = self.expr()
                self.expect("=")
                z = self.advance()
                if z.kind != "num" or Fraction(z.text) != 0:
                    raise ParseError("assumptions must have the form expr = 0", z.line, z.col)
                assume.append(lhs)
        if H is None:
            raise ModelError(f"model {name!r} has no Hamiltonian")
        if not pairs:
            raise ModelError(f"model {name!r} declares no canonical pairs")
        return SystemModel(name=name, params=tuple(params), pairs=tuple(pairs), H=H,
                           gamma=tuple(gamma), controls=tuple(controls),
                           separation_vars=tuple(sep), assumptions=ConstraintSet(tuple(assume)))


def parse_model(text: str) -> SystemModel:
    return _ModelParser(text).model()


def load_model(path: str | Path) -> SystemModel:
    """Read a model file; a bare name also finds the bundled models."""
    p = Path(path)
    if not p.exists():
        bundled = Path(__file__).parent / "models" / (p.name if p.suffix else p.name + ".phm")
        if bundled.exists():
            p = bundled
        else:
            raise FileNotFoundError(f"no model file {str(path)!r}")
    return parse_model(p.read_text(encoding="utf-8"))


def bundled_model_path(name: str) -> Path:
    return Path(__file__).parent / "models" / f"{name}.phm"
