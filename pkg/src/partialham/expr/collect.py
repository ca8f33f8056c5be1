"""Grouping of a canonical sum by monomials in chosen variables."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .nodes import ONE, ZERO, Add, Const, Expr, FuncApp, Pow, Symbol, as_expr
from .normal import _make_mono, from_nf, normal_form, simplify
from .printing import render


class NonSeparable(ValueError):
    def __init__(self, term: Expr, variables: Iterable[str]):
        self.term = term
        super().__init__(f"term {render(term)} is not a monomial in {', '.join(variables)}")


@dataclass(frozen=True)
class MonomialKey:
    """Exponents of the separation variables; exponents are canonical."""

    powers: tuple[tuple[str, Expr], ...]

    @classmethod
    def of(cls, powers: dict[str, Expr]) -> "MonomialKey":
        items = ((v, simplify(x)) for v, x in powers.items())
        return cls(tuple(sorted((v, x) for v, x in items if x != ZERO)))

    def exponent(self, var: str) -> Expr:
        return dict(self.powers).get(var, ZERO)

    def as_expr(self, symbols: dict[str, Symbol]) -> Expr:
        out: Expr = ONE
        for v, x in self.powers:
            out = out * (symbols[v] if x == ONE else Pow(symbols[v], x))
        return simplify(out)

    def __str__(self) -> str:
        if not self.powers:
            return "1"
        parts = []
        for v, x in self.powers:
            if x == ONE:
                parts.append(v)
            else:
                ex = render(x)
                parts.append(f"{v}^{ex}" if ex.isdigit() else f"{v}^({ex})")
        return "*".join(parts)


def collect_by(e: Expr, variables: Iterable[Symbol | str]) -> dict[MonomialKey, Expr]:
    """Coefficients of ``e`` grouped by monomials in ``variables``.

    Each term must be (coefficient free of the variables) times powers of
    the variables with exponents free of them, otherwise NonSeparable.
    """
    names = [v.name if isinstance(v, Symbol) else v for v in variables]
    nf = normal_form(as_expr(e))
    groups: dict[MonomialKey, dict] = {}
    for mono, k in nf.items():
        powers: dict[str, Expr] = {}
        rest = {}
        for b, x in mono:
            if isinstance(b, Symbol) and b.name in names:
                if _mentions(x, names):
                    raise NonSeparable(from_nf({mono: k}), names)
                powers[b.name] = x
            elif _mentions(b, names) or _mentions(x, names):
                raise NonSeparable(from_nf({mono: k}), names)
            else:
                rest[b] = x
        key = MonomialKey.of(powers)
        bucket = groups.setdefault(key, {})
        m = _make_mono(rest)
        bucket[m] = bucket.get(m, Fraction(0)) + k
    out: dict[MonomialKey, Expr] = {}
    for key in sorted(groups, key=_key_order):
        coef = simplify(from_nf({m: k for m, k in groups[key].items() if k}))
        if coef != ZERO:
            out[key] = coef
    return out


def _mentions(e: Expr, names: list[str]) -> bool:
    for node in e.walk():
        if isinstance(node, Symbol) and node.name in names:
            return True
        if isinstance(node, FuncApp) and any(v.name in names for v in node.variables):
            return True
    return False


def _key_order(key: MonomialKey):
    # highest numeric degree first, then structural order
    total = Fraction(0)
    for _, x in key.powers:
        if isinstance(x, Const):
            total += x.value
    return (-total, tuple((v, x.sort_key) for v, x in key.powers))


def reconstruct(groups: dict[MonomialKey, Expr], symbols: dict[str, Symbol]) -> Expr:
    if not groups:
        return ZERO
    return simplify(Add([k.as_expr(symbols) * c for k, c in groups.items()]))
