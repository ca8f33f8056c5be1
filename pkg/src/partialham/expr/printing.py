"""Plain-text rendering in the model-file expression syntax."""

from __future__ import annotations

from fractions import Fraction

from .nodes import EXP_BASE, Add, Const, Expr, Func, FuncApp, Mul, Pow, Symbol

_ADD, _MUL, _NEG, _POW = 1, 2, 3, 4


def _const(v: Fraction, prec: int) -> str:
    s = str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if (v < 0 and prec > _ADD) or (v.denominator != 1 and prec > _ADD):
        return f"({s})"
    return s


def _split_mul(e: Mul) -> tuple[Fraction, list[Expr], list[Expr]]:
    coef = Fraction(1)
    num: list[Expr] = []
    den: list[Expr] = []
    for f in e.factors:
        if isinstance(f, Const):
            coef *= f.value
        elif isinstance(f, Pow) and isinstance(f.exp, Const) and f.exp.value < 0:
            den.append(f.base if f.exp.value == -1 else Pow(f.base, Const(-f.exp.value)))
        else:
            num.append(f)
    return coef, num, den


def render(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Const):
        return _const(e.value, prec)
    if isinstance(e, Symbol):
        return e.name
    if e is EXP_BASE:
        return "E"
    if isinstance(e, Func):
        return f"{e.name}({render(e.arg)})"
    if isinstance(e, FuncApp):
        plain = "_" not in e.name and all(len(v) == 1 for v, _ in e.derivs)
        if not e.derivs:
            head = e.name
        elif plain:
            head = f"{e.name}_{''.join(v * n for v, n in e.derivs)}"
        else:
            head = f"{e.name}[{','.join(v for v, n in e.derivs for _ in range(n))}]"

        return f"{head}({', '.join(v.name for v in e.variables)})"
    if isinstance(e, Pow):
        base = render(e.base, _POW + 1)
        x = e.exp
        if isinstance(x, Const) and x.value.denominator == 1 and x.value >= 0:
            ex = str(x.value.numerator)
        elif isinstance(x, Symbol):
            ex = x.name
        else:
            ex = f"({render(x)})"
        return f"{base}^{ex}"
    if isinstance(e, Mul):
        coef, num, den = _split_mul(e)
        sign = "-" if coef < 0 else ""
        coef = abs(coef)
        parts = [render(f, _MUL + 1) for f in num]
        if coef.numerator != 1 or not parts:
            parts.insert(0, str(coef.numerator))
        s = "*".join(parts)
        dens = [render(f, _MUL + 1) for f in den]
        if coef.denominator != 1:
            dens.insert(0, str(coef.denominator))
        if dens:
            s += "/" + (dens[0] if len(dens) == 1 else "(" + "*".join(dens) + ")")
        s = sign + s
        return f"({s})" if prec > _MUL or (sign and prec > _ADD) else s
    if isinstance(e, Add):
        out = ""
        for i, t in enumerate(e.terms):
            r = render(t, _ADD)
            if i == 0:
                out = r
            elif r.startswith("-"):
                out += " - " + r[1:]
            else:
                out += " + " + r
        return f"({out})" if prec > _ADD else out
    raise TypeError(type(e).__name__)
