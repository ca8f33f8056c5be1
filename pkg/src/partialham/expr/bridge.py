"""Conversion to and from sympy, used only for rational-function algebra."""

from __future__ import annotations

from fractions import Fraction

import sympy

from .nodes import EXP_BASE, Add, Const, Expr, Func, FuncApp, Mul, Pow, Symbol

_SYMPY_FUNCS = {"exp": sympy.exp, "ln": sympy.log, "sin": sympy.sin, "cos": sympy.cos}


def to_sympy(e: Expr, table: dict | None = None) -> sympy.Expr:
    """Convert; ``table`` records sympy symbol name -> original node."""
    if table is None:
        table = {}

    def rec(node: Expr):
        if isinstance(node, Const):
            return sympy.Rational(node.value.numerator, node.value.denominator)
        if isinstance(node, Symbol):
            table.setdefault(node.name, node)
            return sympy.Symbol(node.name)
        if isinstance(node, FuncApp):
            name = f"_f{len(table)}"
            for k, v in table.items():
                if v == node:
                    name = k
                    break
            table[name] = node
            return sympy.Symbol(name)
        if node is EXP_BASE:
            return sympy.E
        if isinstance(node, Func):
            return _SYMPY_FUNCS[node.name](rec(node.arg))
        if isinstance(node, Pow):
            return sympy.Pow(rec(node.base), rec(node.exp), evaluate=False)
        if isinstance(node, Mul):
            return sympy.Mul(*[rec(f) for f in node.factors])
        if isinstance(node, Add):
            return sympy.Add(*[rec(t) for t in node.terms])
        raise TypeError(type(node).__name__)

    return rec(e)


def from_sympy(s, table: dict | None = None) -> Expr:
    """Convert back; symbols missing from ``table`` become parameters."""
    table = table or {}
    s = sympy.sympify(s)
    if s.is_Rational:
        return Const(Fraction(int(s.p), int(s.q)))
    if s.is_Float:
        return Const(Fraction(str(s)))
    if s is sympy.E:
        return Func("exp", Const(1))
    if s.is_Symbol:
        hit = table.get(s.name)
        return hit if hit is not None else Symbol(s.name, "param")
    if s.is_Add:
        return Add([from_sympy(a, table) for a in s.args])
    if s.is_Mul:
        return Mul([from_sympy(a, table) for a in s.args])
    if s.is_Pow:
        return Pow(from_sympy(s.base, table), from_sympy(s.exp, table))
    for name, fn in _SYMPY_FUNCS.items():
        if isinstance(s, fn) if isinstance(fn, type) else s.func == fn:
            return Func(name, from_sympy(s.args[0], table))
    raise TypeError(f"cannot convert {s!r}")
