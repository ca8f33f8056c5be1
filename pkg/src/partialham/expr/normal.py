"""Canonical simplification, differentiation and substitution.

An expression is brought to a *normal form*: a map from monomials to exact
rational coefficients.  A monomial is a sorted tuple of ``(base, exponent)``
pairs.  Bases are symbols, undetermined function applications, the
exponential sentinel (``exp(a)`` is stored as ``E^a`` so products of
exponentials merge), ``ln``/``sin``/``cos`` atoms, positive rational
constants raised to non-integer powers, and irreducible sums raised to
negative or non-integer powers.  Exponents are themselves canonical
expressions, which makes ``c^(1 - sigma)`` and ``c^(-sigma) * c`` identical.

Rewrite rules beyond plain expansion:

* ``(x*y)^a -> x^a y^a`` and ``(x^a)^b -> x^(a b)`` for positive-domain
  bases (or integer ``b``);
* ``exp(a) exp(b) -> exp(a + b)``;
* ``ln(k x^a) -> ln k + a ln x`` for positive-domain ``x`` and ``k > 0``;
* ``sin(u)^n -> sin(u)^(n-2) (1 - cos(u)^2)`` for integer ``n >= 2``;
* rational functions of symbols are reduced to lowest terms (via sympy's
  ``cancel``) whenever a sum appears in a denominator.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Mapping

from .nodes import (
    EXP_BASE,
    ONE,
    ZERO,
    Add,
    Const,
    Expr,
    Func,
    FuncApp,
    Mul,
    Pow,
    Symbol,
    as_expr,
    depends_on,
)

Monomial = tuple  # tuple[tuple[Expr, Expr], ...]
NF = dict  # dict[Monomial, Fraction]


class DomainError(ArithmeticError):
    """Raised when an exact operation is undefined (e.g. 0 to a negative power)."""


# ---------------------------------------------------------------------------
# helpers


def _mono_key(mono: Monomial) -> tuple:
    return tuple((b._key, x._key) for b, x in mono)


def _make_mono(d: dict) -> Monomial:
    return tuple(sorted(d.items(), key=lambda bx: bx[0]._key))


def _int_value(e: Expr) -> int | None:
    if isinstance(e, Const) and e.value.denominator == 1:
        return int(e.value)
    return None


def _positive_base(b: Expr) -> bool:
    if b is EXP_BASE:
        return True
    if isinstance(b, Symbol):
        return b.positive_domain
    if isinstance(b, Const):
        return b.value > 0
    if isinstance(b, Func) and b.name == "exp":
        return True
    return False


def _iroot(n: int, k: int) -> int | None:
    if n < 0:
        return None
    r = round(n ** (1.0 / k)) if n else 0
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand**k == n:
            return cand
    return None


# ---------------------------------------------------------------------------
# normal form arithmetic


@lru_cache(maxsize=1 << 16)
def _exp_sum(x1: Expr, x2: Expr) -> Expr:
    if isinstance(x1, Const) and isinstance(x2, Const):
        return Const(x1.value + x2.value)
    return simplify(Add((x1, x2)))


@lru_cache(maxsize=1 << 16)
def _exp_prod(x1: Expr, x2: Expr) -> Expr:
    if isinstance(x1, Const) and isinstance(x2, Const):
        return Const(x1.value * x2.value)
    return simplify(Mul((x1, x2)))


def _mono_mul(m1: Monomial, m2: Monomial) -> tuple[Fraction, Monomial]:
    if not m1:
        return Fraction(1), m2
    if not m2:
        return Fraction(1), m1
    d = dict(m1)
    coef = Fraction(1)
    for b, x in m2:
        if b in d:
            s = _exp_sum(d[b], x)
            if s == ZERO:
                del d[b]
                continue
            n = _int_value(s)
            if isinstance(b, Const) and n is not None:
                del d[b]
                coef *= b.value**n
                continue
            d[b] = s
        else:
            d[b] = x
    return coef, _make_mono(d)


def _nf_add(a: NF, b: NF) -> NF:
    out = dict(a)
    for m, k in b.items():
        v = out.get(m, 0) + k
        if v:
            out[m] = v
        else:
            out.pop(m, None)
    return out


def _nf_scale(a: NF, k: Fraction) -> NF:
    if not k:
        return {}
    return {m: v * k for m, v in a.items()}


def _nf_mul(a: NF, b: NF) -> NF:
    out: dict = {}
    for m1, k1 in a.items():
        for m2, k2 in b.items():
            c, m = _mono_mul(m1, m2)
            if any(isinstance(b, Add) and (_int_value(x) or -1) >= 0 for b, x in m):
                # a sum atom whose exponents merged to a non-negative integer
                out = _nf_add(out, _expand_sum_atoms(m, k1 * k2 * c))
                continue
            v = out.get(m, 0) + k1 * k2 * c
            if v:
                out[m] = v
            else:
                out.pop(m, None)
    return out


def _expand_sum_atoms(m: Monomial, k: Fraction) -> NF:
    rest = {}
    term: NF = {}
    expand = []
    for b, x in m:
        n = _int_value(x)
        if isinstance(b, Add) and n is not None and n >= 0:
            expand.append((b, x))
        else:
            rest[b] = x
    term = {_make_mono(rest): k}
    for b, x in expand:
        term = _nf_mul(term, _nf_pow(to_nf(b), x))
    return term


def _atom(base: Expr, exp: Expr = ONE) -> NF:
    return {((base, exp),): Fraction(1)}


def _const_pow(k: Fraction, e: Expr) -> NF:
    """Normal form of k**e for k > 0 and non-integer e."""
    if k == 1:
        return {(): Fraction(1)}
    if isinstance(e, Const):
        p, q = e.value.numerator, e.value.denominator
        rn, rd = _iroot(k.numerator, q), _iroot(k.denominator, q)
        if rn is not None and rd is not None:
            return {(): Fraction(rn, rd) ** p}
        whole = math.floor(e.value)
        frac = e.value - whole
        return {((Const(k), Const(frac)),): k**whole}
    return _atom(Const(k), e)


def _nf_pow(base: NF, e: Expr) -> NF:
    n = _int_value(e)
    if not base:
        if isinstance(e, Const) and e.value <= 0:
            raise DomainError("zero raised to a non-positive power")
        return {}
    if n is not None and n >= 0:
        result: NF = {(): Fraction(1)}
        sq = base
        while n:
            if n & 1:
                result = _nf_mul(result, sq)
            n >>= 1
            if n:
                sq = _nf_mul(sq, sq)
        return result
    if len(base) == 1:
        (mono, k), = base.items()
        if n is not None or all(_positive_base(b) for b, _ in mono):
            if n is not None:
                out: NF = {(): k**n}
            elif k > 0:
                out = _const_pow(k, e)
            else:
                return _atom(from_nf(base), e)
            factors = {}
            for b, x in mono:
                factors[b] = _exp_prod(x, e)
            coef, m = _mono_mul((), _make_mono({b: x for b, x in factors.items() if x != ZERO}))
            return _nf_mul(out, {m: coef})
        return _atom(from_nf(base), e)
    # irreducible sum: scale so the leading coefficient is one
    lead = base[min(base, key=_mono_key)]
    if n is not None:
        scale: NF = {(): lead**n}
    elif lead > 0:
        scale = _const_pow(lead, e)
    else:
        return _atom(from_nf(base), e)
    normed = _nf_scale(base, 1 / lead)
    return _nf_mul(scale, _atom(from_nf(normed), e))


def _nf_ln(arg: NF) -> NF:
    if not arg:
        raise DomainError("ln(0)")
    if len(arg) == 1:
        (mono, k), = arg.items()
        if k > 0 and all(_positive_base(b) for b, _ in mono):
            out: NF = {} if k == 1 else _atom(Func("ln", Const(k)))
            for b, x in mono:
                if b is EXP_BASE:
                    out = _nf_add(out, to_nf(x))
                else:
                    out = _nf_add(out, _nf_mul(to_nf(x), _atom(Func("ln", b))))
            return out
    return _atom(Func("ln", from_nf(arg)))


@lru_cache(maxsize=1 << 17)
def to_nf(e: Expr) -> NF:
    """Normal form of ``e`` (before trig reduction and rationalisation)."""
    if isinstance(e, Const):
        return {(): e.value} if e.value else {}
    if isinstance(e, (Symbol, FuncApp)):
        return _atom(e)
    if isinstance(e, Add):
        out: NF = {}
        for t in e.terms:
            out = _nf_add(out, to_nf(t))
        return out
    if isinstance(e, Mul):
        out = {(): Fraction(1)}
        for f in e.factors:
            out = _nf_mul(out, to_nf(f))
            if not out:
                return {}
        return out
    if isinstance(e, Pow):
        x = simplify(e.exp)
        if x == ZERO:
            return {(): Fraction(1)}
        if x == ONE:
            return to_nf(e.base)
        return _nf_pow(to_nf(e.base), x)
    if isinstance(e, Func):
        if e.name == "exp":
            a = simplify(e.arg)
            if a == ZERO:
                return {(): Fraction(1)}
            return _atom(EXP_BASE, a)
        if e.name == "ln":
            return _nf_ln(to_nf(e.arg))
        a = simplify(e.arg)
        if a == ZERO:
            return {} if e.name == "sin" else {(): Fraction(1)}
        return _atom(Func(e.name, a))
    raise TypeError(f"unsupported node {type(e).__name__}")


def from_nf(nf: NF) -> Expr:
    if not nf:
        return ZERO
    terms = []
    for mono in sorted(nf, key=_mono_key):
        k = nf[mono]
        factors: list[Expr] = []
        for b, x in mono:
            if b is EXP_BASE:
                factors.append(Func("exp", x))
            elif x == ONE:
                factors.append(b)
            else:
                factors.append(Pow(b, x))
        if not factors:
            terms.append(Const(k))
        elif k == 1 and len(factors) == 1:
            terms.append(factors[0])
        elif k == 1:
            terms.append(Mul(factors))
        else:
            terms.append(Mul([Const(k), *factors]))
    return terms[0] if len(terms) == 1 else Add(terms)


# ---------------------------------------------------------------------------
# post passes


def _reduce_trig(nf: NF) -> NF:
    """Rewrite sin(u)^n (n >= 2) using sin^2 = 1 - cos^2."""
    if not any(isinstance(b, Func) and b.name == "sin" and (_int_value(x) or 0) >= 2
               for m in nf for b, x in m):
        return nf
    out: NF = {}
    for mono, k in nf.items():
        term: NF = {mono: k}
        for b, x in mono:
            n = _int_value(x)
            if isinstance(b, Func) and b.name == "sin" and n is not None and n >= 2:
                rest = tuple(bx for bx in mono if bx[0] != b)
                half, odd = divmod(n, 2)
                cos2 = _nf_add({(): Fraction(1)}, {((Func("cos", b.arg), Const(2)),): Fraction(-1)})
                term = _nf_mul({rest: k}, _nf_pow(cos2, Const(half)))
                if odd:
                    term = _nf_mul(term, _atom(b))
                break
        out = _nf_add(out, term)
    return out


@lru_cache(maxsize=1 << 14)
def _is_polynomial(e: Expr) -> bool:
    for node in e.walk():
        if isinstance(node, (Func, FuncApp)):
            return False
        if isinstance(node, Pow) and not (_int_value(node.exp) is not None and _int_value(node.exp) >= 0):
            return False
    return True


def _rational_factor(bx) -> bool:
    b, x = bx
    if _int_value(x) is None:
        return False
    if isinstance(b, Symbol):
        return True
    return isinstance(b, Add) and _is_polynomial(b)


def _rationalize(nf: NF) -> NF:
    if not any(isinstance(b, Add) and _int_value(x) is not None and _int_value(x) < 0
               for m in nf for b, x in m):
        return nf
    groups: dict = {}
    for mono, k in nf.items():
        key = tuple(bx for bx in mono if not _rational_factor(bx))
        rat = tuple(bx for bx in mono if _rational_factor(bx))
        groups.setdefault(key, []).append((rat, k))
    out: NF = {}
    for key, items in groups.items():
        needs = any(isinstance(b, Add) and _int_value(x) < 0 for rat, _ in items for b, x in rat)
        if not needs:
            for rat, k in items:
                c, m = _mono_mul(rat, key)
                out = _nf_add(out, {m: k * c})
            continue
        out = _nf_add(out, _nf_mul(_cancel({rat: k for rat, k in items}), {key: Fraction(1)}))
    return out


class _NotRational(Exception):
    pass


@lru_cache(maxsize=256)
def _ring(names: tuple[str, ...]):
    import sympy
    from sympy.polys.rings import ring

    R, *gens = ring(",".join(names) if names else "_z", sympy.QQ)
    return R, dict(zip(names, gens))


def _qq(v: Fraction):
    import sympy

    return sympy.QQ(v.numerator, v.denominator)


def _to_ring(e: Expr, R, gens: dict):
    """Polynomial ring element of a polynomial expression."""
    if isinstance(e, Const):
        return R(_qq(e.value))
    if isinstance(e, Symbol):
        return gens[e.name]
    if isinstance(e, Pow):
        n = _int_value(e.exp)
        if n is None or n < 0:
            raise _NotRational
        return _to_ring(e.base, R, gens) ** n
    if isinstance(e, Mul):
        out = R.one
        for f in e.factors:
            out *= _to_ring(f, R, gens)
        return out
    if isinstance(e, Add):
        out = R.zero
        for t in e.terms:
            out += _to_ring(t, R, gens)
        return out
    raise _NotRational


def _poly_nf(poly, syms: list[Symbol]) -> NF:
    out: NF = {}
    for monom, c in poly.terms():
        mono = tuple((s, Const(Fraction(k))) for s, k in zip(syms, monom) if k)
        out = _nf_add(out, _nf_mul({(): Fraction(int(c.numerator), int(c.denominator))},
                                   _nf_mul_atoms(mono)))
    return out


def _nf_mul_atoms(mono) -> NF:
    out: NF = {(): Fraction(1)}
    for s, x in mono:
        out = _nf_mul(out, {((s, x),): Fraction(1)})
    return out


def _cancel(nf: NF) -> NF:
    """Reduce a rational function of symbols to lowest terms."""
    syms = sorted({n for m in nf for b, _ in m for n in b.walk() if isinstance(n, Symbol)},
                  key=lambda s: s.sort_key)
    R, gens = _ring(tuple(s.name for s in syms))
    by_den: dict = {}
    try:
        for mono, k in nf.items():
            num = R(_qq(k))
            den = R.one
            for b, x in mono:
                n = _int_value(x)
                if n >= 0:
                    num *= _to_ring(b, R, gens) ** n
                else:
                    den *= _to_ring(b, R, gens) ** -n
            by_den[den] = by_den.get(den, R.zero) + num
    except _NotRational:
        return _cancel_sympy(nf)
    D = R.one
    for den in by_den:
        D = D.lcm(den)
    N = R.zero
    for den, num in by_den.items():
        N += num * D.exquo(den)
    if not N:
        return {}
    N, D = N.cancel(D)
    num = _poly_nf(N, syms)
    den = _poly_nf(D, syms)
    return _nf_mul(num, _nf_pow(den, Const(-1)))


def _cancel_sympy(nf: NF) -> NF:
    import sympy

    from .bridge import from_sympy, to_sympy

    expr = from_nf(nf)
    table: dict = {}
    reduced = sympy.cancel(to_sympy(expr, table))
    num, den = sympy.fraction(reduced)
    return _nf_mul(to_nf(from_sympy(sympy.expand(num), table)),
                   _nf_pow(to_nf(from_sympy(sympy.expand(den), table)), Const(-1)))


# ---------------------------------------------------------------------------
# public api


@lru_cache(maxsize=1 << 16)
def simplify(e: Expr) -> Expr:
    """Canonical form of ``e``; idempotent."""
    e = as_expr(e)
    if isinstance(e, (Const, Symbol)):
        return e
    return from_nf(normal_form(e))


def normal_form(e: Expr) -> NF:
    return _rationalize(_reduce_trig(to_nf(e)))


def equals(a, b) -> bool:
    """Canonical equality."""
    return simplify(Add((as_expr(a), -as_expr(b)))) == ZERO


def terms_of(e: Expr) -> tuple[Expr, ...]:
    e = simplify(e)
    if e == ZERO:
        return ()
    return e.terms if isinstance(e, Add) else (e,)


@lru_cache(maxsize=1 << 16)
def _depends(e: Expr, v: Symbol) -> bool:
    if isinstance(e, Symbol):
        return e == v
    if isinstance(e, FuncApp):
        return any(x == v for x in e.variables)
    return any(_depends(a, v) for a in e.args)


def _d(e: Expr, v: Symbol, memo: dict) -> Expr:
    hit = memo.get(e)
    if hit is not None:
        return hit
    if not _depends(e, v):
        out: Expr = ZERO
    elif isinstance(e, Symbol):
        out = ONE if e == v else ZERO
    elif isinstance(e, FuncApp):
        out = e.derivative(v) if any(x == v for x in e.variables) else ZERO
    elif isinstance(e, Add):
        parts = [_d(t, v, memo) for t in e.terms]
        parts = [p for p in parts if p != ZERO]
        out = Add(parts) if parts else ZERO
    elif isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            df = _d(f, v, memo)
            if df != ZERO:
                parts.append(Mul([*e.factors[:i], df, *e.factors[i + 1:]]))
        out = Add(parts) if parts else ZERO
    elif isinstance(e, Pow):
        b, x = e.base, e.exp
        db = _d(b, v, memo)
        if not _depends(x, v):
            out = Mul((x, Pow(b, Add((x, Const(-1)))), db))
        else:
            dx = _d(x, v, memo)
            out = Mul((e, Add((Mul((dx, Func("ln", b))), Mul((x, db, Pow(b, Const(-1))))))))
    elif isinstance(e, Func):
        da = _d(e.arg, v, memo)
        if e.name == "exp":
            out = Mul((e, da))
        elif e.name == "ln":
            out = Mul((da, Pow(e.arg, Const(-1))))
        elif e.name == "sin":
            out = Mul((Func("cos", e.arg), da))
        else:
            out = Mul((Const(-1), Func("sin", e.arg), da))
    else:
        raise TypeError(f"cannot differentiate {type(e).__name__}")
    memo[e] = out
    return out


@lru_cache(maxsize=1 << 15)
def _differentiate(e: Expr, v: Symbol) -> Expr:
    return simplify(_d(simplify(e), v, {}))


def differentiate(e: Expr, v: Symbol | str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``v``, canonical."""
    if isinstance(v, str):
        v = next((s for s in as_expr(e).symbols if s.name == v), None)
        if v is None:
            return ZERO
    return _differentiate(as_expr(e), v)


def _replace(e: Expr, mapping: Mapping, memo: dict) -> Expr:
    hit = memo.get(e)
    if hit is not None:
        return hit
    if isinstance(e, Symbol):
        out = mapping.get(e.name, e)
    elif isinstance(e, (Const, FuncApp)) or e is EXP_BASE:
        out = e
    elif isinstance(e, Add):
        out = Add([_replace(t, mapping, memo) for t in e.terms])
    elif isinstance(e, Mul):
        out = Mul([_replace(f, mapping, memo) for f in e.factors])
    elif isinstance(e, Pow):
        out = Pow(_replace(e.base, mapping, memo), _replace(e.exp, mapping, memo))
    elif isinstance(e, Func):
        out = Func(e.name, _replace(e.arg, mapping, memo))
    else:
        raise TypeError(type(e).__name__)
    memo[e] = out
    return out


@lru_cache(maxsize=1 << 16)
def symbol_names(e: Expr) -> frozenset[str]:
    if isinstance(e, Symbol):
        return frozenset((e.name,))
    out: set = set()
    for a in e.args:
        out |= symbol_names(a)
    return frozenset(out)


def replace(e: Expr, bindings: Mapping) -> Expr:
    """Structural substitution without simplification."""
    e = as_expr(e)
    mapping = {(k.name if isinstance(k, Symbol) else k): as_expr(v) for k, v in bindings.items()}
    names = symbol_names(e)
    mapping = {k: v for k, v in mapping.items() if k in names}
    return _replace(e, mapping, {}) if mapping else e


def substitute(e: Expr, bindings: Mapping) -> Expr:
    """Simultaneous substitution of symbols (by Symbol or name), then simplify."""
    return simplify(replace(e, bindings))


def substitute_functions(e: Expr, functions: Mapping[str, Expr]) -> Expr:
    """Replace undetermined functions by concrete expressions.

    ``functions`` maps a function name to an expression in the same
    variables as the function's applications; derivatives are taken
    accordingly.
    """
    cache: dict = {}

    def concrete(app: FuncApp) -> Expr:
        if app not in cache:
            body = functions[app.name]
            lookup = {v.name: v for v in app.variables}
            for name, order in app.derivs:
                for _ in range(order):
                    body = differentiate(body, lookup[name])
            cache[app] = body
        return cache[app]

    def rec(node: Expr) -> Expr:
        if isinstance(node, FuncApp):
            return concrete(node) if node.name in functions else node
        if isinstance(node, Add):
            return Add([rec(t) for t in node.terms])
        if isinstance(node, Mul):
            return Mul([rec(f) for f in node.factors])
        if isinstance(node, Pow):
            return Pow(rec(node.base), rec(node.exp))
        if isinstance(node, Func):
            return Func(node.name, rec(node.arg))
        return node

    return simplify(rec(as_expr(e)))


def coefficient_and_rest(term: Expr) -> tuple[Fraction, Expr]:
    """Split a canonical term into its rational coefficient and the rest."""
    if isinstance(term, Const):
        return term.value, ONE
    if isinstance(term, Mul) and isinstance(term.factors[0], Const):
        rest = term.factors[1:]
        return term.factors[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), term
