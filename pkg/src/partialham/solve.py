"""Ansatz solving of determining systems with parameter case splits.

The unknown functions are written as linear combinations of basis terms
with unknown coefficients.  Substituting into the separated residuals and
collecting by basis atoms (powers of t and the states, logarithms,
trigonometric atoms and ``exp(rate*t)``) gives a linear system in the
coefficients whose entries are rational functions of the parameters and of
unknown rates.  Gaussian elimination runs over that rational function field.
A pivot that is not provably nonzero splits the computation: the generic
branch assumes it nonzero, and each special branch sets one of its factors
to zero by solving it for a rate or a parameter and restarts from scratch.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy
from sympy.polys.fields import field as frac_field

from .determine import (
    DeterminingSystem,
    ParamSampler,
    SymmetryCandidate,
    determining_system,
    verify_candidate,
)
from .expr import (
    EXP_BASE,
    ONE,
    ZERO,
    Add,
    Const,
    Expr,
    Func,
    Mul,
    Pow,
    Symbol,
    Verdict,
    as_expr,
    compile_exprs,
    exp,
    ln,
    normal_form,
    parse_expr,
    render,
    simplify,
    substitute,
    substitute_functions,
    terms_of,
)
from .expr.bridge import from_sympy, to_sympy
from .expr.nodes import COEF, PARAM, RATE, depends_on
from .expr.normal import from_nf
from .hamsys import ConstraintSet, SystemModel, normalize_relation


class SolveError(RuntimeError):
    pass


class BranchLimitExceeded(SolveError):
    pass


class UnsolvableRateCondition(SolveError):
    pass


def rate_symbol(name: str = "lam") -> Symbol:
    return Symbol(name, RATE)


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class AnsatzTemplate:
    """Basis terms per unknown function; each term gets its own coefficient."""

    xi: tuple[Expr, ...]
    eta: tuple[tuple[str, tuple[Expr, ...]], ...]
    B: tuple[Expr, ...]
    rates: tuple[str, ...] = ()

    @classmethod
    def of(cls, xi: Iterable, eta: Mapping[str, Iterable], B: Iterable,
           rates: Iterable[str] = ()) -> "AnsatzTemplate":
        return cls(_dedupe(xi), tuple((q, _dedupe(ts)) for q, ts in eta.items()), _dedupe(B),
                   tuple(rates))

    def slots(self) -> list[tuple[str, Expr]]:
        out = [("xi", t) for t in self.xi]
        for q, ts in self.eta:
            out += [(f"eta:{q}", t) for t in ts]
        out += [("B", t) for t in self.B]
        return out

    def __len__(self) -> int:
        return len(self.slots())

    def candidate(self, values: Sequence[Expr]) -> SymmetryCandidate:
        parts: dict[str, list[Expr]] = {}
        for (slot, term), v in zip(self.slots(), values):
            if v != ZERO:
                parts.setdefault(slot, []).append(Mul((v, term)))
        get = lambda s: simplify(Add(parts[s])) if s in parts else ZERO  # noqa: E731
        return SymmetryCandidate(get("xi"), tuple((q, get(f"eta:{q}")) for q, _ in self.eta), get("B"))

    def generic(self) -> tuple[SymmetryCandidate, list[Symbol]]:
        coefs = [Symbol(f"c{i + 1}", COEF) for i in range(len(self))]
        return self.candidate(coefs), coefs

    def to_json(self) -> dict:
        return {
            "xi": [render(t) for t in self.xi],
            "eta": {q: [render(t) for t in ts] for q, ts in self.eta},
            "B": [render(t) for t in self.B],
            "unknown_rates": list(self.rates),
        }


def _dedupe(terms: Iterable) -> tuple[Expr, ...]:
    out: list[Expr] = []
    for t in terms:
        t = simplify(as_expr(t))
        if t != ZERO and t not in out:
            out.append(t)
    return tuple(out)


def template_from_json(sys: SystemModel, data: Mapping) -> AnsatzTemplate:
    """Template from ``{"xi": [...], "eta": {state: [...]}, "B": [...], "unknown_rate": name}``."""
    table = dict(sys.symbols)
    rates = data.get("unknown_rate") or data.get("unknown_rates") or []
    if isinstance(rates, str):
        rates = [rates]
    for r in rates:
        table[r] = rate_symbol(r)
    parse = lambda s: parse_expr(str(s), table, strict=True)  # noqa: E731
    eta = data.get("eta", {})
    unknown = set(eta) - set(sys.states)
    if unknown:
        raise ValueError(f"eta given for non-states: {', '.join(sorted(unknown))}")
    return AnsatzTemplate.of([parse(s) for s in data.get("xi", [])],
                             {q: [parse(s) for s in eta.get(q, [])] for q in sys.states},
                             [parse(s) for s in data.get("B", [])], rates)


def _exponent_params(sys: SystemModel, state: str) -> list[str]:
    """Parameters occurring in exponents of ``state`` in H or control relations."""
    found: list[str] = []
    exprs = [sys.H, *(c.relation for c in sys.controls)]
    for e in exprs:
        for node in simplify(e).walk():
            if isinstance(node, Pow) and isinstance(node.base, Symbol) and node.base.name == state:
                for s in sorted(node.exp.symbols, key=lambda s: s.name):
                    if s.kind == PARAM and s.name not in found:
                        found.append(s.name)
    return found


def _monomials(states: list[str], degree: int) -> list[dict[str, int]]:
    out: list[dict[str, int]] = [{}]
    for _ in range(degree):
        nxt = []
        for m in out:
            for s in states:
                if sum(m.values()) < degree:
                    mm = dict(m)
                    mm[s] = mm.get(s, 0) + 1
                    nxt.append(mm)
        out += nxt
    uniq = []
    for m in out:
        if m not in uniq:
            uniq.append(m)
    return uniq


def candidate_rates(sys: SystemModel) -> list[Expr]:
    """0, +-parameters, and +-(1, 2) times the linear coefficient of each
    phase variable in each equation of motion."""
    rates: list[Expr] = [ZERO]
    sym = sys.symbols
    for p in sys.param_names:
        rates += [sym[p], -sym[p]]
    phase = [sym[v] for v in sys.phase_vars]
    for _, rhs in sys.equations_of_motion():
        linear: dict[str, list[Expr]] = {}
        for term in terms_of(rhs):
            for v in phase:
                k = simplify(term / v)
                if not depends_on(k, [sys.time, *sys.phase_vars]):
                    linear.setdefault(v.name, []).append(k)
        for ks in linear.values():
            k = simplify(Add(ks))
            if k.symbols:
                for mult in (1, 2, -1, -2):
                    rates.append(simplify(Const(mult) * k))
    return list(dict.fromkeys(simplify(r) for r in rates))


def default_template(sys: SystemModel, degree: int = 2, with_logs: bool = False,
                     with_unknown_rates: bool = False) -> AnsatzTemplate:
    """Heuristic basis: state monomials x {1, t} x exp(rate t).

    The coefficient functions xi and eta use monomials of total degree at
    most ``degree`` (plus x^-1 and x^(+-k) for exponent parameters k); the
    gauge term goes up to ``2*degree`` since it balances products such as
    H*xi.
    """
    if degree < 0 or degree > 4:
        raise ValueError("degree must be between 0 and 4")
    sym = sys.symbols
    t = sys.t
    states = sys.states

    def powers(deg: int) -> list[Expr]:
        out = [simplify(Mul([Pow(sym[s], Const(k)) for s, k in m.items()]) if m else ONE)
               for m in _monomials(states, deg)]
        if deg > 0:
            for s in states:
                out.append(Pow(sym[s], Const(-1)))
                for k in _exponent_params(sys, s):
                    out += [Pow(sym[s], sym[k]), Pow(sym[s], -sym[k])]
        if with_logs:
            logs = []
            for s in states:
                for k in (1, 2):
                    logs += [Mul((b, Pow(ln(sym[s]), Const(k)))) for b in out]
            out += logs
        return [simplify(x) for x in out]

    rates = candidate_rates(sys) if degree > 0 else [ZERO]
    names: list[str] = []
    if with_unknown_rates:
        lam = rate_symbol()
        rates = rates + [lam]
        names.append(lam.name)
    times = [ONE, t] if degree > 0 else [ONE]

    def expand(base: list[Expr]) -> list[Expr]:
        return [simplify(Mul((b, tt, exp(Mul((r, t)))))) for r in rates for tt in times for b in base]

    low, high = powers(degree), powers(2 * degree)
    return AnsatzTemplate.of(expand(low), {q: expand(low) for q in states}, expand(high), names)


# ---------------------------------------------------------------------------
# linearization


class NonLinearTemplate(SolveError):
    pass


@dataclass(frozen=True)
class Row:
    """One scalar equation: residual index, basis key, entries by column."""

    residual: int
    key: tuple
    entries: tuple[tuple[int, Expr], ...]


def _split_exponent(x: Expr, basis: list[str], t: str) -> tuple[Expr, Expr, Expr]:
    """Split an exp exponent into (rate, other basis-dependent part, parameter part)."""
    rate: list[Expr] = []
    other: list[Expr] = []
    const: list[Expr] = []
    tsym = Symbol(t)
    for term in terms_of(x):
        if not depends_on(term, basis):
            const.append(term)
            continue
        k = simplify(term / tsym)
        if not depends_on(k, basis):
            rate.append(k)
        else:
            other.append(term)
    mk = lambda xs: simplify(Add(xs)) if xs else ZERO  # noqa: E731
    return mk(rate), mk(other), mk(const)


def _split_monomial(mono, basis: list[str], t: str, index: Mapping[str, int] | None = None):
    """Split a monomial into (unknown column, basis key, parameter factors)."""
    col = None
    key: list = []
    coef_part: dict = {}
    tsym = Symbol(t)
    for b, x in mono:
        if isinstance(b, Symbol) and b.kind == COEF and index is not None:
            if col is not None or x != ONE:
                raise NonLinearTemplate("residual is not linear in the unknown coefficients")
            col = index[b.name]
        elif b is EXP_BASE:
            rate, other, const = _split_exponent(x, basis, t)
            if rate != ZERO or other != ZERO:
                key.append((EXP_BASE, simplify(Add((Mul((rate, tsym)), other)))))
            if const != ZERO:
                coef_part[EXP_BASE] = const
        elif depends_on(b, basis) or depends_on(x, basis):
            key.append((b, x))
        else:
            coef_part[b] = x
    key_t = tuple(sorted(key, key=lambda bx: (bx[0]._key, bx[1]._key)))
    cm = tuple(sorted(coef_part.items(), key=lambda bx: bx[0]._key))
    return col, key_t, cm


def linearize(residuals: Sequence[Expr], coefs: Sequence[Symbol], basis: list[str],
              t: str) -> list[Row]:
    """Rows of the linear system: one per (residual, basis key)."""
    index = {c.name: i for i, c in enumerate(coefs)}
    acc: dict[tuple, dict[int, dict]] = {}
    for ri, r in enumerate(residuals):
        for mono, k in normal_form(r).items():
            col, key, cm = _split_monomial(mono, basis, t, index)
            if col is None:
                raise NonLinearTemplate("residual has a term free of unknown coefficients")
            entry = acc.setdefault((ri, key), {}).setdefault(col, {})
            entry[cm] = entry.get(cm, 0) + k
    return _finish_rows(acc)


def _finish_rows(acc: dict) -> list[Row]:
    out: list[Row] = []
    for (ri, key) in sorted(acc, key=lambda rk: (rk[0], [(b._key, x._key) for b, x in rk[1]])):
        entries = []
        for col in sorted(acc[(ri, key)]):
            nf = {m: v for m, v in acc[(ri, key)][col].items() if v}
            e = simplify(from_nf(nf)) if nf else ZERO
            if e != ZERO:
                entries.append((col, e))
        if entries:
            out.append(Row(ri, key, tuple(entries)))
    return out


def substitute_rows(rows: Sequence[Row], sub: Mapping[str, Expr], basis: list[str], t: str) -> list[Row]:
    """Apply a parameter/rate substitution; rows whose keys coincide merge."""
    if not sub:
        return list(rows)
    rekeyed: dict[tuple, tuple] = {}
    acc: dict[tuple, dict[int, dict]] = {}
    for row in rows:
        if row.key not in rekeyed:
            kexpr = substitute(from_nf({row.key: Fraction(1)}), sub)
            nf = normal_form(kexpr)
            if len(nf) != 1:
                raise NonLinearTemplate("basis key is not a monomial after substitution")
            (mono, k), = nf.items()
            _, key, cm = _split_monomial(mono, basis, t)
            rekeyed[row.key] = (key, {cm: k})
        key, factor = rekeyed[row.key]
        bucket = acc.setdefault((row.residual, key), {})
        for col, e in row.entries:
            val = normal_form(Mul((from_nf(factor), substitute(e, sub))))
            entry = bucket.setdefault(col, {})
            for m, v in val.items():
                entry[m] = entry.get(m, 0) + v
    return _finish_rows(acc)


def components(rows: Sequence[Row], ncols: int) -> list[tuple[list[int], list[Row]]]:
    """Connected components of the unknowns; unused unknowns come out alone."""
    parent = list(range(ncols))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for row in rows:
        cols = [c for c, _ in row.entries]
        for c in cols[1:]:
            a, b = find(cols[0]), find(c)
            if a != b:
                parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for c in range(ncols):
        groups.setdefault(find(c), []).append(c)
    by_root: dict[int, list[Row]] = {}
    for row in rows:
        by_root.setdefault(find(row.entries[0][0]), []).append(row)
    return [(cols, by_root.get(root, [])) for root, cols in sorted(groups.items())]


# ---------------------------------------------------------------------------
# elimination over Q(params, rates)


def _poly_key(f) -> tuple:
    """Monic-normalized representation of a polynomial for set membership."""
    g = f.quo_ground(f.LC)
    return tuple(sorted(g.terms()))


def _sign_definite(f, ring_symbols, positive: set, negative: set) -> bool:
    """True when every term has the same sign and one term is strictly signed."""
    signs = set()
    strict = False
    for monom, c in f.terms():
        s = 1 if c > 0 else -1
        exact = True
        for name, e in zip(ring_symbols, monom):
            if e == 0 or name in positive:
                continue
            if name in negative:
                s *= (-1) ** e
            elif e % 2:
                return False
            else:
                exact = False
        signs.add(s)
        strict = strict or exact
    return len(signs) == 1 and strict


def _eliminate(rows: list[dict], K, positive: set, negative: set, nonzero: set, on_branch) -> dict:
    """Sparse Gauss-Jordan elimination; returns pivot rows keyed by column.

    ``on_branch(factors)`` is called before assuming a list of polynomial
    factors nonzero; the assumption is then recorded in ``nonzero``.
    """
    names = [str(g) for g in K.symbols]
    factor_cache: dict = {}

    def open_factors(e) -> list:
        num = e.numer
        if num.is_ground:
            return []
        hit = factor_cache.get(num)
        if hit is None:
            _, facs = num.factor_list()
            hit = [f for f, _ in facs if not f.is_ground]
            factor_cache[num] = hit
        return [f for f in hit if _poly_key(f) not in nonzero
                and not _sign_definite(f, names, positive, negative)]

    pivots: dict[int, dict] = {}

    def reduce(row: dict) -> dict:
        for c in [c for c in row if c in pivots]:
            a = row.get(c)
            if a is None:
                continue
            for cc, v in pivots[c].items():
                nv = row.get(cc, 0) - a * v
                if nv == 0:
                    row.pop(cc, None)
                else:
                    row[cc] = nv
        return row

    def install(row: dict, col: int) -> None:
        inv = 1 / row[col]
        row = {c: v * inv for c, v in row.items()}
        for pr in pivots.values():
            a = pr.get(col)
            if a is None:
                continue
            for cc, v in row.items():
                nv = pr.get(cc, 0) - a * v
                if nv == 0:
                    pr.pop(cc, None)
                else:
                    pr[cc] = nv
        pivots[col] = row

    pending = [dict(r) for r in rows]
    while pending:
        progress = False
        rest = []
        for row in pending:
            row = reduce(row)
            if not row:
                continue
            cols = sorted(row)
            choice = next((c for c in cols if row[c].numer.is_ground and row[c].denom.is_ground), None)
            if choice is None:
                choice = next((c for c in cols if not open_factors(row[c])), None)
            if choice is None:
                rest.append(row)
                continue
            install(row, choice)
            progress = True
        pending = rest
        if pending and not progress:
            best = None
            for row in pending:
                for c in sorted(row):
                    size = (len(row[c].numer.terms()) + len(row[c].denom.terms()), c)
                    if best is None or size < best[0]:
                        best = (size, row, c)
            _, row, c = best
            need = open_factors(row[c])
            on_branch(need)
            for f in need:
                nonzero.add(_poly_key(f))
    return pivots


def _kernel(pivots: dict, cols: list[int]) -> list[dict]:
    basis = []
    for f in cols:
        if f in pivots:
            continue
        v = {f: 1}
        for pc, row in pivots.items():
            a = row.get(f)
            if a is not None and a != 0:
                v[pc] = -a
        basis.append(v)
    return basis


def linear_identities(expr: Expr, coefs: Sequence[Symbol], variables: list[str], t: str,
                      signs: Mapping[str, int] | None = None) -> list[dict[int, Expr]]:
    """Kernel of ``expr == 0`` identically in ``variables``, for generic parameters.

    ``expr`` must be linear in ``coefs``; each returned vector maps a
    coefficient index to its value.
    """
    rows = linearize([expr], coefs, variables, t)
    if not rows:
        return [{i: ONE} for i in range(len(coefs))]
    gens = sorted({n for r in rows for _, e in r.entries for n in _names(e)})
    K, *_ = frac_field([sympy.Symbol(g) for g in gens] or [sympy.Symbol("_")], sympy.QQ)
    mrows = [{c: v for c, v in ((c, K.from_expr(to_sympy(e))) for c, e in r.entries) if v != 0}
             for r in rows]
    signs = signs or {}
    pos = {k for k, v in signs.items() if v > 0}
    neg = {k for k, v in signs.items() if v < 0}
    pivots = _eliminate(mrows, K, pos, neg, set(), lambda factors: None)
    out = []
    for vec in _kernel(pivots, list(range(len(coefs)))):
        out.append({c: (Const(v) if isinstance(v, int) else simplify(from_sympy(v.as_expr(), {})))
                    for c, v in vec.items()})
    return out


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class OperatorSolution:
    candidate: SymmetryCandidate
    rates: tuple[tuple[str, Expr], ...]
    constraints: ConstraintSet
    verdict: Verdict
    branch: int

    def to_json(self) -> dict:
        d = self.candidate.to_json()
        d["rates"] = {k: render(v) for k, v in self.rates}
        d["constraints"] = self.constraints.describe()
        d["verification"] = self.verdict.value
        d["branch"] = self.branch
        return d


@dataclass
class BranchReport:
    index: int
    component: int
    constraints: ConstraintSet
    rates: dict[str, Expr]
    operators: list[OperatorSolution] = field(default_factory=list)
    status: str = "ok"  # ok | rejected | limit | unsolvable
    reason: str = ""
    substitution: dict[str, Expr] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "component": self.component,
            "constraints": self.constraints.describe(),
            "rates": {k: render(v) for k, v in self.rates.items()},
            "operators": len(self.operators),
            "status": self.status,
            "reason": self.reason,
        }


@dataclass
class SolutionSet:
    """Principal operator span with its constraints, plus every branch examined."""

    operators: list[OperatorSolution]
    constraints: ConstraintSet
    branches: list[BranchReport]
    groups: list[tuple[ConstraintSet, list[OperatorSolution]]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def rejected(self) -> list[BranchReport]:
        return [b for b in self.branches if b.status != "ok"]

    @property
    def rates(self) -> list[Expr]:
        out: list[Expr] = []
        for op in self.operators:
            for _, r in op.rates:
                if r not in out:
                    out.append(r)
        return out

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "constraints": self.constraints.describe(),
            "operators": [op.to_json() for op in self.operators],
            "rates": [render(r) for r in self.rates],
            "alternatives": [
                {"constraints": c.describe(), "operators": [op.to_json() for op in ops]}
                for c, ops in self.groups[1:] if ops
            ],
            "branches": [b.to_json() for b in self.branches],
            "errors": list(self.errors),
        }


# ---------------------------------------------------------------------------
# branch tree


def _compose(sub: dict, name: str, value: Expr) -> dict:
    out = {k: substitute(v, {name: value}) for k, v in sub.items()}
    out[name] = value
    return out


def _has_radical(e: sympy.Expr) -> bool:
    return any(p.exp.is_Rational and not p.exp.is_Integer for p in e.atoms(sympy.Pow))


def _solve_factor(f_expr: Expr, rate_names: list[str],
                  param_order: list[str]) -> tuple[list[tuple[str, Expr]], str]:
    """Ways to satisfy ``f = 0`` as (symbol, value) choices, or a reason why not.

    Rates are preferred, then the last-declared parameter the factor is
    linear in; quadratic and cubic conditions keep rational roots only.
    """
    table: dict = {}
    sf = to_sympy(f_expr, table)
    present = {s.name for s in f_expr.symbols}
    order = [r for r in rate_names if r in present] + [p for p in reversed(param_order) if p in present]
    for name in order:
        poly = sympy.Poly(sf, sympy.Symbol(name))
        if poly.degree() == 1:
            a1, a0 = poly.all_coeffs()
            return [(name, simplify(from_sympy(sympy.cancel(-a0 / a1), table)))], ""
    for name in order:
        poly = sympy.Poly(sf, sympy.Symbol(name))
        if name in rate_names and poly.degree() > 3:
            raise UnsolvableRateCondition(f"rate condition {render(f_expr)} has degree {poly.degree()} in {name}")
        if 2 <= poly.degree() <= 3:
            roots = sympy.roots(poly, multiple=False)
            good = [r for r in roots if not _has_radical(r) and not r.has(sympy.I)]
            if good:
                return [(name, simplify(from_sympy(sympy.cancel(r), table))) for r in good], ""
            return [], f"roots in {name} are irrational"
    return [], "no parameter or rate can be solved for"


def _numerator(e: Expr) -> Expr:
    table: dict = {}
    s = sympy.together(to_sympy(simplify(e), table))
    return simplify(from_sympy(sympy.expand(sympy.numer(s)), table))


def _eta_names(det: DeterminingSystem) -> dict[str, str]:
    sys = det.model
    if len(sys.states) == 1:
        return {sys.states[0]: "eta"}
    return {q: f"eta_{q}" for q in sys.states}


def _is_trivial(cand: SymmetryCandidate, sys: SystemModel) -> bool:
    if cand.xi != ZERO or any(e != ZERO for _, e in cand.eta):
        return False
    return not depends_on(cand.B, sys.coefficient_vars)


class _Solver:
    def __init__(self, det: DeterminingSystem, tmpl: AnsatzTemplate, max_depth: int, seed: int,
                 verify: bool):
        self.sys = sys = det.model
        self.tmpl = tmpl
        self.max_depth = max_depth
        self.seed = seed
        self.verify = verify
        self.rate_names = list(tmpl.rates)
        self.param_order = sys.param_names
        self.symbols = dict(sys.symbols)
        for r in self.rate_names:
            self.symbols[r] = rate_symbol(r)
        self.positive = {p.name for p in sys.params if p.sign == 1}
        self.negative = {p.name for p in sys.params if p.sign == -1}
        self.basis = [sys.time, *sys.states]
        self.terms = [t for _, t in tmpl.slots()]
        cand, self.coefs = tmpl.generic()
        funcs = {"xi": cand.xi, "B": cand.B}
        names = _eta_names(det)
        for q, e in cand.eta:
            funcs[names[q]] = e
        residuals = [substitute_functions(r, funcs) for _, r in det.entries]
        self.errors: list[str] = []
        self.base_sub: dict[str, Expr] = {}
        try:
            self.base_sub = sys.assumptions.substitution(self.param_order)
        except ValueError as exc:
            self.errors.append(f"model assumptions not applied: {exc}")
        rows = linearize(residuals, self.coefs, self.basis, sys.time)
        self.rows = substitute_rows(rows, self.base_sub, self.basis, sys.time)
        self.branches: list[BranchReport] = []
        self._term_cache: dict = {}
        self.fixed_rates = self._fixed_rates()

    def _fixed_rates(self) -> set[Expr]:
        """Concrete exponential rates already present in the template."""
        out: set[Expr] = set()
        for term in self.terms:
            for mono in normal_form(term):
                rate = ZERO
                for b, x in mono:
                    if b is EXP_BASE:
                        rate, _, _ = _split_exponent(x, self.basis, self.sys.time)
                if not any(n in self.rate_names for n in _names(rate)):
                    out.add(rate)
        return out

    # helpers -----------------------------------------------------------
    def _expr(self, sym_expr) -> Expr:
        """Expression from sympy with the solver's symbols."""
        table = {n: s for n, s in self.symbols.items()}
        return simplify(from_sympy(sym_expr, table))

    def _term(self, col: int, sub: dict) -> Expr:
        key = (col, tuple(sorted((k, v) for k, v in sub.items())))
        hit = self._term_cache.get(key)
        if hit is None:
            hit = substitute(self.terms[col], sub)
            self._term_cache[key] = hit
        return hit

    def _constraints(self, sub: dict, nonzero: list[Expr]) -> ConstraintSet:
        rels = [_numerator(Symbol(k, PARAM) - v) for k, v in sub.items()
                if k not in self.rate_names]
        return ConstraintSet(tuple(rels), tuple(nonzero))

    def _report(self, comp: int, status: str, reason: str, sub: dict | None = None) -> None:
        sub = sub or {}
        rates = {k: v for k, v in sub.items() if k in self.rate_names}
        self.branches.append(BranchReport(len(self.branches), comp, self._constraints(sub, []), rates,
                                          [], status, reason, dict(sub)))

    def _sign_conflict(self, name: str, value: Expr) -> bool:
        if name in self.positive or name in self.negative:
            if isinstance(value, Const):
                return value.value == 0 or (value.value > 0) != (name in self.positive)
        return False

    # tree --------------------------------------------------------------
    def run(self) -> None:
        for ci, (cols, rows) in enumerate(components(self.rows, len(self.coefs))):
            self._tree(ci, cols, rows)

    def _tree(self, ci: int, cols: list[int], rows: list[Row]) -> None:
        queue: list[tuple[dict, list[Expr], int]] = [(dict(self.base_sub), [], 0)]
        seen: set = set()
        while queue:
            sub, nonzero, depth = queue.pop(0)
            key = tuple(sorted((k, v) for k, v in sub.items()))
            if key in seen:
                continue
            seen.add(key)
            self._leaf(ci, cols, rows, sub, nonzero, depth, queue)

    def _leaf(self, ci, cols, rows, sub, nonzero_exprs, depth, queue) -> None:
        delta = {k: v for k, v in sub.items() if k not in self.base_sub}
        try:
            srows = substitute_rows(rows, delta, self.basis, self.sys.time)
        except ArithmeticError as exc:
            self._report(ci, "rejected", f"singular under substitution ({exc})", sub)
            return
        gens = sorted({n for r in srows for _, e in r.entries for n in _names(e)} |
                      {n for e in nonzero_exprs for n in _names(e)})
        K, *_ = frac_field([sympy.Symbol(g) for g in gens] or [sympy.Symbol("_")], sympy.QQ)
        element = lambda e: K.from_expr(to_sympy(e))  # noqa: E731
        try:
            mrows = [{c: v for c, v in ((c, element(e)) for c, e in r.entries) if v != 0} for r in srows]
        except ZeroDivisionError:
            self._report(ci, "rejected", "singular under substitution", sub)
            return
        nonzero: set = set()
        for e in nonzero_exprs:
            el = element(e)
            if el == 0:
                self._report(ci, "rejected", f"contradicts {render(e)} != 0", sub)
                return
            if not el.numer.is_ground:
                _, facs = el.numer.factor_list()
                nonzero |= {_poly_key(f) for f, _ in facs if not f.is_ground}
        assumed = list(nonzero_exprs)

        def on_branch(factors) -> None:
            prior: list[Expr] = []
            for f in factors:
                fe = self._expr(f.as_expr())
                self._spawn(ci, sub, assumed + prior, fe, depth, queue)
                prior.append(fe)
            assumed.extend(prior)

        pivots = _eliminate(mrows, K, self.positive, self.negative, nonzero, on_branch)
        index = len(self.branches)
        rates = {k: v for k, v in sub.items() if k in self.rate_names}
        constraints = self._constraints(sub, assumed)
        report = BranchReport(index, ci, constraints, rates, [], "ok", "", dict(sub))
        self.branches.append(report)
        for vec in _kernel(pivots, cols):
            parts: dict[str, list[Expr]] = {}
            for c, v in vec.items():
                val = self._expr(v.as_expr()) if not isinstance(v, int) else Const(v)
                parts.setdefault(self.tmpl.slots()[c][0], []).append(Mul((val, self._term(c, sub))))
            get = lambda s: simplify(Add(parts[s])) if s in parts else ZERO  # noqa: E731
            cand = SymmetryCandidate(get("xi"), tuple((q, get(f"eta:{q}")) for q, _ in self.tmpl.eta),
                                     get("B"))
            if _is_trivial(cand, self.sys):
                continue
            verdict = Verdict.ZERO
            if self.verify:
                verdict = verify_candidate(self.sys, cand, ConstraintSet(constraints.relations),
                                           seed=self.seed).verdict
            report.operators.append(OperatorSolution(cand, tuple(sorted(rates.items())),
                                                     ConstraintSet(constraints.relations), verdict, index))

    def _spawn(self, ci, sub, nonzero_exprs, factor: Expr, depth: int, queue) -> None:
        text = f"{render(factor)} = 0"
        if depth + 1 > self.max_depth:
            self.errors.append(f"BranchLimitExceeded: {text} not explored (depth {self.max_depth})")
            self._report(ci, "limit", f"{text}: depth limit", sub)
            return
        try:
            choices, reason = _solve_factor(factor, self.rate_names, self.param_order)
        except UnsolvableRateCondition as exc:
            self.errors.append(f"UnsolvableRateCondition: {exc}")
            self._report(ci, "unsolvable", str(exc), sub)
            return
        if not choices:
            self._report(ci, "rejected", f"{text}: {reason}", sub)
            return
        for name, value in choices:
            if name in self.rate_names and substitute(value, self.base_sub) in self.fixed_rates:
                self._report(ci, "rejected", f"{name} = {render(value)} repeats a fixed template rate", sub)
                continue
            if self._sign_conflict(name, value):
                self._report(ci, "rejected", f"{name} = {render(value)} contradicts the declared sign", sub)
                continue
            try:
                new_sub = _compose(sub, name, value)
                clash = next((k for k, v in new_sub.items() if self._sign_conflict(k, v)), None)
                if clash is not None:
                    self._report(ci, "rejected", f"{name} = {render(value)} forces {clash} = "
                                 f"{render(new_sub[clash])}, contradicting its declared sign", sub)
                    continue
                nz = [substitute(e, {name: value}) for e in nonzero_exprs]
            except ArithmeticError as exc:
                self._report(ci, "rejected", f"{name} = {render(value)} is singular ({exc})", sub)
                continue
            bad = [render(e) for e, ee in zip(nonzero_exprs, nz) if ee == ZERO]
            if bad:
                self._report(ci, "rejected", f"{name} = {render(value)} contradicts {bad[0]} != 0",
                             _compose(sub, name, value))
                continue
            queue.append((new_sub, nz, depth + 1))


def _names(e: Expr) -> set[str]:
    return {s.name for s in e.symbols}


# ---------------------------------------------------------------------------
# grouping


def _numeric_rank(ops: list[OperatorSolution], sys: SystemModel, sampler: ParamSampler,
                  seed: int) -> list[int]:
    """Indices of a maximal linearly independent subset (greedy, in order)."""
    if not ops:
        return []
    rng = random.Random(seed)
    comps = [op.candidate.components(sys) for op in ops]
    pnames = sys.param_names
    vnames = sorted({s.name for cs in comps for c in cs for s in c.symbols} - set(pnames))
    fns = [compile_exprs(cs, pnames + vnames) for cs in comps]
    samples = []
    attempts = 0
    while len(samples) < 12 and attempts < 400:
        attempts += 1
        penv = sampler.draw()
        if penv is None:
            continue
        args = [penv[k] for k in pnames] + [rng.uniform(0.2, 1.5) for _ in vnames]
        try:
            vals = [np.array(fn(*args), dtype=float) for fn in fns]
        except (ArithmeticError, ValueError, OverflowError, TypeError):
            continue
        if all(np.all(np.isfinite(v)) for v in vals):
            samples.append(vals)
    if not samples:
        return []
    cols = []
    for i in range(len(ops)):
        col = np.concatenate([s[i] for s in samples])
        norm = np.linalg.norm(col)
        cols.append(col / norm if norm else col)
    keep: list[int] = []
    for i, col in enumerate(cols):
        if not np.any(col):
            continue
        trial = np.array([cols[j] for j in keep + [i]]).T
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] > 1e-9 * sv[0]:
            keep.append(i)
    return keep


def _compatible(branch: BranchReport, sys: SystemModel, sampler: ParamSampler) -> bool:
    """False when an assumed-nonzero factor of the branch vanishes on the group."""
    if not branch.constraints.nonzero:
        return True
    pn = sys.param_names
    rates = sorted({s.name for e in branch.constraints.nonzero for s in e.symbols} - set(pn))
    fn = compile_exprs(list(branch.constraints.nonzero), pn + rates)
    known = [r for r in rates if r in branch.rates]
    rate_fn = compile_exprs([branch.rates[r] for r in known], pn) if known else None
    seen = 0
    for _ in range(20):
        env = sampler.draw()
        if env is None:
            continue
        try:
            for r in rates:
                env[r] = sampler.rng.uniform(0.2, 1.5)
            if rate_fn is not None:
                env.update(zip(known, rate_fn(*(env[k] for k in pn))))
            vals = fn(*(env[k] for k in pn + rates))
        except (ArithmeticError, ValueError, OverflowError):
            continue
        if any(abs(v) < 1e-9 for v in vals):
            return False
        seen += 1
        if seen >= 3:
            return True
    return seen > 0


def _group(branches: list[BranchReport], sys: SystemModel, seed: int):
    oks = [b for b in branches if b.status == "ok"]
    keys: list[frozenset] = []
    for b in oks:
        k = frozenset(b.constraints.relations)
        if k not in keys:
            keys.append(k)
    groups = []
    for k in keys:
        try:
            sub = ConstraintSet(tuple(k)).substitution(sys.param_names)
        except ValueError:
            sub = {}
        sampler = ParamSampler(sys, sub, seed)
        members = [op for b in oks if frozenset(b.constraints.relations) <= k
                   and _compatible(b, sys, sampler) for op in b.operators]
        idx = _numeric_rank(members, sys, sampler, seed)
        first = min(b.index for b in oks if frozenset(b.constraints.relations) == k)
        rels = next(b.constraints.relations for b in oks if frozenset(b.constraints.relations) == k)
        groups.append((ConstraintSet(rels), [members[i] for i in idx], first))
    return groups


def _refines(a: ConstraintSet, b: ConstraintSet, sys: SystemModel) -> bool:
    """True when ``a`` implies ``b`` and not conversely."""
    def implies(x: ConstraintSet, y: ConstraintSet) -> bool:
        try:
            sub = x.substitution(sys.param_names)
            return all(substitute(r, sub) == ZERO for r in y.relations)
        except (ValueError, ArithmeticError):
            return False
    return implies(a, b) and not implies(b, a)


def _vanishing(cs: ConstraintSet) -> int:
    """How many relations merely switch a parameter off (k = 0)."""
    return sum(isinstance(r, Symbol) for r in cs.relations)


def solve_determining(det: DeterminingSystem, tmpl: AnsatzTemplate, max_depth: int = 6,
                      seed: int = 0, verify: bool = True) -> SolutionSet:
    """Solve ``det`` within the span of ``tmpl``.

    The principal result is the unconstrained span when it is nonempty,
    otherwise, among groups whose constraints are not a special case of
    another group's, the one with the most operators (ties: fewer
    constraints, then fewer parameters forced to zero, then earlier
    branch).  All other groups and every examined
    branch are reported alongside.
    """
    solver = _Solver(det, tmpl, max_depth, seed, verify)
    solver.run()
    groups = _group(solver.branches, det.model, seed)
    generic = [g for g in groups if not g[0].relations and g[1]]
    if generic:
        principal = generic[0]
    else:
        nonempty = [g for g in groups if g[1]]
        minimal = [g for g in nonempty
                   if not any(h is not g and _refines(g[0], h[0], det.model) for h in nonempty)]
        ranked = sorted(minimal, key=lambda g: (-len(g[1]), len(g[0].relations), _vanishing(g[0]), g[2]))
        principal = ranked[0] if ranked and ranked[0][1] else (ConstraintSet(), [], -1)
    rest = [(c, ops) for c, ops, i in groups if i != principal[2]]
    return SolutionSet(list(principal[1]), principal[0], solver.branches,
                       [(principal[0], list(principal[1]))] + rest, solver.errors, seed)


def solve_model(sys: SystemModel, tmpl: AnsatzTemplate | None = None, **kw) -> SolutionSet:
    return solve_determining(determining_system(sys), tmpl or default_template(sys), **kw)
