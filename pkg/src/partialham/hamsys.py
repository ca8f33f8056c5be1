"""Partial Hamiltonian systems.

A system is given by canonical pairs ``(q, p)``, a Hamiltonian ``H`` and
per-momentum non-potential terms ``Gamma``::

    dq/dt = dH/dp,    dp/dt = -dH/dq + Gamma

Optional controls ``u`` come with a defining relation ``p = f(t, q, u)``;
the momentum is then eliminated in favour of the control and the control's
rate follows from differentiating the relation along the flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

import sympy

from .expr import (
    ONE,
    ZERO,
    Add,
    Const,
    Expr,
    FuncApp,
    Mul,
    Parameter,
    Symbol,
    Variable,
    as_expr,
    differentiate,
    render,
    simplify,
    substitute,
    terms_of,
)
from .expr.bridge import from_sympy, to_sympy
from .expr.normal import coefficient_and_rest
from .expr.nodes import VAR


class ModelError(ValueError):
    """A model violates a structural invariant."""


class ControlRateUnsolvable(ModelError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    sign: int | None = None
    value: Fraction | None = None


@dataclass(frozen=True)
class Control:
    """Control ``var`` with defining relation ``momentum = relation``."""

    var: str
    momentum: str
    relation: Expr


def normalize_relation(e: Expr) -> Expr:
    """Scale a relation ``e = 0`` to integer content 1 with a positive last term."""
    e = simplify(e)
    ts = terms_of(e)
    if not ts:
        return e
    coefs = [coefficient_and_rest(t)[0] for t in ts]
    lcm = math.lcm(*(c.denominator for c in coefs))
    gcd = math.gcd(*(int(c * lcm) for c in coefs))
    k = Fraction(lcm, gcd)
    if coefs[-1] < 0:
        k = -k
    return simplify(Const(k) * e)


def _prefer_order(names: Iterable[str], order: Iterable[str] | None) -> list[str]:
    names = list(names)
    order = list(order or [])
    rank = {n: i for i, n in enumerate(order)}
    return sorted(names, key=lambda n: (rank.get(n, len(order)), n))


def solve_linear_for(rel: Expr, order: Iterable[str] | None = None) -> tuple[Symbol, Expr] | None:
    """Solve ``rel = 0`` for a parameter it is linear in (last in ``order`` wins)."""
    syms = {s.name: s for s in rel.symbols}
    table: dict = {}
    srel = sympy.together(to_sympy(rel, table))
    num = sympy.numer(srel)
    for name in reversed(_prefer_order(syms, order)):
        x = sympy.Symbol(name)
        poly = sympy.Poly(num, x)
        if poly.degree() != 1:
            continue
        a1, a0 = poly.all_coeffs()
        if a1.is_zero:
            continue
        sol = sympy.cancel(-a0 / a1)
        return syms[name], simplify(from_sympy(sol, table))
    return None


@dataclass(frozen=True)
class ConstraintSet:
    """Relations among parameters (each ``= 0``) and strict conditions.

    ``nonzero`` holds expressions assumed different from zero, ``signs``
    pairs an expression with a required sign (+1 or -1).
    """

    relations: tuple[Expr, ...] = ()
    nonzero: tuple[Expr, ...] = ()
    signs: tuple[tuple[Expr, int], ...] = ()

    def __post_init__(self):
        rels: list[Expr] = []
        for r in self.relations:
            r = normalize_relation(as_expr(r))
            if r == ZERO:
                continue
            if isinstance(r, Const):
                raise ModelError("inconsistent constraint: nonzero constant relation")
            if any(x.kind == VAR for x in r.symbols):
                raise ModelError(f"constraint {render(r)} = 0 involves variables")
            if r not in rels:
                rels.append(r)
        object.__setattr__(self, "relations", tuple(rels))
        nz: list[Expr] = []
        for e in self.nonzero:
            e = normalize_relation(as_expr(e))
            if not isinstance(e, Const) and e not in nz:
                nz.append(e)
        object.__setattr__(self, "nonzero", tuple(nz))
        object.__setattr__(self, "signs", tuple((simplify(as_expr(e)), int(s)) for e, s in self.signs))

    @property
    def is_empty(self) -> bool:
        return not (self.relations or self.nonzero or self.signs)

    def with_relation(self, rel: Expr) -> "ConstraintSet":
        return replace(self, relations=self.relations + (rel,))

    def with_nonzero(self, e: Expr) -> "ConstraintSet":
        return replace(self, nonzero=self.nonzero + (e,))

    def union(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(self.relations + other.relations, self.nonzero + other.nonzero,
                             self.signs + other.signs)

    def substitution(self, order: Iterable[str] | None = None) -> dict[str, Expr]:
        """Solve the relations one by one for a parameter each (linear only).

        Raises ModelError when a relation is not linear in any parameter.
        """
        sub: dict[str, Expr] = {}
        for rel in self.relations:
            r = substitute(rel, sub) if sub else rel
            if r == ZERO:
                continue
            solved = solve_linear_for(r, order)
            if solved is None:
                raise ModelError(f"constraint {render(rel)} = 0 is not linear in any parameter")
            sym, value = solved
            sub = {k: substitute(v, {sym.name: value}) for k, v in sub.items()}
            sub[sym.name] = value
        return sub

    def apply(self, e: Expr, order: Iterable[str] | None = None) -> Expr:
        sub = self.substitution(order)
        return substitute(e, sub) if sub else simplify(e)

    def satisfied_by(self, values: Mapping[str, float], tol: float = 1e-9) -> bool:
        from .expr import eval_numeric

        for r in self.relations:
            if abs(eval_numeric(r, values)) > tol:
                return False
        for e in self.nonzero:
            if abs(eval_numeric(e, values)) <= tol:
                return False
        for e, s in self.signs:
            if eval_numeric(e, values) * s <= 0:
                return False
        return True

    def describe(self) -> list[str]:
        out = [f"{render(r)} = 0" for r in self.relations]
        out += [f"{render(e)} != 0" for e in self.nonzero]
        out += [f"{render(e)} {'>' if s > 0 else '<'} 0" for e, s in self.signs]
        return out

    def to_json(self) -> dict:
        return {
            "relations": [render(r) for r in self.relations],
            "nonzero": [render(e) for e in self.nonzero],
            "signs": [{"expr": render(e), "sign": s} for e, s in self.signs],
        }

    def __str__(self) -> str:
        return "; ".join(self.describe()) or "(none)"


@dataclass(frozen=True)
class SystemModel:
    name: str
    params: tuple[ParamSpec, ...]
    pairs: tuple[tuple[str, str], ...]
    H: Expr
    gamma: tuple[tuple[str, Expr], ...] = ()
    controls: tuple[Control, ...] = ()
    separation_vars: tuple[str, ...] = ()
    assumptions: ConstraintSet = field(default_factory=ConstraintSet)
    time: str = "t"

    def __post_init__(self):
        if not self.pairs:
            raise ModelError(f"model {self.name!r} declares no canonical pairs")
        names = [n for pair in self.pairs for n in pair] + [c.var for c in self.controls]
        pnames = [p.name for p in self.params]
        everything = names + pnames + [self.time]
        dup = {n for n in everything if everything.count(n) > 1}
        if dup:
            raise ModelError(f"duplicate names: {', '.join(sorted(dup))}")
        known = set(everything)
        momenta = {p for _, p in self.pairs}
        for label, e in [("H", self.H), *((f"Gamma[{p}]", g) for p, g in self.gamma)]:
            extra = {s.name for s in e.symbols} - known
            if extra:
                raise ModelError(f"undeclared symbol(s) in {label}: {', '.join(sorted(extra))}")
        for p, _ in self.gamma:
            if p not in momenta:
                raise ModelError(f"Gamma given for {p!r}, which is not a momentum")
        seen = set()
        for c in self.controls:
            if c.momentum not in momenta:
                raise ModelError(f"control {c.var!r} relation must define a momentum, got {c.momentum!r}")
            if c.momentum in seen:
                raise ModelError(f"momentum {c.momentum!r} has two defining relations")
            seen.add(c.momentum)
            extra = {s.name for s in c.relation.symbols} - known
            if extra:
                raise ModelError(f"undeclared symbol(s) in control relation: {', '.join(sorted(extra))}")
            if c.var not in {s.name for s in c.relation.symbols}:
                raise ModelError(f"relation for {c.momentum!r} does not involve control {c.var!r}")
            if momenta & {s.name for s in c.relation.symbols}:
                raise ModelError("a control relation may not involve momenta")
        if not self.separation_vars:
            default = tuple(c.var for c in self.controls) + tuple(
                p for _, p in self.pairs if p not in seen)
            object.__setattr__(self, "separation_vars", default)
        allowed = momenta | {c.var for c in self.controls}
        bad = set(self.separation_vars) - allowed
        if bad:
            raise ModelError(f"separation variables must be momenta or controls: {', '.join(sorted(bad))}")
        for r in self.assumptions.relations:
            if {s.name for s in r.symbols} - set(pnames):
                raise ModelError("assumptions may only involve parameters")

    # symbols -----------------------------------------------------------
    @cached_property
    def symbols(self) -> dict[str, Symbol]:
        table: dict[str, Symbol] = {self.time: Variable(self.time)}
        for q, p in self.pairs:
            table[q] = Variable(q)
            table[p] = Variable(p)
        for c in self.controls:
            table[c.var] = Variable(c.var)
        for spec in self.params:
            table[spec.name] = Parameter(spec.name, spec.sign)
        return table

    @property
    def t(self) -> Symbol:
        return self.symbols[self.time]

    @property
    def states(self) -> list[str]:
        return [q for q, _ in self.pairs]

    @property
    def momenta(self) -> list[str]:
        return [p for _, p in self.pairs]

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def signs(self) -> dict[str, int]:
        return {p.name: p.sign for p in self.params if p.sign}

    @property
    def param_values(self) -> dict[str, float]:
        return {p.name: float(p.value) for p in self.params if p.value is not None}

    def gamma_of(self, momentum: str) -> Expr:
        return dict(self.gamma).get(momentum, ZERO)

    @property
    def control_for(self) -> dict[str, Control]:
        return {c.momentum: c for c in self.controls}

    @property
    def phase_vars(self) -> list[str]:
        """States, then for each pair the control replacing it or the momentum."""
        ctl = self.control_for
        return self.states + [ctl[p].var if p in ctl else p for p in self.momenta]

    @property
    def coefficient_vars(self) -> list[str]:
        """Variables symmetry coefficients may depend on."""
        return [self.time] + self.states

    def eliminate_controls(self, e: Expr) -> Expr:
        """Replace momenta defined by control relations."""
        sub = {c.momentum: c.relation for c in self.controls}
        return substitute(e, sub) if sub else simplify(e)

    # dynamics ----------------------------------------------------------
    @cached_property
    def _eom(self) -> tuple[tuple[str, Expr], ...]:
        sym = self.symbols
        rhs: dict[str, Expr] = {}
        for q, p in self.pairs:
            rhs[q] = differentiate(self.H, sym[p])
            rhs[p] = simplify(Add((-differentiate(self.H, sym[q]), self.gamma_of(p))))
        if not self.controls:
            return tuple((v, rhs[v]) for v in self.phase_vars)
        reduced = {v: self.eliminate_controls(r) for v, r in rhs.items()}
        out = [(q, reduced[q]) for q in self.states]
        ctl = self.control_for
        for p in self.momenta:
            if p not in ctl:
                out.append((p, reduced[p]))
        rates = dict(out)
        for p in self.momenta:
            if p not in ctl:
                continue
            c = ctl[p]
            f = c.relation
            dfdu = differentiate(f, sym[c.var])
            if dfdu == ZERO:
                raise ControlRateUnsolvable(f"relation for {p} does not depend on {c.var}")
            known = differentiate(f, self.t)
            for v, r in rates.items():
                known = Add((known, Mul((differentiate(f, sym[v]), r))))
            out.append((c.var, simplify((reduced[p] - known) / dfdu)))
        order = self.phase_vars
        d = dict(out)
        return tuple((v, d[v]) for v in order)

    def equations_of_motion(self) -> list[tuple[str, Expr]]:
        return list(self._eom)

    def momentum_rates(self) -> dict[str, Expr]:
        """dp/dt for every momentum, controls eliminated."""
        sym = self.symbols
        return {p: self.eliminate_controls(Add((-differentiate(self.H, sym[q]), self.gamma_of(p))))
                for q, p in self.pairs}

    def total_derivative(self, e: Expr) -> Expr:
        """On-shell total time derivative of ``e``."""
        e = self.eliminate_controls(as_expr(e))
        sym = self.symbols
        parts: list[Expr] = [differentiate(e, self.t)]
        for v, r in self._eom:
            dv = differentiate(e, sym[v])
            if dv != ZERO:
                parts.append(Mul((dv, r)))
        return simplify(Add(parts))

    # rendering ---------------------------------------------------------
    def to_dsl(self) -> str:
        lines = [f"model {self.name}"]
        for p in self.params:
            s = f"param {p.name}"
            if p.sign:
                s += " > 0" if p.sign > 0 else " < 0"
            if p.value is not None:
                s += f" = {_number(p.value)}"
            lines.append(s)
        for q, p in self.pairs:
            lines.append(f"pair ({q}, {p})")
        for c in self.controls:
            lines.append(f"control {c.var} with {c.momentum} = {render(c.relation)}")
        lines.append(f"H = {render(self.H)}")
        for p, g in self.gamma:
            lines.append(f"Gamma[{p}] = {render(g)}")
        lines.append("separate_by " + ", ".join(self.separation_vars))
        for r in self.assumptions.relations:
            lines.append(f"assume {render(r)} = 0")
        return "\n".join(lines) + "\n"


def _number(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def equations_of_motion(sys: SystemModel) -> list[tuple[str, Expr]]:
    return sys.equations_of_motion()


def total_derivative_on_shell(sys: SystemModel, e: Expr) -> Expr:
    return sys.total_derivative(e)
