"""Determining equation of partial Hamiltonian operators.

For an operator with coefficients ``xi(t, q)``, ``eta^i(t, q)`` and gauge
term ``B(t, q)`` the determining expression is

    sum_i p_i D(eta^i) - xi H_t - sum_i eta^i H_{q_i} - H D(xi) - D(B)
        + sum_i (eta^i - xi H_{p_i}) Gamma^i

with ``D`` the on-shell total derivative.  The momentum-direction
components of the operator cancel, so candidates carry none.  Controls are
eliminated through their defining relations before separation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import random

from .expr import (
    compile_exprs,
    ZERO,
    Add,
    Expr,
    FuncApp,
    MonomialKey,
    Mul,
    Verdict,
    collect_by,
    differentiate,
    is_zero,
    render,
    simplify,
    substitute,
)
from .expr.bridge import from_sympy, to_sympy
from .hamsys import ConstraintSet, ModelError, SystemModel


@dataclass(frozen=True)
class SymmetryCandidate:
    xi: Expr
    eta: tuple[tuple[str, Expr], ...]
    B: Expr = ZERO

    @classmethod
    def of(cls, xi, eta: Mapping[str, Expr] | None = None, B=ZERO) -> "SymmetryCandidate":
        return cls(simplify(xi), tuple((k, simplify(v)) for k, v in (eta or {}).items()), simplify(B))

    @classmethod
    def generic(cls, sys: SystemModel) -> "SymmetryCandidate":
        """Undetermined coefficient functions of (t, states)."""
        args = tuple(sys.symbols[v] for v in sys.coefficient_vars)
        eta_name = (lambda q: "eta") if len(sys.states) == 1 else (lambda q: f"eta_{q}")
        return cls(FuncApp("xi", args),
                   tuple((q, FuncApp(eta_name(q), args)) for q in sys.states),
                   FuncApp("B", args))

    def eta_of(self, q: str) -> Expr:
        return dict(self.eta).get(q, ZERO)

    def components(self, sys: SystemModel) -> list[Expr]:
        return [self.xi, *(self.eta_of(q) for q in sys.states), self.B]

    def to_json(self) -> dict:
        return {"xi": render(self.xi), "eta": {q: render(e) for q, e in self.eta}, "B": render(self.B)}


@dataclass(frozen=True)
class DeterminingSystem:
    entries: tuple[tuple[MonomialKey, Expr], ...]
    unknowns: tuple[str, ...]
    model: SystemModel = field(repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def residual(self, key: str) -> Expr:
        for k, r in self.entries:
            if str(k) == key:
                return r
        raise KeyError(key)

    def to_json(self) -> list[dict]:
        return [{"monomial": str(k), "residual": render(r)} for k, r in self.entries]


def determining_expression(sys: SystemModel, cand: SymmetryCandidate) -> Expr:
    sym = sys.symbols
    t = sys.t
    H = sys.H
    D = sys.total_derivative
    parts: list[Expr] = []
    for q, p in sys.pairs:
        eta = cand.eta_of(q)
        parts.append(Mul((sym[p], D(eta))))
        parts.append(-Mul((eta, differentiate(H, sym[q]))))
        gamma = sys.gamma_of(p)
        if gamma != ZERO:
            parts.append(Mul((Add((eta, -Mul((cand.xi, differentiate(H, sym[p]))))), gamma)))
    parts.append(-Mul((cand.xi, differentiate(H, t))))
    parts.append(-Mul((H, D(cand.xi))))
    parts.append(-D(cand.B))
    return sys.eliminate_controls(Add(parts))


def separate(sys: SystemModel, det: Expr) -> DeterminingSystem:
    groups = collect_by(det, sys.separation_vars)
    names = sorted({f.name for r in groups.values() for f in r.walk() if isinstance(f, FuncApp)})
    return DeterminingSystem(tuple(groups.items()), tuple(names), sys)


def determining_system(sys: SystemModel, cand: SymmetryCandidate | None = None) -> DeterminingSystem:
    return separate(sys, determining_expression(sys, cand or SymmetryCandidate.generic(sys)))


@dataclass(frozen=True)
class VerifyReport:
    passed: bool
    verdict: Verdict
    residuals: tuple[tuple[str, Expr, Verdict], ...]
    constraints: ConstraintSet
    note: str = ""

    def to_json(self) -> dict:
        return {
            "pass": self.passed,
            "verdict": self.verdict.value,
            "constraints": self.constraints.describe(),
            "residuals": [{"monomial": k, "residual": render(r), "verdict": v.value}
                          for k, r, v in self.residuals],
            "note": self.note,
        }


def constraint_substitution(sys: SystemModel, constraints: ConstraintSet) -> tuple[dict[str, Expr], str]:
    """Solve constraints for parameters; nonlinear ones fall back to a root branch."""
    try:
        return constraints.substitution(sys.param_names), ""
    except ModelError:
        pass
    import sympy

    sub: dict[str, Expr] = {}
    for rel in constraints.relations:
        r = substitute(rel, sub) if sub else rel
        if r == ZERO:
            continue
        table: dict = {}
        sr = to_sympy(r, table)
        for name in reversed(sys.param_names):
            if name not in table:
                continue
            roots = [x for x in sympy.solve(sr, sympy.Symbol(name)) if x.is_real is not False]
            if roots:
                value = simplify(from_sympy(roots[0], table))
                sub = {k: substitute(v, {name: value}) for k, v in sub.items()}
                sub[name] = value
                break
        else:
            raise ModelError(f"cannot solve constraint {render(rel)} = 0")
    return sub, "nonlinear constraint solved on one root branch"


def check_zero(sys: SystemModel, e: Expr, constraints: ConstraintSet, seed: int = 0) -> tuple[Expr, Verdict, str]:
    sub, note = constraint_substitution(sys, constraints)
    r = substitute(e, sub) if sub else simplify(e)
    return r, is_zero(r, sys.signs, seed=seed), note


def verify_candidate(sys: SystemModel, cand: SymmetryCandidate,
                     constraints: ConstraintSet | None = None, seed: int = 0) -> VerifyReport:
    constraints = constraints or ConstraintSet()
    det = determining_expression(sys, cand)
    r, verdict, note = check_zero(sys, det, constraints, seed)
    rows: list[tuple[str, Expr, Verdict]] = []
    if verdict is not Verdict.ZERO:
        try:
            for k, res in collect_by(r, sys.separation_vars).items():
                rows.append((str(k), res, is_zero(res, sys.signs, seed=seed)))
        except ValueError:
            rows.append(("*", r, verdict))
    return VerifyReport(verdict is Verdict.ZERO, verdict, tuple(rows), constraints, note)


class ParamSampler:
    """Random parameter points on the solution set of a substitution.

    Free parameters are drawn at random (respecting declared signs); the
    substituted ones are evaluated from them, avoiding symbolic work.
    """

    def __init__(self, sys: SystemModel, sub: Mapping[str, Expr], seed: int):
        self.sys = sys
        self.rng = random.Random(seed)
        self.bound = [k for k in sys.param_names if k in sub]
        self.free = [k for k in sys.param_names if k not in sub]
        self.fn = compile_exprs([sub[k] for k in self.bound], self.free) if self.bound else None

    def draw(self) -> dict[str, float] | None:
        env = {}
        for k in self.free:
            v = self.rng.uniform(0.2, 1.5)
            env[k] = -v if self.sys.signs.get(k) == -1 else v
        if self.fn is not None:
            try:
                vals = self.fn(*(env[k] for k in self.free))
            except (ArithmeticError, ValueError, OverflowError):
                return None
            for k, v in zip(self.bound, vals):
                sign = self.sys.signs.get(k)
                if sign and v * sign <= 0:
                    return None
                env[k] = v
        return env

    @classmethod
    def for_constraints(cls, sys: SystemModel, constraints: ConstraintSet | None,
                        seed: int = 0) -> "ParamSampler":
        sub, _ = constraint_substitution(sys, constraints or ConstraintSet())
        return cls(sys, sub, seed)
