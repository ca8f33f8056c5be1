"""First integrals from operators, conservation checks, reduction and dependence."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .determine import ParamSampler, SymmetryCandidate, check_zero, constraint_substitution
from .expr import (
    ONE,
    ZERO,
    Add,
    Const,
    Expr,
    Mul,
    Pow,
    Symbol,
    Verdict,
    as_expr,
    compile_exprs,
    differentiate,
    is_zero,
    normal_form,
    render,
    replace,
    simplify,
    substitute,
)
from .expr.nodes import COEF, PARAM, VAR
from .expr.normal import from_nf
from .hamsys import ConstraintSet, SystemModel
from .solve import OperatorSolution, linear_identities


class ConservationFailed(ValueError):
    def __init__(self, message: str, residual: Expr, verdict: Verdict):
        super().__init__(message)
        self.residual = residual
        self.verdict = verdict


class NotAffineInTarget(ValueError):
    pass


@dataclass(frozen=True)
class FirstIntegral:
    """A conserved quantity; construction has already checked conservation."""

    I: Expr
    validity: ConstraintSet = field(default_factory=ConstraintSet)
    verdict: Verdict = Verdict.ZERO
    source: OperatorSolution | SymmetryCandidate | None = field(default=None, compare=False)
    label: str = ""
    form: Expr | None = field(default=None, compare=False)  # unexpanded, for evaluation

    @property
    def evaluation_form(self) -> Expr:
        return self.form if self.form is not None else self.I

    def to_json(self) -> dict:
        d = {
            "label": self.label,
            "I": render(self.I),
            "validity": self.validity.describe(),
            "conservation": self.verdict.value,
        }
        if self.source is not None:
            d["operator"] = self.source.to_json() if isinstance(self.source, SymmetryCandidate) \
                else self.source.candidate.to_json()
        return d


def integral_of(sys: SystemModel, cand: SymmetryCandidate) -> Expr:
    """I = sum p_i eta^i - xi H - B, with control-defined momenta eliminated."""
    sym = sys.symbols
    parts = [Mul((sym[p], cand.eta_of(q))) for q, p in sys.pairs]
    parts += [-Mul((cand.xi, sys.H)), -cand.B]
    return sys.eliminate_controls(Add(parts))


def check_conservation(sys: SystemModel, I: Expr, constraints: ConstraintSet | None = None,
                       seed: int = 0) -> tuple[Verdict, Expr]:
    """Verdict on D_t(I) = 0 along the flow, constraints imposed."""
    residual, verdict, _ = check_zero(sys, sys.total_derivative(as_expr(I)),
                                      constraints or ConstraintSet(), seed)
    return verdict, residual


def make_integral(sys: SystemModel, I: Expr, validity: ConstraintSet | None = None, label: str = "",
                  source=None, seed: int = 0) -> FirstIntegral:
    validity = validity or ConstraintSet()
    form = replace(as_expr(I), {c.momentum: c.relation for c in sys.controls})
    I = simplify(form)
    verdict, residual = check_conservation(sys, I, validity, seed)
    if verdict is not Verdict.ZERO:
        raise ConservationFailed(f"D_t({render(I)}) is not zero: {render(residual)}", residual, verdict)
    return FirstIntegral(I, validity, verdict, source, label, form)


def assemble_first_integral(sys: SystemModel, op: OperatorSolution | SymmetryCandidate,
                            constraints: ConstraintSet | None = None, label: str = "",
                            seed: int = 0) -> FirstIntegral:
    if isinstance(op, OperatorSolution):
        cand, validity = op.candidate, constraints or op.constraints
    else:
        cand, validity = op, constraints or ConstraintSet()
    return make_integral(sys, integral_of(sys, cand), validity, label, op, seed)


def integrals_from_solution(sys: SystemModel, ops: Sequence[OperatorSolution],
                            seed: int = 0) -> list[FirstIntegral]:
    return [assemble_first_integral(sys, op, label=f"I{i + 1}", seed=seed) for i, op in enumerate(ops)]


# ---------------------------------------------------------------------------
# reduction


def reduce_with_integral(sys: SystemModel, I: FirstIntegral | Expr, level: str, target: str) -> Expr:
    """Solve ``I = level`` for ``target``.

    ``I`` must have the form A*target^k + C with A, C free of ``target``
    (k = 1 is the affine case).  A momentum defined through a control is
    eliminated first when the target is that control.
    """
    e = I.I if isinstance(I, FirstIntegral) else as_expr(I)
    if target in {c.var for c in sys.controls}:
        e = sys.eliminate_controls(e)
    tsym = sys.symbols.get(target) or Symbol(target, VAR)
    by_power: dict[Expr, dict] = {}
    for mono, k in normal_form(e).items():
        power: Expr = ZERO
        rest = []
        for b, x in mono:
            if isinstance(b, Symbol) and b.name == target:
                power = x
            elif target in {s.name for s in b.symbols} or target in {s.name for s in x.symbols}:
                raise NotAffineInTarget(f"{target} occurs inside {render(Pow(b, x))}")
            else:
                rest.append((b, x))
        bucket = by_power.setdefault(power, {})
        key = tuple(rest)
        bucket[key] = bucket.get(key, Fraction(0)) + k
    powers = [p for p in by_power if p != ZERO]
    if len(powers) != 1:
        raise NotAffineInTarget(f"integral is not of the form A*{target}^k + C")
    k = powers[0]
    A = simplify(from_nf(by_power[k]))
    C = simplify(from_nf(by_power.get(ZERO, {})))
    L = Symbol(level, PARAM)
    value = simplify((L - C) / A)
    if k != ONE:
        value = simplify(Pow(value, simplify(ONE / k)))
    check = simplify(substitute(e, {target: value}) - L)
    if check != ZERO and is_zero(check, sys.signs) is not Verdict.ZERO:
        if is_zero(check, {**sys.signs, level: 1}) is Verdict.NONZERO:
            raise NotAffineInTarget(f"solving for {target} does not reproduce the level")
    return value


# ---------------------------------------------------------------------------
# functional dependence


@dataclass
class DependenceReport:
    rank: int
    count: int
    relations: list[tuple[Expr, Verdict]]
    singular_values: list[float]
    seed: int
    note: str = ""

    def to_json(self) -> dict:
        return {
            "rank": self.rank,
            "count": self.count,
            "relations": [{"relation": f"{render(r)} = 0", "verdict": v.value} for r, v in self.relations],
            "singular_values": self.singular_values,
            "seed": self.seed,
            "note": self.note,
        }


def _labels(integrals: Sequence[FirstIntegral]) -> list[str]:
    labels = [fi.label or f"I{i + 1}" for i, fi in enumerate(integrals)]
    if len(set(labels)) != len(labels):
        labels = [f"I{i + 1}" for i in range(len(integrals))]
    return labels


def dependence_rank(sys: SystemModel, integrals: Sequence[FirstIntegral | Expr], npoints: int = 20,
                    seed: int = 0, constraints: ConstraintSet | None = None) -> DependenceReport:
    """Numeric Jacobian rank plus exact quadratic relations among integrals.

    The Jacobian is taken with respect to the phase variables at random
    positive states and times.  When it is rank deficient, a least-squares
    fit over quadratic monomials in the integral values detects relations;
    their coefficients are then solved exactly over the parameters and each
    relation is confirmed with is_zero.
    """
    if not integrals:
        raise ValueError("need at least one integral")
    fis = [fi if isinstance(fi, FirstIntegral) else FirstIntegral(sys.eliminate_controls(as_expr(fi)))
           for fi in integrals]
    validity = constraints or ConstraintSet()
    for fi in fis:
        validity = validity.union(ConstraintSet(fi.validity.relations))
    sub, _ = constraint_substitution(sys, validity)
    exprs = [substitute(fi.I, sub) if sub else fi.I for fi in fis]
    variables = sys.phase_vars
    sym = sys.symbols
    grads = [differentiate(e, sym[v]) for e in exprs for v in variables]
    names = [sys.time, *variables, *sys.param_names]
    grad_fn = compile_exprs(grads, names)
    val_fn = compile_exprs(exprs, names)
    sampler = ParamSampler(sys, sub, seed)
    rng = random.Random(seed)
    k, n = len(exprs), len(variables)
    penv = None
    for _ in range(100):
        penv = sampler.draw()
        if penv is not None:
            break
    if penv is None:
        raise ValueError("could not sample parameters satisfying the constraints")
    params = [penv[p] for p in sys.param_names]
    rank = 0
    best_sv: list[float] = []
    values = []
    attempts = 0
    while len(values) < max(npoints, 3 * (k + 1) * (k + 2) // 2) and attempts < 2000:
        attempts += 1
        point = [rng.uniform(0.1, 2.0) for _ in range(n + 1)]
        try:
            g = np.array(grad_fn(*point, *params), dtype=float).reshape(k, n)
            vals = np.array(val_fn(*point, *params), dtype=float)
        except (ArithmeticError, ValueError, OverflowError):
            continue
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(vals))):
            continue
        values.append(vals)
        if len(values) > npoints:
            continue
        sv = np.linalg.svd(g, compute_uv=False)
        r = int(np.sum(sv > 1e-8 * sv[0])) if sv.size and sv[0] > 0 else 0
        if r >= rank:
            rank, best_sv = r, [float(x) for x in sv]
    report = DependenceReport(rank, k, [], best_sv, seed)
    if rank >= k:
        return report
    labels = _labels(fis)
    feats = [(i,) for i in range(k)] + [(i, j) for i in range(k) for j in range(i, k)] + [()]
    V = np.array(values)
    M = np.array([[np.prod([row[i] for i in f]) if f else 1.0 for f in feats] for row in V])
    scale = np.linalg.norm(M, axis=0)
    scale[scale == 0] = 1.0
    sv = np.linalg.svd(M / scale, compute_uv=False)
    numeric_null = int(np.sum(sv < 1e-8 * sv[0]))
    if numeric_null == 0:
        report.note = "rank deficient; no relation of degree <= 2"
        return report
    coefs = [Symbol(f"k{i}", COEF) for i in range(len(feats))]
    feat_exprs = [simplify(Mul([exprs[i] for i in f])) if f else ONE for f in feats]
    F = simplify(Add([Mul((c, fe)) for c, fe in zip(coefs, feat_exprs)]))
    kernel = linear_identities(F, coefs, [sys.time, *variables], sys.time, sys.signs)
    Isyms = [Symbol(lbl, VAR) for lbl in labels]
    for vec in kernel:
        lead = min(vec, key=lambda c: c)
        norm = vec[lead]
        rel = simplify(Add([Mul((simplify(v / norm),
                                 Mul([Isyms[i] for i in feats[c]]) if feats[c] else ONE))
                            for c, v in vec.items()]))
        check = simplify(Add([Mul((simplify(v / norm), feat_exprs[c])) for c, v in vec.items()]))
        _, verdict, _ = check_zero(sys, check, ConstraintSet(), seed)
        report.relations.append((rel, verdict))
    if len(kernel) != numeric_null:
        report.note = f"numeric fit suggests {numeric_null} relation(s); exact solve found {len(kernel)}"
    return report
