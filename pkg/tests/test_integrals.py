import pytest

from partialham.casebook import CASES, _candidate, _table, expected_integrals
from partialham.determine import SymmetryCandidate
from partialham.dsl import load_model
from partialham.expr import ZERO, Symbol, Verdict, parse_expr, render, simplify, substitute
from partialham.expr.nodes import PARAM, VAR
from partialham.hamsys import ConstraintSet
from partialham.integrals import (
    ConservationFailed,
    NotAffineInTarget,
    assemble_first_integral,
    check_conservation,
    dependence_rank,
    make_integral,
    reduce_with_integral,
)


def P(sys, text, extra=()):
    return parse_expr(text, _table(sys, tuple(extra)))


def test_growth_third_operator_gives_costate_integral():
    sys = load_model("growth_env")
    cand = _candidate(sys, CASES["growth_env"].operators[2], _table(sys))
    fi = assemble_first_integral(sys, cand)
    want = sys.eliminate_controls(P(sys, "p*s^(-phi)*exp((m*phi+m-rho)*t)"))
    assert simplify(fi.I - want) == ZERO
    assert fi.verdict is Verdict.ZERO


def test_time_translation_gives_minus_hamiltonian():
    sys = load_model("harmonic")
    fi = assemble_first_integral(sys, SymmetryCandidate.of(1))
    assert simplify(fi.I + sys.H) == ZERO


def test_mechanical_second_integral():
    sys = load_model("mechanical")
    cand = _candidate(sys, CASES["mechanical"].operators[1], _table(sys))
    fi = assemble_first_integral(sys, cand)
    assert simplify(fi.I + P(sys, "q1 - t*q2 - t*p1 - p2")) == ZERO


def test_check_conservation_examples():
    sys = load_model("duffing_vdp")
    I2 = P(sys, CASES["duffing_vdp"].integrals[1][1])
    cs = ConstraintSet((P(sys, "beta^2*gamma + 3*alpha*beta - 9"),))
    assert check_conservation(sys, I2, cs)[0] is Verdict.ZERO
    assert check_conservation(sys, I2)[0] is Verdict.NONZERO
    assert check_conservation(sys, P(sys, "7"))[0] is Verdict.ZERO


def test_lotka_volterra_residual_vanishes_on_constraint():
    sys = load_model("lotka_volterra")
    I2 = P(sys, "-exp(-a*t)*(b*p + n*q)/(a*b)")
    verdict, residual = check_conservation(sys, I2)
    assert verdict is Verdict.NONZERO
    assert substitute(residual, {"m": -sys.symbols["a"]}) == ZERO
    assert check_conservation(sys, I2, ConstraintSet((P(sys, "a + m"),)))[0] is Verdict.ZERO


def test_conservation_failure_refuses_construction():
    sys = load_model("harmonic")
    with pytest.raises(ConservationFailed) as err:
        make_integral(sys, sys.symbols["q"])
    assert err.value.residual != ZERO


def test_reduce_duffing_for_momentum():
    sys = load_model("duffing_vdp")
    I2 = expected_integrals("duffing_vdp")["I2"]
    got = reduce_with_integral(sys, I2, "a1", "p")
    assert simplify(got - P(sys, "(alpha*beta-3)*q/beta + beta*q^3/3 + a1*exp(-3*t/beta)", ["a1"])) == ZERO


def test_reduce_growth_for_consumption():
    sys = load_model("growth_env")
    I3 = expected_integrals("growth_env")["I3"]
    got = reduce_with_integral(sys, I3, "a", "c")
    assert simplify(got - P(sys, "a^(-1/sigma)*s^(-phi)*exp((m*phi+m-rho)*t/sigma)", ["a"])) == ZERO


def test_reduce_trivial_and_round_trip():
    sys = load_model("harmonic")
    got = reduce_with_integral(sys, sys.symbols["p"], "c", "p")
    assert got == Symbol("c", PARAM)
    I = P(sys, "3*p*exp(t) + q^2")
    value = reduce_with_integral(sys, I, "L", "p")
    assert simplify(substitute(I, {"p": value}) - Symbol("L", PARAM)) == ZERO


def test_reduce_rejects_non_affine_target():
    sys = load_model("harmonic")
    with pytest.raises(NotAffineInTarget):
        reduce_with_integral(sys, P(sys, "sin(p) + q"), "c", "p")
    with pytest.raises(NotAffineInTarget):
        reduce_with_integral(sys, P(sys, "p + p^2"), "c", "p")


def test_duffing_dependence():
    sys = load_model("duffing_vdp")
    ints = expected_integrals("duffing_vdp")
    rep = dependence_rank(sys, [ints["I1"], ints["I2"]])
    assert rep.rank == 1
    (rel, verdict), = rep.relations
    assert verdict is Verdict.ZERO
    assert render(rel) == "I1 - I2^2/2"


def test_single_integral_rank_one():
    sys = load_model("harmonic")
    assert dependence_rank(sys, [simplify(-sys.H)]).rank == 1


def test_mechanical_dependence():
    sys = load_model("mechanical")
    ints = expected_integrals("mechanical")
    full = dependence_rank(sys, [ints[k] for k in ("I2", "I3", "I4", "I5")])
    assert full.rank == 4 and not full.relations
    rep = dependence_rank(sys, [ints[k] for k in ("I1", "I3", "I4", "I5")])
    assert rep.rank == 3
    (rel, verdict), = rep.relations
    assert verdict is Verdict.ZERO
    want = parse_expr("I1 - I3^2/2 - I4^2/2 - I5^2/2", {k: Symbol(k, VAR) for k in ("I1", "I3", "I4", "I5")})
    assert simplify(rel - want) == ZERO


def test_rank_invariant_under_recombination():
    sys = load_model("mechanical")
    I = {k: v.I for k, v in expected_integrals("mechanical").items()}
    base = dependence_rank(sys, [I["I2"], I["I3"], I["I4"], I["I5"]], seed=4)
    mixed = dependence_rank(sys, [I["I2"] + I["I3"], I["I3"], I["I4"] - 2 * I["I5"], I["I5"]], seed=4)
    assert base.rank == mixed.rank == 4
    low = dependence_rank(sys, [I["I1"], I["I3"], I["I4"], I["I5"]], seed=4)
    low_mixed = dependence_rank(sys, [I["I1"] + I["I3"], 3 * I["I3"], I["I4"], I["I5"] - I["I4"]], seed=4)
    assert low.rank == low_mixed.rank == 3


def test_lotka_volterra_dependence():
    sys = load_model("lotka_volterra")
    ints = expected_integrals("lotka_volterra")
    rep = dependence_rank(sys, [ints["I1"], ints["I2"]])
    assert rep.rank == 1
    (rel, verdict), = rep.relations
    assert verdict is Verdict.ZERO
    want = parse_expr("I1 - a^2*b*I2^2/2", {"I1": Symbol("I1", VAR), "I2": Symbol("I2", VAR), **sys.symbols})
    assert simplify(rel - want) == ZERO
