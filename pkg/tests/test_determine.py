import random
from fractions import Fraction

from partialham.casebook import CASES, _candidate, _table
from partialham.determine import (
    SymmetryCandidate,
    determining_expression,
    determining_system,
    separate,
    verify_candidate,
)
from partialham.dsl import load_model
from partialham.expr import ZERO, Const, Verdict, differentiate, parse_expr, reconstruct, simplify, substitute
from partialham.hamsys import ConstraintSet


def proportional(a, b):
    return any(simplify(a - Const(Fraction(k)) * b) == ZERO for k in (1, -1, 2, -2, "1/2", "-1/2"))


def test_duffing_separates_into_four_groups_matching_hand_system():
    sys = load_model("duffing_vdp")
    c = SymmetryCandidate.generic(sys)
    S, d = sys.symbols, differentiate
    q, t = S["q"], S["t"]
    xi, eta, B = c.xi, c.eta_of("q"), c.B
    damp = S["alpha"] + S["beta"] * q * q
    V = S["gamma"] * q * q / 2 - q ** 4 / 4
    expected = {
        "p^3": d(xi, q),
        "p^2": -d(eta, q) + d(xi, t) / 2 - xi * damp,
        "p": d(eta, t) + d(xi, q) * V + d(B, q) - eta * damp,
        "1": d(B, t) + eta * (S["gamma"] * q - q ** 3) + d(xi, t) * V,
    }
    det = determining_system(sys)
    assert sorted(str(k) for k, _ in det.entries) == sorted(expected)
    for k, r in det.entries:
        assert proportional(r, expected[str(k)]), k


def test_growth_separates_by_powers_of_consumption():
    det = determining_system(load_model("growth_env"))
    assert {str(k) for k, _ in det.entries} == {"c^(2 - sigma)", "c^(1 - sigma)", "c^(-sigma)", "c", "1"}


def test_mechanical_keys_are_monomials_up_to_cubic():
    det = determining_system(load_model("mechanical"))
    keys = {str(k) for k, _ in det.entries}
    assert {"p1^3", "p2^3", "p1^2*p2", "p1*p2^2", "1"} <= keys
    assert all(sum(int(x) if x.isdigit() else 0 for x in k.replace("^", " ").split()) <= 3 for k in keys)


def test_lotka_volterra_four_groups():
    sys = load_model("lotka_volterra")
    det = determining_system(sys)
    assert [str(k) for k, _ in det.entries] == ["p^3", "p^2", "p", "1"]
    c = SymmetryCandidate.generic(sys)
    q = sys.symbols["q"]
    b = sys.symbols["b"]
    assert simplify(det.entries[0][1] + b * b * q / 2 * (q * differentiate(c.xi, q) + c.xi)) == ZERO


def test_zero_expression_separates_to_nothing():
    assert len(separate(load_model("harmonic"), ZERO)) == 0


def test_time_translation_on_autonomous_system():
    sys = load_model("harmonic")
    cand = SymmetryCandidate.of(1)
    assert determining_expression(sys, cand) == ZERO
    assert verify_candidate(sys, cand).passed


def test_duffing_operators_verify_under_constraint():
    sys = load_model("duffing_vdp")
    table = _table(sys)
    constraint = ConstraintSet((parse_expr("beta^2*gamma + 3*alpha*beta - 9", table),))
    for spec in CASES["duffing_vdp"].operators:
        cand = _candidate(sys, spec, table)
        assert verify_candidate(sys, cand, constraint).passed
        assert not verify_candidate(sys, cand).passed


def test_lotka_volterra_operators_fail_without_constraint():
    sys = load_model("lotka_volterra")
    table = _table(sys)
    for spec in CASES["lotka_volterra"].operators:
        rep = verify_candidate(sys, _candidate(sys, spec, table))
        assert not rep.passed and rep.verdict is Verdict.NONZERO
        for _, residual, v in rep.residuals:
            if v is Verdict.NONZERO:
                assert substitute(residual, {"m": -sys.symbols["a"]}) == ZERO


def test_separation_reconstructs_expression():
    for name in ("growth_env", "mechanical", "duffing_vdp", "lotka_volterra"):
        sys = load_model(name)
        e = determining_expression(sys, SymmetryCandidate.generic(sys))
        det = separate(sys, e)
        assert simplify(reconstruct(dict(det.entries), sys.symbols) - e) == ZERO


def _random_candidate(sys, rng):
    t, q = sys.t, sys.symbols[sys.states[0]]

    def poly():
        return sum((Const(rng.randint(-3, 3)) * t ** rng.randint(0, 2) * q ** rng.randint(0, 3)
                    for _ in range(3)), ZERO)
    return SymmetryCandidate.of(poly(), {sys.states[0]: poly()}, poly())


def test_determining_expression_is_linear_in_candidate():
    rng = random.Random(5)
    for name in ("duffing_vdp", "lotka_volterra", "harmonic"):
        sys = load_model(name)
        for _ in range(10):
            a, b = _random_candidate(sys, rng), _random_candidate(sys, rng)
            s = SymmetryCandidate.of(a.xi + b.xi, {q: a.eta_of(q) + b.eta_of(q) for q in sys.states}, a.B + b.B)
            lhs = determining_expression(sys, s)
            rhs = determining_expression(sys, a) + determining_expression(sys, b)
            assert simplify(lhs - rhs) == ZERO
