import math
import random
from fractions import Fraction

import pytest

from conftest import K, SYMBOLS, T, X, Y, random_expr
from partialham.expr import (
    ZERO,
    Add,
    Const,
    Expr,
    Func,
    Mul,
    NonSeparable,
    ParseError,
    Pow,
    Symbol,
    Verdict,
    collect_by,
    differentiate,
    eval_numeric,
    is_zero,
    parse_expr,
    parse_tree,
    reconstruct,
    render,
    simplify,
    substitute,
)
from partialham.expr.nodes import PARAM, VAR, _ExpBase

P, Q = Symbol("p", VAR), Symbol("q", VAR)


def tree_eval(e: Expr, env: dict) -> float:
    """Second evaluator: a plain recursive walk, independent of the compiler."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, _ExpBase):
        return math.e
    if isinstance(e, Symbol):
        return env[e.name]
    if isinstance(e, Add):
        return sum(tree_eval(a, env) for a in e.args)
    if isinstance(e, Mul):
        return math.prod(tree_eval(a, env) for a in e.args)
    if isinstance(e, Pow):
        return tree_eval(e.base, env) ** tree_eval(e.exp, env)
    if isinstance(e, Func):
        fn = {"exp": math.exp, "ln": math.log, "sin": math.sin, "cos": math.cos, "sqrt": math.sqrt}[e.name]
        return fn(tree_eval(e.arg, env))
    raise TypeError(e)


def rand_env(rng):
    return {n: rng.uniform(0.3, 1.7) for n in SYMBOLS}


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


# parsing and printing


def test_parse_lotka_volterra_hamiltonian():
    a, b = Symbol("a", PARAM), Symbol("b", PARAM)
    e = parse_expr("a*p*q - (b/2)*p^2*q", {"p": P, "q": Q})
    assert isinstance(e, Add) and len(e.args) == 2
    assert e == simplify(Add((Mul((a, P, Q)), Mul((Const(Fraction(-1, 2)), b, Pow(P, Const(2)), Q)))))


def test_parse_atom():
    assert parse_expr("q", {"q": Q}) == Q


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as err:
        parse_expr("x + * y", SYMBOLS)
    assert err.value.col == 5
    with pytest.raises(ParseError):
        parse_expr("zz + 1", SYMBOLS, strict=True)


def test_power_binds_tighter_than_unary_minus():
    assert eval_numeric(parse_expr("-x^2", SYMBOLS), {"x": 3.0}) == -9.0
    assert eval_numeric(parse_expr("2^3^2", SYMBOLS), {}) == 512.0


def test_render_parse_round_trip_1000():
    rng = random.Random(2024)
    for _ in range(1000):
        e = simplify(random_expr(rng))
        text = render(e)
        again = parse_expr(text, SYMBOLS)
        assert again == e, text
        assert render(again) == text


# differentiation


def test_derivative_of_duffing_hamiltonian():
    H = parse_expr("-p^2/2 + (gamma/2)*q^2 - q^4/4", {"p": P, "q": Q})
    assert differentiate(H, "p") == simplify(-P)


def test_derivative_of_unrelated_symbol_is_zero():
    assert differentiate(Symbol("c", VAR), "q") == ZERO


def test_symbolic_exponent_derivative_matches_finite_differences():
    tbl = {"c": Symbol("c", VAR), "s": Symbol("s", VAR)}
    e = parse_expr("c^(-sigma)*s^(phi*(1-sigma))", tbl)
    d = differentiate(e, "s")
    want = parse_expr("phi*(1-sigma)*c^(-sigma)*s^(phi*(1-sigma)-1)", tbl)
    assert simplify(d - want) == ZERO
    rng = random.Random(7)
    for _ in range(20):
        env = {"c": rng.uniform(0.2, 2), "s": rng.uniform(0.2, 2), "sigma": rng.uniform(0.2, 2),
               "phi": rng.uniform(0.2, 2)}
        h = 1e-6 * env["s"]
        fd = (eval_numeric(e, {**env, "s": env["s"] + h}) - eval_numeric(e, {**env, "s": env["s"] - h})) / (2 * h)
        assert abs(fd - eval_numeric(d, env)) <= 1e-6 * max(1.0, abs(fd))


def test_derivatives_match_finite_differences_50_expressions():
    rng = random.Random(99)
    checked = 0
    while checked < 50:
        e = random_expr(rng)
        d = differentiate(e, "x")
        for _ in range(20):
            env = rand_env(rng)
            h = 1e-5 * env["x"]
            try:
                up = eval_numeric(e, {**env, "x": env["x"] + h})
                dn = eval_numeric(e, {**env, "x": env["x"] - h})
                exact = eval_numeric(d, env)
            except ArithmeticError:
                continue
            fd = (up - dn) / (2 * h)
            scale = max(1.0, abs(exact), abs(up) * 1e-4)
            assert abs(fd - exact) <= 1e-6 * scale, (render(e), env)
        checked += 1


def test_differentiation_is_linear():
    rng = random.Random(3)
    for _ in range(100):
        e1, e2 = random_expr(rng), random_expr(rng)
        a, b = Const(Fraction(rng.randint(-9, 9), rng.randint(1, 5))), Const(Fraction(rng.randint(-9, 9), 7))
        lhs = differentiate(Add((Mul((a, e1)), Mul((b, e2)))), "y")
        rhs = Add((Mul((a, differentiate(e1, "y"))), Mul((b, differentiate(e2, "y")))))
        assert simplify(lhs - rhs) == ZERO


def test_product_rule_500_pairs():
    rng = random.Random(4)
    for _ in range(500):
        e1, e2 = random_expr(rng, 2), random_expr(rng, 2)
        lhs = differentiate(Mul((e1, e2)), "x")
        rhs = Add((Mul((differentiate(e1, "x"), e2)), Mul((e1, differentiate(e2, "x")))))
        r = simplify(lhs - rhs)
        assert r == ZERO or is_zero(r, {}) is not Verdict.NONZERO


def test_simplify_is_idempotent():
    rng = random.Random(5)
    for _ in range(300):
        s = simplify(random_expr(rng))
        assert simplify(s) == s


def test_canonical_rules():
    assert simplify(Pow(X, Const(0))) == Const(1)
    assert simplify(Pow(X, Const(1))) == X
    assert simplify(Mul((Const(0), X))) == ZERO
    assert simplify(Add((X, X, -Y, Y))) == simplify(Mul((Const(2), X)))
    ex = parse_expr("exp(x)*exp(y)", SYMBOLS)
    assert simplify(ex - parse_expr("exp(x+y)", SYMBOLS)) == ZERO


# substitution


def test_substitute_identity_binding():
    e = parse_expr("x^2*exp(y) + k", SYMBOLS)
    assert substitute(e, {"x": X}) == simplify(e)


def test_substitute_control_relation_into_costate_equation():
    tbl = {"s": Symbol("s", VAR), "c": Symbol("c", VAR), "p": Symbol("p", VAR)}
    rhs = parse_expr("-(c*s^phi)^(1-sigma)*phi/s - p*m + rho*p", tbl)
    got = substitute(rhs, {"p": parse_expr("c^(-sigma)*s^(phi*(1-sigma))", tbl)})
    want = parse_expr("c^(-sigma)*s^(phi*(1-sigma))*(rho - m - phi*c/s)", tbl)
    assert simplify(got - want) == ZERO


def test_substitution_commutes_with_evaluation():
    rng = random.Random(6)
    for _ in range(200):
        e = random_expr(rng)
        g = Add((Mul((X, Y)), Const(1)))
        env = rand_env(rng)
        try:
            lhs = eval_numeric(substitute(e, {"x": g}), env)
            rhs = eval_numeric(e, {**env, "x": eval_numeric(g, env)})
        except ArithmeticError:
            continue
        assert close(lhs, rhs, 1e-8)


# collection


def test_collect_zero_is_empty():
    assert collect_by(ZERO, ["p"]) == {}


def test_collect_reports_nonseparable_term():
    with pytest.raises(NonSeparable) as err:
        collect_by(parse_expr("exp(p*q) + p", {"p": P, "q": Q}), ["p"])
    assert "exp" in str(err.value)


def test_collect_symbolic_exponent_keys():
    c = Symbol("c", VAR)
    e = parse_expr("a*c^(2-sigma) + b*c^(1-sigma) + c*c^(-sigma) + 4", {"c": c})
    keys = {str(k) for k in collect_by(e, ["c"])}
    assert keys == {"c^(2 - sigma)", "c^(1 - sigma)", "1"}


def test_collect_reconstruction_500():
    rng = random.Random(8)
    for _ in range(500):
        terms = []
        for _ in range(rng.randint(1, 4)):
            coef = random_expr(rng, 2)  # free of p and q
            mono = Mul((Pow(P, Const(rng.randint(0, 3))), Pow(Q, rng.choice([Const(rng.randint(0, 2)), K]))))
            terms.append(Mul((coef, mono)))
        e = simplify(Add(terms))
        groups = collect_by(e, ["p", "q"])
        assert simplify(reconstruct(groups, {"p": P, "q": Q}) - e) == ZERO


# zero testing and evaluation


def test_is_zero_verdicts():
    assert is_zero(simplify(X - X)) is Verdict.ZERO
    assert is_zero(parse_expr("x - y", SYMBOLS)) is Verdict.NONZERO
    v = is_zero(parse_expr("sin(t)^2 + cos(t)^2 - 1", SYMBOLS))
    assert v is not Verdict.NONZERO


def test_is_zero_reports_unknown_instead_of_zero():
    tiny = parse_expr("(x - y)/10^12", SYMBOLS)
    assert is_zero(tiny) is Verdict.UNKNOWN


def test_eval_mechanical_hamiltonian():
    tbl = {n: Symbol(n, VAR) for n in ("p1", "p2", "q2")}
    H = parse_expr("p1^2/2 + p2^2/2 + q2^2/2", tbl)
    assert eval_numeric(H, {"p1": 1, "p2": 2, "q2": 3}) == 7.0


def test_eval_growth_integral_at_time_zero():
    tbl = {n: Symbol(n, VAR) for n in ("p", "s", "t")}
    I3 = parse_expr("p*s^(-phi)*exp((m*phi+m-rho)*t)", tbl)
    env = {"p": 1.3, "s": 0.7, "t": 0.0, "phi": 0.5, "m": 0.1, "rho": 0.05}
    assert close(eval_numeric(I3, env), 1.3 * 0.7 ** -0.5, 1e-14)


def test_eval_domain_errors():
    with pytest.raises(ArithmeticError):
        eval_numeric(parse_expr("ln(x)", SYMBOLS), {"x": -1.0})


def test_compiled_evaluator_matches_tree_walk_1000():
    rng = random.Random(10)
    for _ in range(1000):
        e = random_expr(rng)
        env = rand_env(rng)
        try:
            want = tree_eval(e, env)
        except (ArithmeticError, ValueError):
            continue
        if isinstance(want, complex):
            continue
        assert close(eval_numeric(e, env), want, 1e-9), render(e)


def test_parse_tree_keeps_factored_form():
    raw = parse_tree("(x - y)^2*exp(t)", SYMBOLS)
    assert isinstance(raw, Mul)
    assert simplify(raw) == parse_expr("(x - y)^2*exp(t)", SYMBOLS)
    assert render(simplify(raw)) != render(raw)
