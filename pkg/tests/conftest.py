import random
from fractions import Fraction

import pytest

from partialham.expr import Add, Const, Mul, Pow, Symbol, cos, exp, ln, sin, sqrt
from partialham.expr.nodes import PARAM, VAR

X, Y, T = Symbol("x", VAR), Symbol("y", VAR), Symbol("t", VAR)
K = Symbol("k", PARAM)
SYMBOLS = {"x": X, "y": Y, "t": T, "k": K}


def random_expr(rng: random.Random, depth: int = 3):
    """Random tree over x, y, t, k; safe to evaluate for positive arguments."""
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.6:
            return rng.choice([X, Y, T, K])
        return Const(Fraction(rng.randint(-5, 5), rng.choice([1, 1, 2, 3])))
    op = rng.choice(["add", "add", "mul", "mul", "pow", "fn"])
    if op == "add":
        return Add([random_expr(rng, depth - 1) for _ in range(rng.randint(2, 3))])
    if op == "mul":
        return Mul([random_expr(rng, depth - 1) for _ in range(2)])
    if op == "pow":
        base = rng.choice([X, Y, T, K, Add((X, Y))])
        ex = rng.choice([Const(rng.randint(-3, 4)), Const(Fraction(1, 2)), K, Add((Const(1), -K))])
        return Pow(base, ex)
    f = rng.choice([exp, sin, cos, ln, sqrt])
    arg = random_expr(rng, depth - 1)
    if f in (ln, sqrt):
        arg = Add((Mul((X, X)), Mul((Y, Y)), Const(1)))  # keep the argument positive
    if f is exp:
        arg = Mul((Const(Fraction(1, 2)), rng.choice([X, Y, T, K])))
    return f(arg)


@pytest.fixture
def rng():
    return random.Random(12345)
