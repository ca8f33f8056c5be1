"""Immutable expression tree.

Nodes compare and hash structurally. Arithmetic operators build *raw*
trees; call :func:`partialham.expr.simplify` to reach canonical form.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational
from typing import Iterable

FUNCTIONS = ("exp", "ln", "sin", "cos")

# symbol kinds, in sort order
VAR, PARAM, COEF, RATE = "var", "param", "coef", "rate"
_KIND_RANK = {VAR: 0, PARAM: 1, COEF: 2, RATE: 3}


class Expr:
    __slots__ = ("_key", "_hash")

    def _init_key(self, key: tuple) -> None:
        self._key = key
        self._hash = hash(key)

    def __eq__(self, other):
        return isinstance(other, Expr) and self._key == other._key

    def __hash__(self):
        return self._hash

    def __lt__(self, other: "Expr"):
        return self._key < other._key

    @property
    def sort_key(self) -> tuple:
        return self._key

    # raw builders -----------------------------------------------------
    def __add__(self, other):
        return Add((self, as_expr(other)))

    def __radd__(self, other):
        return Add((as_expr(other), self))

    def __sub__(self, other):
        return Add((self, -as_expr(other)))

    def __rsub__(self, other):
        return Add((as_expr(other), -self))

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    def __rmul__(self, other):
        return Mul((as_expr(other), self))

    def __truediv__(self, other):
        return Mul((self, Pow(as_expr(other), MINUS_ONE)))

    def __rtruediv__(self, other):
        return Mul((as_expr(other), Pow(self, MINUS_ONE)))

    def __pow__(self, other):
        return Pow(self, as_expr(other))

    def __rpow__(self, other):
        return Pow(as_expr(other), self)

    def __neg__(self):
        if isinstance(self, Const):
            return Const(-self.value)
        return Mul((MINUS_ONE, self))

    def __pos__(self):
        return self

    def __repr__(self):
        from .printing import render

        return f"Expr({render(self)!r})"

    def __str__(self):
        from .printing import render

        return render(self)

    # structure --------------------------------------------------------
    @property
    def args(self) -> tuple["Expr", ...]:
        return ()

    def walk(self) -> Iterable["Expr"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.args)

    @property
    def symbols(self) -> frozenset["Symbol"]:
        return free_symbols(self)

    def has(self, *syms: "Expr") -> bool:
        targets = set(syms)
        return any(node in targets for node in self.walk())


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, float):
            value = Fraction(str(value))
        self.value = Fraction(value)
        self._init_key((0, self.value))

    @property
    def is_integer(self) -> bool:
        return self.value.denominator == 1


class Symbol(Expr):
    """A named symbol.

    ``kind`` is one of ``var`` (time, states, momenta, controls),
    ``param`` (model parameters and level constants), ``coef`` (unknown
    ansatz coefficients) and ``rate`` (unknown exponential rates).
    ``sign`` is the declared sign (+1, -1) or None; it is metadata and does
    not take part in equality.
    """

    __slots__ = ("name", "kind", "sign")

    def __init__(self, name: str, kind: str = VAR, sign: int | None = None):
        if kind not in _KIND_RANK:
            raise ValueError(f"bad symbol kind {kind!r}")
        self.name = name
        self.kind = kind
        self.sign = sign
        self._init_key((1, _KIND_RANK[kind], name))

    @property
    def positive_domain(self) -> bool:
        # symbolic power/log rewrites work on the positive orthant unless a
        # negative sign was declared; unknown coefficients carry no sign
        return self.kind in (VAR, PARAM) and self.sign != -1


def Variable(name: str, sign: int | None = None) -> Symbol:
    return Symbol(name, VAR, sign)


def Parameter(name: str, sign: int | None = None) -> Symbol:
    return Symbol(name, PARAM, sign)


class _ExpBase(Expr):
    """Sentinel base for exp(a) inside normal forms (exp(a) = E^a)."""

    __slots__ = ()

    def __init__(self):
        self._init_key((2,))


EXP_BASE = _ExpBase()


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        self.name = name
        self.arg = as_expr(arg)
        self._init_key((3, name, self.arg._key))

    @property
    def args(self):
        return (self.arg,)


class FuncApp(Expr):
    """An undetermined function such as xi(t, q), possibly differentiated.

    ``derivs`` is a sorted tuple of (variable name, order) pairs.
    """

    __slots__ = ("name", "variables", "derivs")

    def __init__(self, name: str, variables: tuple[Symbol, ...], derivs=()):
        self.name = name
        self.variables = tuple(variables)
        self.derivs = tuple(sorted((v, n) for v, n in derivs if n))
        self._init_key((4, name, tuple(v._key for v in self.variables), self.derivs))

    @property
    def args(self):
        return self.variables

    def derivative(self, var: Symbol) -> "FuncApp":
        orders = dict(self.derivs)
        orders[var.name] = orders.get(var.name, 0) + 1
        return FuncApp(self.name, self.variables, tuple(orders.items()))


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base: Expr, exp: Expr):
        self.base = as_expr(base)
        self.exp = as_expr(exp)
        self._init_key((5, self.base._key, self.exp._key))

    @property
    def args(self):
        return (self.base, self.exp)


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        flat: list[Expr] = []
        for f in factors:
            f = as_expr(f)
            if isinstance(f, Mul):
                flat.extend(f.factors)
            else:
                flat.append(f)
        self.factors = tuple(flat)
        self._init_key((6, tuple(f._key for f in self.factors)))

    @property
    def args(self):
        return self.factors


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        flat: list[Expr] = []
        for t in terms:
            t = as_expr(t)
            if isinstance(t, Add):
                flat.extend(t.terms)
            else:
                flat.append(t)
        self.terms = tuple(flat)
        self._init_key((7, tuple(t._key for t in self.terms)))

    @property
    def args(self):
        return self.terms


ZERO = Const(0)
ONE = Const(1)
MINUS_ONE = Const(-1)
HALF = Const(Fraction(1, 2))


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Rational, float)) and not isinstance(value, bool):
        return Const(value)
    raise TypeError(f"cannot convert {value!r} to an expression")


def exp(x) -> Func:
    return Func("exp", x)


def ln(x) -> Func:
    return Func("ln", x)


def sin(x) -> Func:
    return Func("sin", x)


def cos(x) -> Func:
    return Func("cos", x)


def sqrt(x) -> Pow:
    return Pow(as_expr(x), HALF)


def free_symbols(e: Expr) -> frozenset[Symbol]:
    return frozenset(n for n in e.walk() if isinstance(n, Symbol))


def function_apps(e: Expr) -> frozenset[FuncApp]:
    return frozenset(n for n in e.walk() if isinstance(n, FuncApp))


def depends_on(e: Expr, names: Iterable[Symbol | str]) -> bool:
    wanted = {n.name if isinstance(n, Symbol) else n for n in names}
    for node in e.walk():
        if isinstance(node, Symbol) and node.name in wanted:
            return True
        if isinstance(node, FuncApp) and any(v.name in wanted for v in node.variables):
            return True
    return False
