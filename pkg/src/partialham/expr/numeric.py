"""Floating-point evaluation and probabilistic zero testing."""

from __future__ import annotations

import enum
import math
import random
from typing import Callable, Iterable, Mapping, Sequence

from .nodes import EXP_BASE, Add, Const, Expr, Func, FuncApp, Mul, Pow, Symbol, as_expr
from .normal import simplify, terms_of


class EvalDomainError(ArithmeticError):
    pass


class Verdict(str, enum.Enum):
    ZERO = "Zero"
    NONZERO = "NonZero"
    UNKNOWN = "Unknown"


def _pow(a: float, b: float) -> float:
    if a < 0 and b != int(b):
        raise EvalDomainError(f"negative base {a} to non-integer power {b}")
    if a == 0 and b < 0:
        raise EvalDomainError("zero to a negative power")
    return a**b


def _ln(a: float) -> float:
    if a <= 0:
        raise EvalDomainError(f"ln of non-positive value {a}")
    return math.log(a)


_RUNTIME = {"_pow": _pow, "_ln": _ln, "_exp": math.exp, "_sin": math.sin, "_cos": math.cos}


def _emit(e: Expr, names: Mapping[str, str], memo: dict) -> str:
    hit = memo.get(e)
    if hit is not None:
        return hit
    if isinstance(e, Const):
        out = repr(float(e.value))
    elif isinstance(e, Symbol):
        if e.name not in names:
            raise KeyError(f"unbound symbol {e.name!r}")
        out = names[e.name]
    elif e is EXP_BASE:
        out = repr(math.e)
    elif isinstance(e, FuncApp):
        raise TypeError("cannot evaluate an undetermined function")
    elif isinstance(e, Func):
        arg = _emit(e.arg, names, memo)
        out = f"_{e.name}({arg})"
    elif isinstance(e, Pow):
        base = _emit(e.base, names, memo)
        x = e.exp
        if isinstance(x, Const) and x.value.denominator == 1 and abs(x.value) <= 8:
            n = int(x.value)
            out = f"(({base})**{n})" if n >= 0 else f"(1.0/({base})**{-n})"
        else:
            out = f"_pow({base}, {_emit(x, names, memo)})"
    elif isinstance(e, Mul):
        out = "(" + "*".join(_emit(f, names, memo) for f in e.factors) + ")"
    elif isinstance(e, Add):
        out = "(" + " + ".join(_emit(t, names, memo) for t in e.terms) + ")"
    else:
        raise TypeError(type(e).__name__)
    memo[e] = out
    return out


def compile_exprs(exprs: Sequence[Expr], arg_names: Sequence[str]) -> Callable[..., tuple]:
    """Compile expressions to a function of positional floats returning a tuple."""
    names = {n: f"a{i}" for i, n in enumerate(arg_names)}
    body = ", ".join(_emit(as_expr(e), names, {}) for e in exprs)
    src = f"def _f({', '.join(names.values())}):\n    return ({body},)\n"
    scope = dict(_RUNTIME)
    exec(compile(src, "<partialham-expr>", "exec"), scope)
    fn = scope["_f"]
    return fn


def compile_expr(e: Expr, arg_names: Sequence[str]) -> Callable[..., float]:
    fn = compile_exprs([e], arg_names)
    return lambda *a: fn(*a)[0]


def _wrap(call, *args):
    try:
        return call(*args)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise EvalDomainError(str(exc)) from exc


def eval_numeric(e: Expr, env: Mapping[str, float]) -> float:
    """IEEE double evaluation of ``e`` with every symbol bound in ``env``."""
    e = as_expr(e)
    names = sorted({s.name for s in e.symbols})
    missing = [n for n in names if n not in env]
    if missing:
        raise KeyError(f"unbound symbols: {', '.join(missing)}")
    fn = compile_expr(e, names)
    value = _wrap(fn, *(float(env[n]) for n in names))
    if isinstance(value, complex):
        raise EvalDomainError("complex result")
    return float(value)


def sample_point(symbols: Iterable[Symbol], rng: random.Random,
                 signs: Mapping[str, int] | None = None,
                 fixed: Mapping[str, float] | None = None) -> dict[str, float]:
    """A random point: |x| uniform in [0.1, 2.0], negative if declared so."""
    signs = signs or {}
    fixed = fixed or {}
    env = {}
    for s in sorted(symbols, key=lambda s: s.sort_key):
        if s.name in fixed:
            env[s.name] = float(fixed[s.name])
            continue
        sign = signs.get(s.name, s.sign)
        v = rng.uniform(0.1, 2.0)
        env[s.name] = -v if sign == -1 else v
    return env


def is_zero(e: Expr, signs: Mapping[str, int] | None = None, samples: int = 100,
            seed: int = 0, fixed: Mapping[str, float] | None = None) -> Verdict:
    """Zero when the canonical form is 0; otherwise decide by sampling.

    A sample counts as non-zero when the value exceeds 1e-8 relative to
    max(1, sum of absolute term values), which keeps cancellation noise in
    large sums from producing false NonZero verdicts.
    """
    e = simplify(as_expr(e))
    if isinstance(e, Const):
        return Verdict.ZERO if e.value == 0 else Verdict.NONZERO
    if any(isinstance(n, FuncApp) for n in e.walk()):
        return Verdict.UNKNOWN
    terms = terms_of(e)
    syms = sorted(e.symbols, key=lambda s: s.sort_key)
    names = [s.name for s in syms]
    fn = compile_exprs(terms, names)
    rng = random.Random(seed)
    good = 0
    for _ in range(samples * 10):
        env = sample_point(syms, rng, signs, fixed)
        try:
            values = fn(*(env[n] for n in names))
        except (ArithmeticError, ValueError):
            continue
        if any(isinstance(v, complex) or not math.isfinite(v) for v in values):
            continue
        good += 1
        total = math.fsum(values)
        scale = max(1.0, math.fsum(abs(v) for v in values))
        if abs(total) > 1e-8 * scale:
            return Verdict.NONZERO
        if good >= samples:
            break
    return Verdict.UNKNOWN
