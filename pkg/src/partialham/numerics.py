"""Fixed-step RK4 integration and numeric checks of integrals and solutions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .expr import Expr, as_expr, compile_exprs, differentiate, replace, simplify, substitute
from .hamsys import ConstraintSet, SystemModel
from .integrals import FirstIntegral


class NonFinite(ArithmeticError):
    def __init__(self, step: int, t: float, state: Mapping[str, float]):
        super().__init__(f"non-finite state at step {step} (t={t:g}): {dict(state)}")
        self.step = step
        self.t = t
        self.state = dict(state)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # row per time, column per variable
    variables: list[str]
    params: dict[str, float]
    ic: dict[str, float]
    h: float
    scheme: str = "rk4"

    def __len__(self) -> int:
        return len(self.times)

    def column(self, var: str) -> np.ndarray:
        return self.states[:, self.variables.index(var)]

    def state(self, i: int) -> dict[str, float]:
        return dict(zip(self.variables, self.states[i].tolist()))

    def to_csv(self, out=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.variables])
        for t, row in zip(self.times, self.states):
            w.writerow(["%.17g" % t, *("%.17g" % x for x in row)])
        text = buf.getvalue()
        if out is not None:
            if isinstance(out, (str, Path)):
                Path(out).write_text(text, encoding="utf-8")
            else:
                out.write(text)
        return text


def _param_env(sys: SystemModel, params: Mapping[str, float] | None) -> dict[str, float]:
    env = dict(sys.param_values)
    env.update({k: float(v) for k, v in (params or {}).items()})
    missing = [p for p in sys.param_names if p not in env]
    if missing:
        raise ValueError(f"unbound parameters: {', '.join(missing)}")
    return env


def _initial_controls(sys: SystemModel, ic: dict[str, float], penv: Mapping[str, float], t0: float) -> None:
    """Fill missing control values from given momenta by Newton's method."""
    sym = sys.symbols
    for c in sys.controls:
        if c.var in ic:
            continue
        if c.momentum not in ic:
            raise ValueError(f"initial condition needs {c.var} or {c.momentum}")
        names = [sys.time, c.var, *sys.states, *penv]
        f = compile_exprs([c.relation, differentiate(c.relation, sym[c.var])], names)
        u = 1.0
        for _ in range(100):
            val, slope = f(t0, u, *(ic[q] for q in sys.states), *penv.values())
            step = (val - ic[c.momentum]) / slope
            u_next = u - step
            if u_next <= 0:
                u_next = u / 2
            if abs(u_next - u) <= 1e-15 * max(1.0, abs(u)):
                u = u_next
                break
            u = u_next
        ic[c.var] = u


def integrate(sys: SystemModel, params: Mapping[str, float] | None, ic: Mapping[str, float],
              t0: float, t1: float, h: float) -> Trajectory:
    """Classical RK4 with uniform step; controls are carried as states.

    ``t1 < t0`` integrates backwards with step ``-h``.
    """
    if not h > 0 or t1 == t0:
        raise ValueError("need t1 != t0 and h > 0")
    penv = _param_env(sys, params)
    ic = {k: float(v) for k, v in ic.items()}
    _initial_controls(sys, ic, penv, t0)
    variables = sys.phase_vars
    missing = [v for v in variables if v not in ic]
    if missing:
        raise ValueError(f"initial condition misses {', '.join(missing)}")
    rhs = [r for _, r in sys.equations_of_motion()]
    f = compile_exprs(rhs, [sys.time, *variables, *penv])
    pv = list(penv.values())
    n = int(round(abs(t1 - t0) / h))
    if n < 1:
        raise ValueError("step larger than the interval")
    h = math.copysign(h, t1 - t0)
    y = [ic[v] for v in variables]
    out = np.empty((n + 1, len(y)))
    out[0] = y
    dim = range(len(y))
    for k in range(n):
        t = t0 + k * h
        try:
            k1 = f(t, *y, *pv)
            k2 = f(t + h / 2, *[y[i] + h / 2 * k1[i] for i in dim], *pv)
            k3 = f(t + h / 2, *[y[i] + h / 2 * k2[i] for i in dim], *pv)
            k4 = f(t + h, *[y[i] + h * k3[i] for i in dim], *pv)
        except (ArithmeticError, ValueError) as exc:
            raise NonFinite(k + 1, t, dict(zip(variables, y))) from exc
        y = [y[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in dim]
        if not all(isinstance(v, float) and math.isfinite(v) for v in y):
            raise NonFinite(k + 1, t + h, dict(zip(variables, y)))
        out[k + 1] = y
    times = t0 + h * np.arange(n + 1)
    return Trajectory(times, out, list(variables), penv, ic, abs(h))


@dataclass(frozen=True)
class Drift:
    relative: float
    absolute: float
    initial: float
    validity_satisfied: bool = True

    def __float__(self) -> float:
        return self.relative

    def to_json(self) -> dict:
        return {"relative": self.relative, "absolute": self.absolute, "initial": self.initial,
                "validity_satisfied": self.validity_satisfied}


def evaluate_along(sys: SystemModel, traj: Trajectory, e: Expr) -> np.ndarray:
    """Values of ``e`` at every trajectory point, evaluated as written."""
    e = replace(as_expr(e), {c.momentum: c.relation for c in sys.controls})
    names = [sys.time, *traj.variables, *traj.params]
    extra = {s.name for s in e.symbols} - set(names)
    if extra:
        raise ValueError(f"unbound symbols: {', '.join(sorted(extra))}")
    fn = compile_exprs([e], names)
    pv = list(traj.params.values())
    return np.array([fn(t, *row, *pv)[0] for t, row in zip(traj.times.tolist(), traj.states.tolist())])


def drift(traj: Trajectory, I: FirstIntegral | Expr, sys: SystemModel) -> Drift:
    """max |I(t) - I(0)| / max(|I(0)|, 1e-12), with the absolute value too."""
    validity = I.validity if isinstance(I, FirstIntegral) else ConstraintSet()
    e = I.evaluation_form if isinstance(I, FirstIntegral) else I
    vals = evaluate_along(sys, traj, e)
    dev = float(np.max(np.abs(vals - vals[0])))
    ok = validity.satisfied_by(traj.params, tol=1e-9) if validity.relations else True
    return Drift(dev / max(abs(float(vals[0])), 1e-12), dev, float(vals[0]), ok)


def solution_residual(sys: SystemModel, closed_form: Mapping[str, Expr],
                      params: Mapping[str, float] | None, t_samples: Sequence[float]) -> float:
    """max |d/dt x(t) - f(x(t))| over the samples and phase variables."""
    sym = sys.symbols
    cf = {k: simplify(as_expr(v)) for k, v in closed_form.items()}
    missing = [v for v in sys.phase_vars if v not in cf]
    if missing:
        raise ValueError(f"closed form misses {', '.join(missing)}")
    rhs = dict(sys.equations_of_motion())
    checks: list[tuple[str, Expr]] = [(v, rhs[v]) for v in sys.phase_vars]
    mrates = sys.momentum_rates()
    checks += [(p, mrates[p]) for p in sys.momenta if p in cf and p not in rhs]
    t = sys.t
    exprs = []
    for v, r in checks:
        sub = {k: cf[k] for k in sys.phase_vars}
        exprs.append(differentiate(cf[v], t) - substitute(r, sub))
    env = dict(sys.param_values)
    env.update({k: float(v) for k, v in (params or {}).items()})
    names = sorted({s.name for e in exprs for s in e.symbols} - {sys.time})
    missing = [n for n in names if n not in env]
    if missing:
        raise ValueError(f"unbound symbols: {', '.join(missing)}")
    fn = compile_exprs(exprs, [sys.time, *names])
    worst = 0.0
    for ts in t_samples:
        vals = fn(float(ts), *(env[n] for n in names))
        worst = max(worst, max(abs(v) for v in vals))
    return worst


@dataclass
class TransversalityReport:
    decaying: bool
    times: list[float]
    values: list[float]
    criterion: float | None = None
    criterion_holds: bool | None = None
    note: str = ""

    def to_json(self) -> dict:
        return {
            "decaying": self.decaying,
            "times": self.times,
            "values": self.values,
            "criterion": self.criterion,
            "criterion_holds": self.criterion_holds,
            "note": self.note,
        }


def growth_criterion(params: Mapping[str, float]) -> float:
    """rho + m (sigma - 1)(phi + 1) for the environmental growth model."""
    return params["rho"] + params["m"] * (params["sigma"] - 1) * (params["phi"] + 1)


def transversality_limit(sys: SystemModel, e: Expr, params: Mapping[str, float] | None, t_max: float,
                         closed_form: Mapping[str, Expr] | None = None,
                         ic: Mapping[str, float] | None = None, h: float = 1e-2) -> TransversalityReport:
    """Does ``e`` vanish as t grows along a path?

    The path is the closed form when given, otherwise an RK4 trajectory from
    ``ic``.  Values are taken at 0, t_max/4, t_max/2 and t_max; decaying
    means strictly decreasing magnitudes with the last below 1e-6 times the
    first.
    """
    penv = _param_env(sys, params)
    times = [0.0, t_max / 4, t_max / 2, t_max]
    e = sys.eliminate_controls(as_expr(e))
    if closed_form is not None:
        e = substitute(e, {k: as_expr(v) for k, v in closed_form.items()})
        names = sorted({s.name for s in e.symbols} - {sys.time})
        env = dict(penv)
        unbound = [n for n in names if n not in env]
        if unbound:
            raise ValueError(f"unbound symbols: {', '.join(unbound)}")
        fn = compile_exprs([e], [sys.time, *names])
        values = []
        for t in times:
            try:
                values.append(float(fn(t, *(env[n] for n in names))[0]))
            except (ArithmeticError, ValueError, OverflowError):
                values.append(math.inf)
    else:
        if ic is None:
            raise ValueError("need a closed form or an initial condition")
        try:
            traj = integrate(sys, penv, ic, 0.0, t_max, h)
            vals = evaluate_along(sys, traj, e)
            values = [float(vals[int(round(t / traj.h))]) for t in times]
        except NonFinite:
            values = [math.inf] * len(times)
    mags = [abs(v) for v in values]
    if all(m == 0 for m in mags):
        decaying = True
    else:
        decaying = all(a > b for a, b in zip(mags, mags[1:])) and mags[-1] < 1e-6 * mags[0]
    report = TransversalityReport(decaying, times, values)
    if sys.name == "growth_env":
        crit = growth_criterion(penv)
        report.criterion = crit
        report.criterion_holds = crit > 0
    return report
