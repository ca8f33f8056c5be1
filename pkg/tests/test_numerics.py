import csv
import io
import math

import numpy as np
import pytest

from partialham.casebook import CASES, GROWTH_RATE, _table, expected_integrals
from partialham.dsl import load_model, parse_model
from partialham.expr import parse_expr, substitute
from partialham.numerics import (
    NonFinite,
    drift,
    evaluate_along,
    growth_criterion,
    integrate,
    solution_residual,
    transversality_limit,
)

GROWTH = {"rho": 0.05, "sigma": 2, "phi": 0.5, "m": 0.1}
C0 = (0.05 + 0.1 * 1 * 1.5) / (2 * 1.5)

# (model, params, ic, horizon) for the convergence study
CONVERGENCE = [
    ("growth_env", GROWTH, {"s": 1.0, "c": 0.2}, 4.0),
    ("mechanical", {}, {"q1": 1.0, "q2": 1.0, "p1": 0.0, "p2": 1.0}, 2.0),
    ("duffing_vdp", {}, {"q": 0.5, "p": 0.5}, 2.0),
    ("lotka_volterra", {"m": -1}, {"q": 1.0, "p": 0.5}, 2.0),
]


def test_harmonic_energy_drift():
    sys = load_model("harmonic")
    traj = integrate(sys, {}, {"q": 1.0, "p": 0.0}, 0.0, 10.0, 1e-3)
    assert drift(traj, sys.H, sys).relative < 1e-9


def test_growth_trajectory_follows_balanced_path():
    sys = load_model("growth_env")
    traj = integrate(sys, GROWTH, {"s": 1.0, "c": C0}, 0.0, 10.0, 1e-3)
    g = (0.1 * 1.5 - 0.05) / (2 * 1.5)
    assert np.allclose(traj.column("s"), np.exp(g * traj.times), rtol=1e-10)
    assert np.allclose(traj.column("c"), C0 * np.exp(g * traj.times), rtol=1e-10)


def test_growth_controls_initialised_from_momentum():
    sys = load_model("growth_env")
    p0 = C0 ** -2 * 1.0 ** (0.5 * (1 - 2))
    traj = integrate(sys, GROWTH, {"s": 1.0, "p": p0}, 0.0, 0.1, 1e-2)
    assert traj.ic["c"] == pytest.approx(C0, rel=1e-12)


def _final_error(name, params, ic, T, h):
    sys = load_model(name)
    ref = integrate(sys, params, ic, 0.0, T, h / 8).states[-1]
    return float(np.max(np.abs(integrate(sys, params, ic, 0.0, T, h).states[-1] - ref)))


@pytest.mark.parametrize("name,params,ic,T", CONVERGENCE, ids=[c[0] for c in CONVERGENCE])
def test_rk4_convergence_order(name, params, ic, T):
    hs = [1e-2, 5e-3, 2.5e-3]
    errs = [_final_error(name, params, ic, T, h) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 3.7 <= slope <= 4.3, (errs, slope)


def test_lotka_volterra_drift_falls_sixteenfold():
    sys = load_model("lotka_volterra")
    I1 = expected_integrals("lotka_volterra")["I1"]
    d = [drift(integrate(sys, {"m": -1}, {"q": 1.0, "p": 0.5}, 0.0, 2.0, h), I1, sys).absolute
         for h in (2e-2, 1e-2)]
    assert 12 < d[0] / d[1] < 20


def test_mechanical_I4_drift():
    sys = load_model("mechanical")
    traj = integrate(sys, {}, {"q1": 0.3, "q2": -0.7, "p1": 1.1, "p2": 0.2}, 0.0, 10.0, 1e-4)
    assert drift(traj, expected_integrals("mechanical")["I4"], sys).relative < 1e-8


def test_constant_has_zero_drift():
    sys = load_model("harmonic")
    traj = integrate(sys, {}, {"q": 1.0, "p": 0.0}, 0.0, 1.0, 1e-2)
    d = drift(traj, parse_expr("7"), sys)
    assert d.relative == 0.0 and d.absolute == 0.0


def test_zero_initial_value_reports_absolute_drift():
    sys = load_model("mechanical")
    traj = integrate(sys, {}, {"q1": 1.0, "q2": 1.0, "p1": 0.0, "p2": 1.0}, 0.0, 1.0, 1e-3)
    d = drift(traj, expected_integrals("mechanical")["I2"], sys)
    assert d.initial == 0.0 and d.absolute < 1e-12


def test_duffing_witness_drifts():
    sys = load_model("duffing_vdp")
    traj = integrate(sys, {"gamma": 7}, {"q": 0.5, "p": 0.5}, 0.0, 10.0, 1e-3)
    d = drift(traj, expected_integrals("duffing_vdp")["I2"], sys)
    assert d.relative > 1e-3 and not d.validity_satisfied


def test_time_reversal_mechanical():
    sys = load_model("mechanical")
    ic = {"q1": 1.0, "q2": 1.0, "p1": 0.0, "p2": 1.0}
    fwd = integrate(sys, {}, ic, 0.0, 10.0, 1e-4)
    back = integrate(sys, {}, fwd.state(len(fwd) - 1), 10.0, 0.0, 1e-4)
    end = back.state(len(back) - 1)
    for k, v in ic.items():
        assert abs(end[k] - v) <= 1e-6 * max(1.0, abs(v))
    assert back.times[-1] == pytest.approx(0.0, abs=1e-12)


def test_blow_up_raises_non_finite():
    sys = parse_model("model blow\npair (q, p)\nH = p*q^2\n")
    with pytest.raises(NonFinite) as err:
        integrate(sys, {}, {"q": 1.0, "p": 0.0}, 0.0, 2.0, 1e-3)
    assert err.value.step > 900


def test_bad_arguments():
    sys = load_model("harmonic")
    with pytest.raises(ValueError):
        integrate(sys, {}, {"q": 1.0, "p": 0.0}, 0.0, 1.0, -1e-3)
    with pytest.raises(ValueError):
        integrate(sys, {}, {"q": 1.0}, 0.0, 1.0, 1e-3)
    with pytest.raises(ValueError):
        integrate(parse_model("model k\nparam w\npair (q, p)\nH = w*p^2\n"), {}, {"q": 1.0, "p": 1.0}, 0.0, 1.0, 1e-3)


def test_csv_export():
    sys = load_model("harmonic")
    traj = integrate(sys, {}, {"q": 1.0, "p": 0.0}, 0.0, 0.1, 1e-2)
    rows = list(csv.reader(io.StringIO(traj.to_csv())))
    assert rows[0] == ["t", "q", "p"]
    assert len(rows) == len(traj) + 1
    assert float(rows[5][1]) == traj.states[4, 0]


def test_growth_closed_form_residual():
    sys = load_model("growth_env")
    table = _table(sys, ("s0", "c0"))
    cf = {k: parse_expr(v, table) for k, v in CASES["growth_env"].closed_forms[0].solution.items()}
    ts = np.linspace(0, 5, 50)
    assert solution_residual(sys, cf, {**GROWTH, "s0": 1.0, "c0": C0}, ts) < 1e-10
    assert solution_residual(sys, cf, {**GROWTH, "s0": 1.0, "c0": 2 * C0}, ts) > 1e-6


def test_constant_solution_residual():
    sys = parse_model("model free\npair (q, p)\nH = p^2/2\n")
    assert solution_residual(sys, {"q": parse_expr("1"), "p": parse_expr("0")}, {}, [0.0, 1.0, 2.0]) == 0.0


def test_lotka_volterra_closed_form_residual():
    sys = load_model("lotka_volterra")
    table = _table(sys, ("alpha1", "alpha2"))
    cf = {k: parse_expr(v, table) for k, v in CASES["lotka_volterra"].closed_forms[0].solution.items()}
    env = {"a": 1, "m": -1, "b": 0.5, "n": 0.3, "alpha1": -0.5, "alpha2": 1.0}
    assert solution_residual(sys, cf, env, np.linspace(0, 5, 50)) < 1e-10


def test_transversality():
    sys = load_model("growth_env")
    table = _table(sys, ("s0", "c0"))
    path = {k: parse_expr(CASES["growth_env"].closed_forms[0].solution[k], table) for k in ("s", "c")}
    e = parse_expr("exp(-rho*t)*p*s", sys.symbols)
    bad_params = {"rho": 0.01, "m": 1, "sigma": 0.5, "phi": 1}
    assert growth_criterion(bad_params) < 0
    fixed = {k: substitute(v, {"s0": 1.0, "c0": C0}) for k, v in path.items()}
    good = transversality_limit(sys, e, GROWTH, 200.0, fixed)
    assert good.decaying and good.criterion_holds is True
    with pytest.raises(ValueError):
        transversality_limit(sys, e, GROWTH, 200.0, path)
    rep = transversality_limit(sys, e, bad_params, 200.0, {k: substitute(v, {"s0": 1.0, "c0": 1.0})
                                                           for k, v in path.items()})
    assert not rep.decaying and rep.criterion_holds is False


def test_transversality_of_zero():
    sys = load_model("harmonic")
    rep = transversality_limit(sys, parse_expr("0"), {}, 10.0, ic={"q": 1.0, "p": 0.0})
    assert rep.decaying and rep.criterion is None


def test_evaluate_along_needs_bound_symbols():
    sys = load_model("harmonic")
    traj = integrate(sys, {}, {"q": 1.0, "p": 0.0}, 0.0, 0.1, 1e-2)
    with pytest.raises(ValueError):
        evaluate_along(sys, traj, parse_expr("q*zeta"))
