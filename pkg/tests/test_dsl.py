import pytest

from partialham.casebook import builtin_models
from partialham.dsl import bundled_model_path, load_model, parse_model
from partialham.expr import ZERO, ParseError, parse_expr, simplify
from partialham.hamsys import ModelError


def test_load_bundled_lotka_volterra():
    sys = load_model(bundled_model_path("lotka_volterra"))
    assert simplify(sys.H - parse_expr("a*p*q - (b/2)*p^2*q", sys.symbols)) == ZERO
    assert sys.separation_vars == ("p",)
    assert sys.signs == {"b": 1, "n": 1}


def test_growth_control_relation():
    sys = load_model("growth_env")
    (ctl,) = sys.controls
    assert (ctl.var, ctl.momentum) == ("c", "p")
    assert simplify(ctl.relation - parse_expr("c^(-sigma)*s^(phi*(1-sigma))", sys.symbols)) == ZERO
    assert sys.separation_vars == ("c",)


def test_empty_pairs_is_a_semantic_error():
    with pytest.raises(ModelError):
        parse_model("model empty\nparam a\nH = a\n")


def test_parse_error_has_location():
    with pytest.raises(ParseError) as err:
        parse_model("model m\npair (q, p)\nH = p^2 +* q\n")
    assert (err.value.line, err.value.col) == (3, 10)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_model("/nonexistent/model.phm")


@pytest.mark.parametrize("sys", builtin_models() + [load_model("harmonic")], ids=lambda s: s.name)
def test_dsl_round_trip(sys):
    again = parse_model(sys.to_dsl())
    assert again == sys
    assert again.to_dsl() == sys.to_dsl()


def test_round_trip_with_assumption_and_negative_sign():
    text = "model z\nparam k < 0\nparam w = 3/2\npair (x, y)\nH = y^2/2 - k*x^2\nassume k + w = 0\n"
    sys = parse_model(text)
    assert sys.signs == {"k": -1}
    assert parse_model(sys.to_dsl()) == sys
