import pytest
from hypothesis import given, strategies as st

from opamp_lab.units import format_value, parse_value


@pytest.mark.parametrize("token, value", [
    ("1m", 1e-3), ("1meg", 1e6), ("1MEG", 1e6), ("1M", 1e-3), ("0.9meg", 9e5),
    ("10p", 10e-12), ("155u", 155e-6), ("2.23m", 2.23e-3), ("288n", 288e-9),
    ("1e-12", 1e-12), (".25", 0.25), ("-3k", -3000.0), ("4f", 4e-15), ("2g", 2e9), ("1t", 1e12),
])
def test_parse(token, value):
    assert parse_value(token) == pytest.approx(value, rel=1e-15)


def test_milli_is_not_mega():
    assert parse_value("1m") == 1e-3
    assert parse_value("1meg") == 1e6
    assert parse_value("1meg") / parse_value("1m") == pytest.approx(1e9)


@pytest.mark.parametrize("token", ["", "abc", "1x", "1.2.3", "meg", "1e", "--1", "1 k", "inf", "nan"])
def test_parse_rejects(token):
    with pytest.raises(ValueError):
        parse_value(token)


@pytest.mark.parametrize("value, text", [(1e-12, "1p"), (9e5, "900k"), (10e-12, "10p"), (0.0, "0"),
                                         (1e6, "1meg"), (0.25, "250m"), (7.423e-9, "7.423n")])
def test_format(value, text):
    assert format_value(value) == text


@given(st.floats(min_value=-1e15, max_value=1e15, allow_nan=False, allow_infinity=False))
def test_format_round_trip(value):
    assert parse_value(format_value(value)) == value
