import pytest

from cmgems.flow import DEFAULT_LINE, LineParams, line_losses, line_resistance


def test_resistance_of_default_line():
    assert line_resistance(DEFAULT_LINE) == pytest.approx(0.172)


def test_losses_for_100_kw_over_a_minute():
    # independent arithmetic: R = rho l / S, I = P / V, E = I^2 R t
    r = 1.72e-8 * 1000 / 1e-4
    i = 100e3 / 4160
    expected = i * i * r * 60 / 3.6e6
    # the quoted four-digit figure 1.657e-3 is off by one in the last digit (exact: 1.6565e-3)
    assert expected == pytest.approx(1.657e-3, abs=1e-6)
    assert line_losses(DEFAULT_LINE, 100.0, 60.0) == pytest.approx(expected, rel=1e-12)


def test_losses_are_even_in_power_and_linear_in_time():
    assert line_losses(DEFAULT_LINE, -40.0, 60.0) == line_losses(DEFAULT_LINE, 40.0, 60.0)
    assert line_losses(DEFAULT_LINE, 40.0, 120.0) == pytest.approx(2 * line_losses(DEFAULT_LINE, 40.0, 60.0))
    assert line_losses(DEFAULT_LINE, 0.0, 60.0) == 0.0


@pytest.mark.parametrize("args", [(0, 1e-4, 1000, 4160), (1.7e-8, 0, 1000, 4160), (1.7e-8, 1e-4, -1, 4160),
                                  (1.7e-8, 1e-4, 1000, 0)])
def test_line_params_must_be_positive(args):
    with pytest.raises(ValueError):
        LineParams(*args)


def test_duration_must_be_positive():
    with pytest.raises(ValueError):
        line_losses(DEFAULT_LINE, 10.0, 0.0)
