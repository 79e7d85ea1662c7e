import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import gammainc

from mrptick.convolution import AccuracyError, ConvolutionGrid, GridFunction, GridSpec, convolution_power
from mrptick.laws import ExponentialLaw, GammaLaw, WeibullLaw
from oracles import erlang2_cdf


def _spec(law, per_mean=200, horizon=60):
    return GridSpec(dt=law.mean / per_mean, t_max=max(horizon * law.mean, 40 * law.scale if hasattr(law, "scale") else 0))


def test_zeroth_power_is_one():
    g = convolution_power(GammaLaw(0.5, 1.0), 0, GridSpec(0.01, 5.0))
    np.testing.assert_array_equal(g.values, 1.0)


def test_first_power_is_cdf():
    law = WeibullLaw(1.7, 2.0)
    g = convolution_power(law, 1, GridSpec(0.01, 10.0))
    np.testing.assert_allclose(g.values, law.cdf(g.t_grid), atol=1e-14)


def test_exponential_second_power_is_erlang():
    law = ExponentialLaw(1.5)
    g = convolution_power(law, 2, GridSpec(law.mean / 200, 30 * law.mean))
    np.testing.assert_allclose(g.values, erlang2_cdf(1.5, g.t_grid), atol=1e-6)


@pytest.mark.parametrize("beta", [0.07, 0.28, 1.0, 2.0])
def test_gamma_reproductive_property(beta):
    law = GammaLaw(beta, 1.0)
    grid = ConvolutionGrid(law, _spec(law))
    worst = 0.0
    for n, state in grid.powers():
        worst = max(worst, np.max(np.abs(state[2] - gammainc(n * beta, grid.tu))))
        if n == 30:
            break
    assert worst < 1e-5


@pytest.mark.parametrize("law", [WeibullLaw(1.7, 1.0), WeibullLaw(0.6, 1.0), GammaLaw(0.28, 1.0)], ids=str)
def test_next_power_matches_direct_quadrature(law):
    spec = GridSpec(law.mean / 200, 20.0)
    g2 = convolution_power(law, 2, spec)
    g3 = convolution_power(law, 3, spec)
    for t in (0.3, 1.0, 2.5, 6.0):
        direct2, _ = integrate.quad(lambda u: law.cdf(t - u) * law.pdf(u), 0, t, limit=400)
        direct3, _ = integrate.quad(lambda u: g2(t - u) * law.pdf(u), 0, t, limit=400)
        assert g2(t) == pytest.approx(direct2, abs=1e-5)
        assert g3(t) == pytest.approx(direct3, abs=1e-5)


@given(st.floats(0.1, 5.0), st.integers(1, 8))
@settings(max_examples=20, deadline=None)
def test_powers_start_at_zero_and_are_monotone(beta, n):
    law = GammaLaw(beta, 1.0)
    g = convolution_power(law, n, GridSpec(law.mean / 50, 30 * law.mean))
    assert g.values[0] == 0.0
    assert np.all(np.diff(g.values) >= -1e-8)
    assert np.all((g.values >= 0) & (g.values <= 1))


def test_coarse_grid_self_check():
    law = WeibullLaw(3.0, 1.0)
    with pytest.raises(AccuracyError, match="too coarse"):
        convolution_power(law, 3, GridSpec(0.5, 10.0), check=True, tol=1e-5)
    convolution_power(law, 3, GridSpec(law.mean / 200, 10.0), check=True, tol=1e-5)


def test_negative_power_rejected():
    with pytest.raises(ValueError):
        convolution_power(ExponentialLaw(1.0), -1, GridSpec(0.1, 1.0))


def test_grid_function_validation_and_csv():
    g = GridFunction(np.linspace(0, 1, 5), np.arange(5.0))
    assert g.dt == 0.25
    assert g.to_csv().splitlines()[0] == "t,value"
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 0.1, 0.5]), np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(np.linspace(0, 1, 3), np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0)
