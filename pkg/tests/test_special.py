import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special as sc

from mrptick import special

mpmath = pytest.importorskip("mpmath")
mpmath.mp.dps = 40

EULER_GAMMA = 0.57721566490153286061


def test_gamma_pinned_values():
    assert special.gamma(1.0) == 1.0
    assert special.gamma(5.0) == pytest.approx(24.0, rel=1e-15)
    assert special.log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-15)


def test_digamma_at_one_is_minus_euler_constant():
    assert special.digamma(1.0) == pytest.approx(-EULER_GAMMA, rel=1e-13)


def test_trigamma_at_one():
    assert special.trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-13)


@pytest.mark.parametrize("x", [1e-3, 0.07132677, 0.276225, 0.5, 1.5, 3.0, 9.99, 10.0, 42.0, 1e4])
def test_digamma_trigamma_against_high_precision(x):
    assert special.digamma(x) == pytest.approx(float(mpmath.digamma(x)), rel=1e-12, abs=1e-14)
    assert special.trigamma(x) == pytest.approx(float(mpmath.polygamma(1, x)), rel=1e-12)


@pytest.mark.parametrize(
    "a,x",
    [(0.07132677, 1e-6), (0.07132677, 0.5), (0.276225, 2.0), (1.0, 3.0), (2.5, 0.1), (10.0, 9.0), (10.0, 40.0), (200.0, 180.0)],
)
def test_incomplete_gamma_against_high_precision(a, x):
    ref = float(mpmath.gammainc(a, 0, x, regularized=True))
    ref_q = float(mpmath.gammainc(a, x, mpmath.inf, regularized=True))
    assert special.regularized_lower_gamma(a, x) == pytest.approx(ref, rel=1e-12)
    assert special.regularized_upper_gamma(a, x) == pytest.approx(ref_q, rel=1e-11)
    if math.lgamma(a) < 700:
        assert special.lower_incomplete_gamma(a, x) == pytest.approx(float(mpmath.gammainc(a, 0, x)), rel=1e-12)
    else:
        with pytest.raises(OverflowError):
            special.lower_incomplete_gamma(a, x)


@given(st.floats(0.01, 50.0))
def test_lower_incomplete_gamma_shape_one_is_exponential_cdf(x):
    assert special.lower_incomplete_gamma(1.0, x) == pytest.approx(-math.expm1(-x), rel=1e-12)


@given(st.floats(1e-3, 100.0), st.floats(0.0, 200.0))
@settings(max_examples=200)
def test_lower_and_upper_sum_to_one_and_match_scipy(a, x):
    p = special.regularized_lower_gamma(a, x)
    q = special.regularized_upper_gamma(a, x)
    assert p + q == pytest.approx(1.0, abs=1e-12)
    assert p == pytest.approx(sc.gammainc(a, x), abs=1e-12)


@given(st.floats(1e-2, 1e3))
def test_digamma_recurrence(x):
    assert special.digamma(x + 1) == pytest.approx(special.digamma(x) + 1 / x, rel=1e-11, abs=1e-12)


@pytest.mark.parametrize("fn", [special.log_gamma, special.gamma, special.digamma, special.trigamma])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_nonpositive_arguments_rejected(fn, bad):
    with pytest.raises(ValueError):
        fn(bad)


def test_incomplete_gamma_domain_errors():
    with pytest.raises(ValueError):
        special.regularized_lower_gamma(0.0, 1.0)
    with pytest.raises(ValueError):
        special.regularized_lower_gamma(1.0, -1.0)
    assert special.regularized_lower_gamma(2.0, 0.0) == 0.0
    assert special.regularized_lower_gamma(2.0, math.inf) == 1.0


def test_vectorised_wrapper():
    out = special.regularized_lower_gamma_vec(2.0, np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(out, sc.gammainc(2.0, [0.0, 1.0, 2.0]), rtol=1e-13)
