"""Scalar special functions: log-gamma, digamma, trigamma, incomplete gamma.

The incomplete gamma uses the power series below ``a + 1`` and a modified
Lentz continued fraction above it. Vectorised production code calls
``scipy.special``; these scalar versions are the pinned reference.
"""

import math

import numpy as np

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000

# B_2k / (2k) for the digamma asymptotic series, k = 1..7
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_2k for the trigamma asymptotic series, k = 1..7
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _check_positive(name, x):
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"{name} must be positive and finite, got {x!r}")


def log_gamma(x):
    """Natural log of the Gamma function for x > 0."""
    _check_positive("x", x)
    return math.lgamma(x)


def gamma(x):
    _check_positive("x", x)
    return math.gamma(x)


def digamma(x):
    """Logarithmic derivative of the Gamma function, x > 0.

    Shifts the argument above 10 with psi(x) = psi(x + 1) - 1/x, then sums
    the asymptotic expansion.
    """
    _check_positive("x", x)
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_COEF:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x):
    """Derivative of the digamma function, x > 0."""
    _check_positive("x", x)
    acc = 0.0
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for b in _BERNOULLI:
        series += b * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


def _series_P(a, x):
    # regularised lower gamma by power series, valid (fast) for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _cf_Q(a, x):
    # regularised upper gamma by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_lower_gamma(a, x):
    """P(a, x) = gamma_x(a) / Gamma(a)."""
    _check_positive("a", a)
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x!r}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _series_P(a, x)
    return 1.0 - _cf_Q(a, x)


def regularized_upper_gamma(a, x):
    """Q(a, x) = 1 - P(a, x), computed without cancellation in the tail."""
    _check_positive("a", a)
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x!r}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _series_P(a, x)
    return _cf_Q(a, x)


def lower_incomplete_gamma(a, x):
    """Unregularised lower incomplete gamma, int_0^x s^(a-1) e^(-s) ds."""
    p = regularized_lower_gamma(a, x)
    if p == 0.0:
        return 0.0
    return math.exp(math.log(p) + math.lgamma(a))


regularized_lower_gamma_vec = np.vectorize(regularized_lower_gamma, otypes=[float])
