import io
import logging
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mrptick import ExponentialLaw, GammaLaw, MixtureLaw, MrpModel, ReturnChainSpec, macroscopic_variance
from mrptick.laws import EmpiricalKernelLaw, SaturationError
from mrptick.model import UnsupportedCaseError
from mrptick.simulate import (
    ORDINARY,
    InitMode,
    PricePath,
    SemiMarkovState,
    anderson_darling_normal,
    generator_apply,
    jump_intensities,
    path_rng,
    scaling_experiment,
    semigroup_check,
    simulate_batch,
    simulate_jumps,
    simulate_path,
    stationary_delay_sample,
    terminal_prices,
    write_paths_csv,
)
from oracles import mc_mean_stderr

from conftest import ALPHA, MINUS, PLUS


@dataclass(frozen=True)
class UnitStepLaw(ExponentialLaw):
    """Every sojourn lasts exactly 1/rate."""

    def sample(self, rng, size=None):
        return np.full(size, 1.0 / self.rate) if size is not None else 1.0 / self.rate


def _csv(paths):
    buf = io.StringIO()
    write_paths_csv(paths, buf)
    return buf.getvalue()


def test_horizon_must_be_positive():
    model = MrpModel.symmetric(0.0, ExponentialLaw(1.0))
    for h in (0.0, -1.0, math.inf):
        with pytest.raises(ValueError):
            simulate_path(model, h, rng=np.random.default_rng(0))


def test_jump_on_horizon_is_included():
    model = MrpModel.symmetric(0.2, UnitStepLaw(1.0))
    path = simulate_path(model, 5.0, init=ORDINARY, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(path.jump_times, [1.0, 2.0, 3.0, 4.0, 5.0])
    path = simulate_path(model, 4.999, init=ORDINARY, rng=np.random.default_rng(1))
    assert path.n_jumps == 4


def test_all_jumps_within_horizon(fitted_model):
    path = simulate_path(fitted_model, 1e6, rng=np.random.default_rng(2))
    assert path.jump_times[-1] <= 1e6
    assert np.all(np.diff(path.jump_times) >= 0)
    np.testing.assert_allclose(np.cumsum(path.sojourns), path.jump_times, rtol=1e-12)


def test_near_perfect_alternation():
    model = MrpModel.symmetric(-0.999, ExponentialLaw(1.0))
    n = 100_000
    path = simulate_jumps(model, n, np.random.default_rng(3))
    alt = np.mean(path.marks[1:] != path.marks[:-1])
    sigma = math.sqrt(0.999 * 0.001 / (n - 1))
    assert alt >= 0.999 - 3 * sigma


def test_poisson_counts_for_exponential_uncorrelated():
    rate, horizon, n = 2.0, 25.0, 10_000
    model = MrpModel.symmetric(0.0, ExponentialLaw(rate))
    counts = np.array([p.n_jumps for p in simulate_batch(model, horizon, n_paths=n, seed=4)], dtype=float)
    lam = rate * horizon
    m, se = mc_mean_stderr(counts)
    assert abs(m - lam) < 3 * se
    v, se_v = mc_mean_stderr((counts - counts.mean()) ** 2)
    assert abs(v - lam) < 3 * se_v


@pytest.fixture(scope="module")
def fitted_jumps(fitted_model):
    return simulate_jumps(fitted_model, 1_000_000, np.random.default_rng(5), init=ORDINARY)


def test_sojourns_by_sign_pass_ks(fitted_jumps):
    j = fitted_jumps.marks
    prev = np.concatenate(([fitted_jumps.initial_mark], j[:-1]))
    same = (prev > 0) == (j > 0)
    s = fitted_jumps.sojourns
    assert stats.kstest(s[same], GammaLaw(*PLUS).cdf).pvalue > 0.01
    assert stats.kstest(s[~same], GammaLaw(*MINUS).cdf).pvalue > 0.01


def test_pooled_sojourns_follow_mixture(fitted_model, fitted_jumps):
    assert stats.kstest(fitted_jumps.sojourns, fitted_model.mixture_law.cdf).pvalue > 0.01


def test_sign_autocorrelation_of_marks(fitted_jumps):
    j = fitted_jumps.marks.astype(float)
    n = j.size
    rho = np.mean(j[1:] * j[:-1])
    assert abs(rho - ALPHA) < 3 / math.sqrt(n)


def test_size_frequencies():
    p = (0.7, 0.2, 0.1)
    model = MrpModel.symmetric(0.3, ExponentialLaw(1.0), size_probs=p)
    n = 200_000
    sizes = np.abs(simulate_jumps(model, n, np.random.default_rng(6)).marks)
    for k, pk in enumerate(p, start=1):
        freq = np.mean(sizes == k)
        assert abs(freq - pk) < 3 * math.sqrt(pk * (1 - pk) / n)


@given(st.integers(0, 2**31), st.integers(-50, 50))
@settings(max_examples=30, deadline=None)
def test_price_reconstruction(seed, p0):
    model = MrpModel.symmetric(-0.4, GammaLaw(0.5, 1.0), size_probs=(0.6, 0.4))
    rng = np.random.default_rng(seed)
    path = simulate_path(model, 50.0, p0, rng=rng)
    probes = np.concatenate((rng.uniform(0, 50, 20), path.jump_times[:5], [0.0, 50.0]))
    for t in probes:
        assert path.price_at(t) == p0 + int(path.marks[path.jump_times <= t].sum())
    assert path.terminal_price == path.price_at(50.0)


def test_price_path_validation():
    with pytest.raises(ValueError):
        PricePath(np.array([1.0, 0.5]), np.array([1, -1]))
    with pytest.raises(ValueError):
        PricePath(np.array([1.0, 2.0]), np.array([1, 0]))


def test_delay_of_exponential_is_exponential():
    model = MrpModel.symmetric(0.1, ExponentialLaw(3.0))
    x = stationary_delay_sample(model, np.random.default_rng(7), 100_000)
    assert stats.kstest(x, ExponentialLaw(3.0).cdf).pvalue > 0.01


def test_delay_mean_gamma_two():
    model = MrpModel.symmetric(0.1, GammaLaw(2.0, 1.0))
    m, se = mc_mean_stderr(stationary_delay_sample(model, np.random.default_rng(8), 1_000_000))
    assert abs(m - 1.5) < 3 * se


def test_delay_mean_fitted_mixture(fitted_h_model):
    law = fitted_h_model.kernel(0, 0)
    m, se = mc_mean_stderr(stationary_delay_sample(fitted_h_model, np.random.default_rng(9), 1_000_000))
    assert abs(m - law.second_moment / (2 * law.mean)) < 3 * se


def test_delay_of_uniform_has_triangular_density():
    s = (np.arange(2000) + 0.5) / 2000
    model = MrpModel.symmetric(0.0, EmpiricalKernelLaw(s, 1e-3))
    x = stationary_delay_sample(model, np.random.default_rng(10), 20_000)
    # density 2(1 - t) on [0, 1]
    assert stats.kstest(x, lambda t: np.clip(2 * t - t * t, 0, 1)).pvalue > 0.01


def test_delay_needs_mark_independent_kernels(fitted_model):
    with pytest.raises(UnsupportedCaseError):
        stationary_delay_sample(fitted_model, np.random.default_rng(0))


def test_stationary_init_falls_back_with_warning(fitted_model, caplog):
    with caplog.at_level(logging.WARNING, logger="mrptick.simulate"):
        path = simulate_path(fitted_model, 1e4, rng=np.random.default_rng(0))
    assert not path.delayed
    assert "ordinary" in caplog.text


def test_stationary_start_on_h_model_is_delayed(fitted_h_model):
    path = simulate_path(fitted_h_model, 1e5, rng=np.random.default_rng(0))
    assert path.delayed
    assert path.kernel_sojourns().size == path.n_jumps - 1


def test_fixed_initial_mark():
    model = MrpModel.symmetric(-0.999, ExponentialLaw(1.0), size_probs=(0.5, 0.5))
    path = simulate_jumps(model, 10, np.random.default_rng(0), init=InitMode.parse("fixed:-2"))
    assert path.initial_mark == -2
    assert path.marks[0] > 0
    with pytest.raises(ValueError):
        simulate_jumps(model, 10, np.random.default_rng(0), init=InitMode.parse("fixed:+3"))


def test_init_mode_parse_round_trip():
    for text in ("stationary", "ordinary", "fixed:+1", "fixed:-3"):
        assert str(InitMode.parse(text)) == text
    with pytest.raises(ValueError):
        InitMode.parse("warm")


def test_batch_of_one_is_substream_zero(fitted_model):
    (batch,) = simulate_batch(fitted_model, 1e5, p0=3, n_paths=1, seed=42)
    single = simulate_path(fitted_model, 1e5, 3, rng=path_rng(42, 0))
    np.testing.assert_array_equal(batch.jump_times, single.jump_times)
    np.testing.assert_array_equal(batch.marks, single.marks)


def test_batch_is_deterministic_and_schedule_independent(fitted_model):
    a = _csv(simulate_batch(fitted_model, 2e4, n_paths=8, seed=7))
    b = _csv(simulate_batch(fitted_model, 2e4, n_paths=8, seed=7))
    c = _csv(simulate_batch(fitted_model, 2e4, n_paths=8, seed=7, threads=4))
    assert a == b == c
    assert a != _csv(simulate_batch(fitted_model, 2e4, n_paths=8, seed=8))


def test_terminal_variance_poisson_case():
    rate, horizon = 1.0, 200.0
    model = MrpModel.symmetric(0.0, ExponentialLaw(rate))
    P = terminal_prices(model, horizon, 10_000, seed=12).astype(float)
    assert P.var(ddof=1) / (macroscopic_variance(model) * horizon) == pytest.approx(1.0, abs=0.05)


def test_scaling_rows_and_normality():
    model = MrpModel.symmetric(-0.5, GammaLaw(2.0, 0.5))
    rows = scaling_experiment(model, [100.0, 1000.0], 2000, seed=3)
    assert [r.horizon for r in rows] == [100.0, 1000.0]
    assert rows[-1].ratio == pytest.approx(1.0, abs=0.08)
    assert rows[-1].ad_statistic < rows[-1].ad_critical_1pct
    with pytest.raises(ValueError):
        scaling_experiment(model, [10.0, 5.0], 10, seed=0)


def test_anderson_darling_against_scipy():
    x = np.random.default_rng(0).normal(size=500)
    a2, crit, p = anderson_darling_normal(x)
    assert a2 == pytest.approx(stats.anderson(x).statistic)
    assert 0.01 < p <= 1.0
    a2, crit, p = anderson_darling_normal(np.random.default_rng(0).exponential(size=500))
    assert a2 > crit and p < 0.01


# ---------------------------------------------------------------- generator


def phi_price(p, i, s):
    return p


def phi_const(p, i, s):
    return np.full(np.shape(p), 2.5) if np.ndim(p) else 2.5


def phi_sq(p, i, s):
    return np.asarray(p, dtype=float) ** 2 if np.ndim(p) else float(p) ** 2


def phi_mixed(p, i, s):
    return np.sin(0.3 * np.asarray(p, dtype=float)) * (1 + 0.1 * np.sign(i)) * np.exp(-0.2 * np.asarray(s))


def test_generator_kills_constants(fitted_model):
    assert generator_apply(fitted_model, phi_const, SemiMarkovState(3, 1, 50.0)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [-0.875, 0.0, 0.4])
@pytest.mark.parametrize("mark", [1, -1])
def test_generator_on_price_exponential(alpha, mark):
    rate = 2.0
    model = MrpModel.symmetric(alpha, ExponentialLaw(rate))
    for s in (0.0, 0.3, 4.0):
        val = generator_apply(model, phi_price, SemiMarkovState(0, mark, s))
        assert val == pytest.approx(rate * alpha * mark, abs=1e-12)


def test_price_is_martingale_without_correlation():
    model = MrpModel.symmetric(0.0, GammaLaw(0.7, 3.0), size_probs=(0.5, 0.5))
    assert generator_apply(model, phi_price, SemiMarkovState(5, -2, 1.0)) == pytest.approx(0.0, abs=1e-12)


@given(st.sampled_from([1, -1, 2, -2]), st.floats(1e-3, 3000.0), st.integers(-20, 20))
@settings(max_examples=60, deadline=None)
def test_symmetric_and_general_generators_agree(mark, s, p):
    model = MrpModel.symmetric(ALPHA, GammaLaw(*PLUS), GammaLaw(*MINUS), size_probs=(0.8, 0.2))
    state = SemiMarkovState(p, mark, s)
    a = generator_apply(model, phi_mixed, state, form="symmetric")
    b = generator_apply(model, phi_mixed, state, form="general")
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


def test_intensities_split_total_hazard(fitted_h_model):
    law = fitted_h_model.kernel(0, 0)
    h = jump_intensities(fitted_h_model, 1, 200.0)
    assert h.sum() == pytest.approx(law.hazard(200.0), rel=1e-12)
    np.testing.assert_allclose(h / h.sum(), fitted_h_model.transition_matrix[0], rtol=1e-12)


def test_generator_saturation():
    model = MrpModel.symmetric(0.0, GammaLaw(2.0, 1.0))
    with pytest.raises(SaturationError):
        generator_apply(model, phi_price, SemiMarkovState(0, 1, 1e5))


def test_generator_with_exact_derivative():
    def phi(p, i, s):
        return p + s * s

    phi.ds = lambda p, i, s: 2 * s
    model = MrpModel.symmetric(0.0, ExponentialLaw(1.0))
    # 2s from the drift in s, then jumps to p +- 1 reset s: 0.5 (1 - s^2) + 0.5 (-1 - s^2)
    assert generator_apply(model, phi, SemiMarkovState(0, 1, 1.5)) == pytest.approx(3.0 - 2.25, abs=1e-12)


# ---------------------------------------------------------------- semigroup


def test_semigroup_constant():
    model = MrpModel.symmetric(-0.5, GammaLaw(2.0, 1.0))
    r = semigroup_check(model, phi_const, SemiMarkovState(0, 1, 0.0), n_mc=1000)
    assert (r.lhs, r.rhs) == (0.0, 0.0)
    assert r.passed


def test_semigroup_exponential_price():
    model = MrpModel.symmetric(ALPHA, ExponentialLaw(1.0))
    r = semigroup_check(model, phi_price, SemiMarkovState(0, 1, 0.0), n_mc=10**6, seed=1)
    assert r.rhs == pytest.approx(ALPHA, abs=1e-12)
    assert r.passed, r


def test_semigroup_gamma_square_from_fresh_jump():
    model = MrpModel.symmetric(-0.5, GammaLaw(2.0, 1.0), GammaLaw(3.0, 0.5))
    r = semigroup_check(model, phi_sq, SemiMarkovState(2, -1, 0.0), n_mc=10**6, seed=2)
    assert r.passed, r


@pytest.mark.parametrize("phi", [phi_price, phi_sq, phi_mixed], ids=lambda f: f.__name__)
def test_semigroup_gamma_mid_sojourn(phi):
    model = MrpModel.symmetric(-0.5, GammaLaw(2.0, 1.0), GammaLaw(3.0, 0.5), size_probs=(0.7, 0.3))
    r = semigroup_check(model, phi, SemiMarkovState(1, 2, 1.2), n_mc=10**6, seed=3)
    assert r.passed, r
