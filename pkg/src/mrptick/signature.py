"""Mean signature plot: analytic, closed-form, Monte Carlo and empirical.

The analytic curve needs G_alpha(t) = E[alpha^{N_t}] for the stationary
delayed renewal process. With I_n(t) = int_0^t F^{*n} = t F^{*n}(t) - M_n(t),
where M_n is the partial first moment of F^{*n},

    G_alpha(t) = 1 - lam (1 - alpha) t + lam (1 - alpha)^2 sum_{n>=1} alpha^{n-1} I_n(t),

which is the usual integral form multiplied out so nothing is divided by
alpha; at alpha = 0 it reduces to 1 - D(t), D the stationary-delay cdf.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sc

from .convolution import AccuracyError, ConvolutionGrid, GridSpec
from .laws import ExponentialLaw, GammaLaw
from .model import UnsupportedCaseError, macroscopic_variance
from .simulate import STATIONARY, path_rng, simulate_path

TRUNCATION_TOL = 1e-10
MAX_POWERS = 200_000


@dataclass(frozen=True, eq=False)
class GAlphaTable:
    """G_alpha on a (nonuniform) grid; ``at`` interpolates or evaluates exactly."""

    t_grid: np.ndarray
    g_values: np.ndarray
    alpha: float
    truncation_n: int
    dt: float
    method: str = "numeric"
    _exact: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.g_values[0] != 1.0 or self.t_grid[0] != 0.0:
            raise AssertionError("G_alpha(0) must equal 1")

    def at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t > self.t_grid[-1] * (1 + 1e-12)):
            raise ValueError("t beyond the tabulated range")
        out = self._exact(t) if self._exact is not None else np.interp(t, self.t_grid, self.g_values)
        return float(out) if out.ndim == 0 else out


def _gamma_params(law):
    if isinstance(law, GammaLaw):
        return law.shape, law.scale
    if isinstance(law, ExponentialLaw):
        return 1.0, 1.0 / law.rate
    return None


def _g_closed_form(shape, scale, alpha, t, t_max):
    """Gamma F: F^{*n}(t) = P(n shape, t/scale), M_n(t) = n shape scale P(n shape + 1, t/scale)."""
    lam = 1.0 / (shape * scale)
    t = np.asarray(t, dtype=float)
    x = t / scale
    acc = np.zeros_like(t)
    n = 0
    weight = 1.0  # alpha^{n-1}
    while True:
        n += 1
        a = n * shape
        I_n = t * sc.gammainc(a, x) - a * scale * sc.gammainc(a + 1.0, x)
        acc = acc + weight * I_n
        I_top = t_max * sc.gammainc(a, t_max / scale) - a * scale * sc.gammainc(a + 1.0, t_max / scale)
        if abs(weight) * lam * (1 - alpha) ** 2 * I_top < TRUNCATION_TOL and abs(alpha) ** n * sc.gammainc(
            a, t_max / scale
        ) < TRUNCATION_TOL:
            break
        if n >= MAX_POWERS:
            raise AccuracyError("G_alpha series did not reach the truncation tolerance")
        weight *= alpha
    g = 1.0 - lam * (1 - alpha) * t + lam * (1 - alpha) ** 2 * acc
    return np.where(t == 0, 1.0, g), n


def _g_numeric(law, alpha, spec):
    grid = ConvolutionGrid(law, spec)
    lam = 1.0 / law.mean
    t = None
    acc = None
    weight = 1.0
    for n, (Gf, Mf, Gu, Mu) in grid.powers():
        t, G = grid.merged(Gf, Gu)
        _, M = grid.merged(Mf, Mu)
        I_n = t * G - M
        acc = weight * I_n if acc is None else acc + weight * I_n
        if abs(weight) * lam * (1 - alpha) ** 2 * abs(I_n[-1]) < TRUNCATION_TOL and abs(alpha) ** n * G[-1] < TRUNCATION_TOL:
            break
        if n >= MAX_POWERS:
            raise AccuracyError("G_alpha series did not reach the truncation tolerance")
        weight *= alpha
    g = 1.0 - lam * (1 - alpha) * t + lam * (1 - alpha) ** 2 * acc
    g[0] = 1.0
    return t, g, n


def compute_g_alpha(law, alpha, grid_spec=None, t_max=None, method="auto", tol=1e-5, max_refine=4, refine=True):
    """G_alpha(t) for the stationary delayed renewal process with sojourn law ``law``.

    ``method``: ``closed_form`` (Gamma and exponential laws, exact at any t),
    ``numeric`` (convolution powers on the grid, refined until halving the
    step moves G by less than ``tol``) or ``auto``. ``refine=False`` skips
    the refinement loop and uses ``grid_spec`` as given.
    """
    if not (-1.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [-1, 1), got {alpha}")
    mu = law.mean
    if not (math.isfinite(mu) and mu > 0):
        raise ValueError("sojourn law must have a finite positive mean")
    if grid_spec is None:
        grid_spec = GridSpec(dt=mu / 50.0, t_max=t_max if t_max is not None else 200.0 * mu)
    gp = _gamma_params(law)
    if method == "auto":
        method = "closed_form" if gp is not None else "numeric"
    if method == "closed_form":
        if gp is None:
            raise UnsupportedCaseError(f"no closed form for the {law.family} family")
        shape, scale = gp
        t = np.linspace(0.0, grid_spec.t_max, int(math.ceil(grid_spec.t_max / grid_spec.dt)) + 1)
        g, n = _g_closed_form(shape, scale, alpha, t, grid_spec.t_max)

        def exact(x, shape=shape, scale=scale):
            return _g_closed_form(shape, scale, alpha, x, grid_spec.t_max)[0]

        return GAlphaTable(t, g, alpha, n, grid_spec.dt, "closed_form", exact)
    if method != "numeric":
        raise ValueError(f"unknown method {method!r}")

    spec = grid_spec
    t, g, n = _g_numeric(law, alpha, spec)
    for _ in range(max_refine if refine else 0):
        spec2 = spec.refined()
        t2, g2, n2 = _g_numeric(law, alpha, spec2)
        change = np.max(np.abs(np.interp(t, t2, g2) - g))
        spec, t, g, n = spec2, t2, g2, n2
        if change < tol:
            break
    else:
        if refine:
            raise AccuracyError(f"G_alpha grid refinement did not settle below {tol:g} (last change {change:.2e})")
    if np.any(np.abs(g) > 1.0 + 1e-6):
        raise AccuracyError("G_alpha left [-1, 1]; grid too coarse")
    return GAlphaTable(t, np.clip(g, -1.0, 1.0), alpha, n, spec.dt, "numeric")


@dataclass(frozen=True, eq=False)
class SignatureCurve:
    tau_grid: np.ndarray
    values: np.ndarray
    provenance: str
    model_hash: str = ""
    stderr: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in ("analytic", "empirical", "monte_carlo"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        tau = np.asarray(self.tau_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if tau.shape != v.shape or np.any(tau <= 0):
            raise ValueError("tau grid must be positive and match the values")
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "values", v)
        se = np.full_like(v, np.nan) if self.stderr is None else np.asarray(self.stderr, dtype=float)
        object.__setattr__(self, "stderr", se)

    def to_csv(self):
        lines = ["tau,v,stderr,provenance"]
        for t, v, s in zip(self.tau_grid.tolist(), self.values.tolist(), self.stderr.tolist()):
            lines.append(f"{t!r},{v!r},{s!r},{self.provenance}")
        return "\n".join(lines) + "\n"

    def sidecar(self):
        doc = {"provenance": self.provenance, "model_hash": self.model_hash, **self.params}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def default_tau_grid(mean_sojourn, n=40):
    return np.geomspace(mean_sojourn / 100.0, 100.0 * mean_sojourn, n)


def _require_h(model):
    if not model.is_symmetric or not model.marks_independent_of_sojourns:
        raise UnsupportedCaseError(
            "assumption (H) needed: symmetric mark chain and one sojourn law independent of the marks"
        )


def signature_limits(model):
    """(V(0+), V(inf)) = (lam E[xi^2], sigma_inf^2)."""
    _require_h(model)
    _, e2 = model.chain.size_moments()
    return e2 / model.mean_sojourn, macroscopic_variance(model)


def signature_from_g(g_of_tau, tau, alpha, mean_sojourn, size_moments):
    """Plug G_alpha(tau) into the signature formula."""
    e1, e2 = size_moments
    lam = 1.0 / mean_sojourn
    var = e2 - e1 * e1
    tau = np.asarray(tau, dtype=float)
    sigma2 = lam * (var + e1 * e1 * (1 + alpha) / (1 - alpha))
    return sigma2 - (2 * alpha / (1 - alpha)) * (1 - g_of_tau) / ((1 - alpha) * tau) * e1 * e1


def poisson_signature(rate, alpha, tau, size_probs=(1.0,)):
    """Closed form for exponential sojourns, G_alpha(t) = exp(-rate (1 - alpha) t)."""
    p = np.asarray(size_probs, dtype=float)
    k = np.arange(1, p.size + 1)
    e1, e2 = float(p @ k), float(p @ k**2)
    tau = np.asarray(tau, dtype=float)
    one_minus_g = -np.expm1(-rate * (1 - alpha) * tau)
    return rate * (e2 - e1 * e1 + e1 * e1 * (1 + alpha) / (1 - alpha)) - (
        2 * alpha / (1 - alpha)
    ) * one_minus_g / ((1 - alpha) * tau) * e1 * e1


def mean_signature_analytic(model, tau_grid=None, grid_spec=None, method="auto", g_table=None, tol=1e-4, max_refine=4):
    """V(tau) under assumption (H).

    On the numeric route the grid step is halved until the curve moves by
    less than ``tol`` relative at every tau.
    """
    _require_h(model)
    mu = model.mean_sojourn
    tau = default_tau_grid(mu) if tau_grid is None else np.asarray(tau_grid, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    a = model.chain.alpha
    moments = model.chain.size_moments()
    params = {"alpha": a, "mean_sojourn": mu}
    if a == 0.0:
        v = np.full(tau.shape, macroscopic_variance(model))
        return SignatureCurve(tau, v, "analytic", model.model_hash, params=params)
    law = model.kernel(0, 0)
    if g_table is None:
        spec = grid_spec or GridSpec(dt=mu / 50.0, t_max=float(tau.max()) * (1 + 1e-9))
        g_table = compute_g_alpha(law, a, spec, method=method, refine=False)
        v = signature_from_g(g_table.at(tau), tau, a, mu, moments)
        if g_table.method == "numeric":
            for _ in range(max_refine):
                spec = spec.refined()
                finer = compute_g_alpha(law, a, spec, method="numeric", refine=False)
                v2 = signature_from_g(finer.at(tau), tau, a, mu, moments)
                change = float(np.max(np.abs(v2 - v) / np.abs(v2)))
                g_table, v = finer, v2
                if change < tol:
                    break
            else:
                raise AccuracyError(f"signature grid refinement did not settle below {tol:g} (last change {change:.2e})")
    else:
        v = signature_from_g(g_table.at(tau), tau, a, mu, moments)
    params.update({"g_method": g_table.method, "truncation_n": g_table.truncation_n, "grid_dt": g_table.dt})
    return SignatureCurve(tau, v, "analytic", model.model_hash, params=params)


def _realized(path_price_at, start, duration, tau):
    """Per-tau average of squared increments over floor(duration/tau) blocks, divided by tau."""
    out = np.empty(tau.size)
    for k, tk in enumerate(tau):
        nb = int(math.floor(duration / tk * (1 + 1e-12)))
        if nb < 1:
            raise ValueError(f"tau={tk} exceeds the observation window {duration}")
        p = path_price_at(start + tk * np.arange(nb + 1))
        d = np.diff(p).astype(float)
        out[k] = np.mean(d * d) / tk
    return out


def mean_signature_monte_carlo(model, tau_grid, horizon, n_paths, seed=0, threads=1):
    """Average realized signature over stationary paths, standard errors across paths."""
    _require_h(model)
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(tau > horizon):
        raise ValueError("every tau must be at most the horizon")
    if n_paths < 2:
        raise ValueError("at least two paths are needed for a standard error")

    def one(k):
        path = simulate_path(model, horizon, 0, STATIONARY, path_rng(seed, k))
        return _realized(path.price_at, 0.0, horizon, tau)

    if threads <= 1:
        rows = [one(k) for k in range(n_paths)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(n_paths)))
    rows = np.asarray(rows)
    params = {"horizon": horizon, "n_paths": n_paths, "seed": seed}
    return SignatureCurve(
        tau, rows.mean(axis=0), "monte_carlo", model.model_hash, rows.std(axis=0, ddof=1) / math.sqrt(n_paths), params
    )


def empirical_signature(series, tau_grid, start=None, end=None):
    """Realized signature of one observed path.

    ``series`` needs ``price_at`` and either ``start``/``end`` attributes or
    explicit bounds; a ``PricePath`` uses [0, horizon].
    """
    tau = np.asarray(tau_grid, dtype=float)
    if start is None:
        start = getattr(series, "start", 0.0)
    if end is None:
        end = getattr(series, "end", None) or getattr(series, "horizon", None)
    if end is None:
        raise ValueError("observation window end is unknown")
    duration = end - start
    if duration < 10.0 * tau.max():
        raise ValueError(f"series spans {duration}, shorter than 10 x max tau = {10 * tau.max()}")
    v = _realized(series.price_at, start, duration, tau)
    return SignatureCurve(tau, v, "empirical", params={"start": start, "end": end})
