"""From tick data to a fitted model.

Conventions: a series of observations (t_0, P_0), (t_1, P_1), ... yields marks
J_k = P_k - P_{k-1} and sojourns S_k = t_k - t_{k-1}, k >= 1. A transition
(J_{k-1}, J_k) exists for k >= 2 and carries the sojourn S_k, so the first
sojourn (from the start of observation to the first jump) is never used.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .convolution import GridFunction
from .laws import EmpiricalKernelLaw, GammaLaw
from .model import MrpModel, NumericalError, ReturnChainSpec
from .special import digamma, trigamma

MIN_FIT_JUMPS = 50


class TickDataError(ValueError):
    """Malformed tick input; ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SampleSizeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TickSeries:
    """Observed prices with a change at every row after the first.

    ``exact_sojourns`` may carry durations finer than the timestamp
    resolution (simulated data); otherwise sojourns are timestamp differences.
    """

    times: np.ndarray
    prices: np.ndarray
    n_zero_dropped: int = 0
    exact_sojourns: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.prices, dtype=np.int64)
        if t.shape != p.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("times and prices must be nonempty 1-d arrays of equal length")
        if np.any(np.diff(p) == 0):
            raise ValueError("consecutive prices must differ")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "prices", p)
        if self.exact_sojourns is not None:
            s = np.asarray(self.exact_sojourns, dtype=float)
            if s.shape != (t.size - 1,):
                raise ValueError("exact_sojourns must have one entry per jump")
            object.__setattr__(self, "exact_sojourns", s)
        elif np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def from_path(cls, path):
        """Series of a simulated path, keeping its exact sojourns."""
        times = np.concatenate(([0.0], path.jump_times))
        prices = np.concatenate(([path.p0], path.prices))
        return cls(times, prices, 0, path.sojourns.copy())

    @property
    def marks(self):
        return np.diff(self.prices)

    @property
    def sojourns(self):
        return self.exact_sojourns if self.exact_sojourns is not None else np.diff(self.times)

    @property
    def n_jumps(self):
        return self.prices.size - 1

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        return float(self.times[-1])

    def price_at(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right") - 1
        out = self.prices[np.maximum(k, 0)]
        return int(out) if out.ndim == 0 else out

    def to_csv(self):
        lines = ["t,price"]
        lines += [f"{t!r},{p}" for t, p in zip(self.times.tolist(), self.prices.tolist())]
        return "\n".join(lines) + "\n"


def path_to_tick_csv(path):
    """Two-column ``t,price`` export of a simulated path (t=0 row first)."""
    return TickSeries(
        np.concatenate(([0.0], path.jump_times)), np.concatenate(([path.p0], path.prices)), 0, path.sojourns
    ).to_csv()


def _parse_price(text, line):
    try:
        v = float(text)
    except ValueError:
        raise TickDataError(f"cannot parse price {text!r}", line) from None
    if not math.isfinite(v) or v != int(v):
        raise TickDataError(f"price {text!r} is not an integer tick count", line)
    return int(v)


def ingest_ticks(source, m_max=None):
    """Read a ``time,price`` CSV (header optional) into a ``TickSeries``.

    ``source`` is a path or an open text stream. Rows repeating the previous
    price are dropped and counted.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return ingest_ticks(fh, m_max)
    times, prices = [], []
    dropped = 0
    reader = csv.reader(source)
    for line, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2:
            raise TickDataError("expected two columns (time, price)", line)
        a, b = row[0].strip(), row[1].strip()
        try:
            t = float(a)
        except ValueError:
            if line == 1 and not times:
                continue  # header
            raise TickDataError(f"cannot parse time {a!r}", line) from None
        if not math.isfinite(t):
            raise TickDataError(f"time {a!r} is not finite", line)
        p = _parse_price(b, line)
        if times:
            if t == times[-1]:
                raise TickDataError(f"duplicate timestamp {a}", line)
            if t < times[-1]:
                raise TickDataError(f"timestamp {a} goes backwards", line)
            if p == prices[-1]:
                dropped += 1
                continue
            if m_max is not None and abs(p - prices[-1]) > m_max:
                raise TickDataError(f"price jump {p - prices[-1]} exceeds m_max={m_max}", line)
        times.append(t)
        prices.append(p)
    if not times:
        raise TickDataError("no data rows")
    return TickSeries(np.array(times), np.array(prices, dtype=np.int64), dropped)


def _series_marks(series):
    return series.marks if hasattr(series, "prices") else np.asarray(series.marks)


def _series_sojourns(series):
    return series.sojourns if hasattr(series, "prices") else np.asarray(series.sojourns)


# ---------------------------------------------------------------- chain estimators


def estimate_alpha(series):
    """(alpha_hat, stderr) with alpha_hat = mean of sign(J_k) sign(J_{k-1}), stderr = 1/sqrt(n)."""
    s = np.sign(_series_marks(series))
    n = s.size - 1
    if n < 1:
        raise SampleSizeError("need at least two jumps to estimate alpha")
    return float(np.mean(s[1:] * s[:-1])), 1.0 / math.sqrt(n)


def estimate_size_probs(series, m=None):
    """(p_hat, stderr) from the empirical frequencies of |J_k|."""
    sizes = np.abs(_series_marks(series))
    if sizes.size == 0:
        raise SampleSizeError("empty series")
    top = int(sizes.max())
    m = top if m is None else int(m)
    if m < top:
        raise ValueError(f"m={m} is smaller than the largest observed jump {top}")
    p = np.bincount(sizes, minlength=m + 1)[1:] / sizes.size
    return p, np.sqrt(p * (1 - p) / sizes.size)


@dataclass(frozen=True, eq=False)
class SubsampleIndex:
    """Sojourns grouped by transition type.

    ``mode='pair'`` keys groups by (i, j); ``mode='sign'`` by sign(i j).
    ``n_from`` counts transitions out of each mark i.
    """

    mode: str
    groups: dict
    n_from: dict
    n_total: int

    def count(self, key):
        g = self.groups.get(key)
        return 0 if g is None else g.size

    @property
    def n_plus(self):
        return self._sign_count(1)

    @property
    def n_minus(self):
        return self._sign_count(-1)

    def _sign_count(self, sg):
        if self.mode == "sign":
            return self.count(sg)
        return sum(v.size for (i, j), v in self.groups.items() if np.sign(i * j) == sg)


def build_subsamples(series, mode="sign"):
    if mode not in ("pair", "sign"):
        raise ValueError(f"mode must be 'pair' or 'sign', got {mode!r}")
    marks = _series_marks(series)
    soj = _series_sojourns(series)
    if marks.size < 2:
        raise SampleSizeError("need at least two jumps to form transitions")
    prev, cur, s = marks[:-1], marks[1:], soj[1:]
    n_from = {int(i): int(c) for i, c in zip(*np.unique(prev, return_counts=True))}
    groups = {}
    if mode == "sign":
        prod = np.sign(prev * cur)
        for sg in (1, -1):
            groups[sg] = s[prod == sg]
    else:
        keys = np.stack([prev, cur], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(uniq.shape[0] + 1))
        for k, (i, j) in enumerate(uniq):
            groups[(int(i), int(j))] = s[order[bounds[k] : bounds[k + 1]]]
    return SubsampleIndex(mode, groups, n_from, int(cur.size))


# ---------------------------------------------------------------- Gamma fits


@dataclass(frozen=True)
class GammaFit:
    shape: float
    scale: float
    shape_stderr: float
    scale_stderr: float
    n: int
    method: str

    def law(self):
        return GammaLaw(self.shape, self.scale)


def _positive_sample(x, n_min):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < n_min:
        raise SampleSizeError(f"need at least {n_min} sojourns, got {x.size}")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("sojourns must be positive and finite")
    return x


def fit_gamma_mle(sojourns, lo=1e-6, hi=1e6, tol=1e-10, max_iter=200):
    """Solve ln(b) - digamma(b) = ln(mean) - mean(ln S) by bracketed Newton."""
    x = _positive_sample(sojourns, 10)
    n = x.size
    mean = float(x.mean())
    target = math.log(mean) - float(np.mean(np.log(x)))

    def score(b):
        return math.log(b) - digamma(b) - target

    s_lo, s_hi = score(lo), score(hi)
    if not (s_lo > 0 > s_hi):
        raise NumericalError(
            f"gamma MLE root not bracketed in [{lo:g}, {hi:g}]: score {s_lo:.3e} .. {s_hi:.3e} "
            f"(log-mean gap {target:.3e}; sample nearly constant?)"
        )
    # start from the closed-form approximation
    b = (3 - target + math.sqrt((target - 3) ** 2 + 24 * target)) / (12 * target) if target > 0 else 1.0
    b = min(max(b, lo), hi)
    for _ in range(max_iter):
        g = score(b)
        if abs(g) < tol:
            break
        if g > 0:
            lo = b
        else:
            hi = b
        step = b - g / (1.0 / b - trigamma(b))
        b = step if lo < step < hi else math.sqrt(lo * hi)
    else:
        raise NumericalError(f"gamma MLE did not converge; bracket [{lo:.6g}, {hi:.6g}], residual {score(b):.3e}")
    scale = mean / b
    # inverse Fisher information of (shape, scale)
    det = b * trigamma(b) - 1.0
    var_b = b / (n * det)
    var_s = scale * scale * trigamma(b) / (n * det)
    return GammaFit(b, scale, math.sqrt(var_b), math.sqrt(var_s), n, "mle")


def fit_gamma_moments(sojourns):
    """shape = n mean^2 / sum (S - mean)^2, 1/scale = n mean / sum (S - mean)^2."""
    x = _positive_sample(sojourns, 2)
    n = x.size
    mean = float(x.mean())
    d = x - mean
    ss = float(np.dot(d, d))
    if ss <= 0:
        raise ValueError("moment matching needs a positive sample variance")
    v = ss / n
    shape = mean * mean / v
    scale = v / mean
    # delta method from the sample central moments
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    var_mean, var_v, cov = v / n, max(m4 - v * v, 0.0) / n, m3 / n
    gb = (2 * mean / v, -mean * mean / v**2)
    gs = (-v / mean**2, 1 / mean)

    def quad(g):
        return g[0] ** 2 * var_mean + 2 * g[0] * g[1] * cov + g[1] ** 2 * var_v

    return GammaFit(shape, scale, math.sqrt(max(quad(gb), 0.0)), math.sqrt(max(quad(gs), 0.0)), n, "moments")


# ---------------------------------------------------------------- nonparametric


def silverman_bandwidth(sample):
    """0.9 min(sd, IQR/1.34) n^(-1/5)."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 2:
        raise SampleSizeError("bandwidth selection needs at least two points")
    sd = float(x.std(ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if spread <= 0:
        raise ValueError("bandwidth selection needs a nondegenerate sample")
    return 0.9 * spread * x.size ** (-0.2)


@dataclass(frozen=True, eq=False)
class StepDensity:
    """Histogram density on possibly unequal bins."""

    breaks: np.ndarray
    density: np.ndarray
    mass_beyond: float
    n: int

    @property
    def masses(self):
        return self.density * np.diff(self.breaks)

    def stderr(self):
        m = self.masses
        return np.sqrt(m * (1 - m) / self.n) / np.diff(self.breaks)


def histogram_density(sojourns, breaks):
    """f(t_r) = #{t_r <= S < t_(r+1)} / (n delta_r)."""
    x = np.asarray(sojourns, dtype=float).ravel()
    b = np.asarray(breaks, dtype=float)
    if b.size < 2:
        raise ValueError("need at least one bin")
    if b[0] != 0 or np.any(np.diff(b) <= 0):
        raise ValueError("breaks must start at 0 and increase")
    if x.size == 0:
        raise SampleSizeError("empty sample")
    idx = np.searchsorted(b, x, side="right") - 1
    inside = (idx >= 0) & (idx < b.size - 1)
    counts = np.bincount(idx[inside], minlength=b.size - 1)
    return StepDensity(b, counts / (x.size * np.diff(b)), float(1 - inside.mean()), x.size)


def _resolve_bandwidth(sample, bandwidth):
    return silverman_bandwidth(sample) if bandwidth == "auto" else float(bandwidth)


def _default_grid(sample, bandwidth, n_points=512):
    top = float(np.max(sample)) + 4.0 * bandwidth
    return np.linspace(0.0, top, n_points)


def kernel_density(sojourns, bandwidth="auto", grid=None):
    """Gaussian-kernel density truncated to t >= 0 and renormalised."""
    x = np.asarray(sojourns, dtype=float).ravel()
    if x.size < 1:
        raise SampleSizeError("empty sample")
    b = _resolve_bandwidth(x, bandwidth) if x.size >= 2 or bandwidth != "auto" else None
    if b is None:
        raise SampleSizeError("automatic bandwidth needs at least two points")
    t = _default_grid(x, b) if grid is None else np.asarray(grid, dtype=float)
    return GridFunction(t, EmpiricalKernelLaw(x, b).pdf(t))


def _kernel_sum(sample, b, t):
    """sum_k K_b(t - S_k) with the kernel truncated at 0, i.e. n * truncated density."""
    law = EmpiricalKernelLaw(sample, b)
    return law.pdf(t) * sample.size


@dataclass(frozen=True, eq=False)
class HazardEstimate:
    """h = (n_target / n_from) * lam on a common grid."""

    t_grid: np.ndarray
    hazard: np.ndarray  # h_ij(t), intensity of the target transition
    marked_hazard: np.ndarray  # lambda_ij(t)
    weight: float  # n_target / n_from
    bandwidth: float
    clipped: bool

    def as_grid_functions(self):
        return GridFunction(self.t_grid, self.hazard), GridFunction(self.t_grid, self.marked_hazard)


def kernel_hazard(subsamples: SubsampleIndex, target, bandwidth="auto", grid=None, n_points=256):
    """Kernel estimate of the jump intensity towards ``target``.

    ``target`` is a pair (i, j) for a pair index or a sign +1/-1 for a sign
    index. The denominator counts sojourns still running at t among all
    transitions out of i (pair) or among all transitions (sign). Grids beyond
    the 99th percentile of that pool are clipped.
    """
    sample = subsamples.groups.get(target)
    if sample is None or sample.size == 0:
        raise SampleSizeError(f"no sojourns for target {target!r}")
    if subsamples.mode == "pair":
        i = target[0]
        pool = np.concatenate([v for (a, _), v in subsamples.groups.items() if a == i])
    else:
        pool = np.concatenate(list(subsamples.groups.values()))
    pool = np.sort(pool)
    b = _resolve_bandwidth(pool if sample.size < 2 else sample, bandwidth)
    cap = float(np.percentile(pool, 99))
    t = np.linspace(0.0, cap, n_points) if grid is None else np.asarray(grid, dtype=float)
    clipped = bool(np.any(t > cap))
    if clipped:
        warnings.warn(f"hazard grid truncated at the 99th percentile {cap:.6g} of the sojourn pool", RuntimeWarning)
        t = t[t <= cap]
    at_risk = pool.size - np.searchsorted(pool, t, side="left")
    if np.any(at_risk <= 0):
        raise ValueError("hazard denominator vanishes on the requested grid")
    ksum = _kernel_sum(sample, b, t)
    hazard = ksum / at_risk
    weight = sample.size / pool.size
    # lambda = f_target / S_pool with f_target = ksum / n_target, S_pool = at_risk / n_pool
    marked = (ksum / sample.size) / (at_risk / pool.size)
    return HazardEstimate(t, hazard, marked, weight, b, clipped)


# ---------------------------------------------------------------- composite fit


@dataclass
class FitReport:
    alpha_hat: float
    alpha_stderr: float
    p_hat: list
    p_stderr: list
    n_jumps: int
    counts: dict
    sign_fits: dict
    pair_fits: dict
    diagnostics: dict
    estimator: str
    flags: list = field(default_factory=list)
    curves: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("curves")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def density_csv(self):
        return _curves_csv(self.curves.get("density"), ("t", "f_plus", "f_minus"))

    def hazard_csv(self):
        return _curves_csv(self.curves.get("hazard"), ("t", "lambda_plus", "lambda_minus"))


def _curves_csv(block, header):
    if block is None:
        return None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    t, a, b = block
    for row in zip(t.tolist(), a.tolist(), b.tolist()):
        w.writerow([repr(v) for v in row])
    return buf.getvalue()


def _fit_dict(fit):
    return {k: v for k, v in asdict(fit).items() if k != "method"}


def fit_model(series, estimator="mle", m=None, bandwidth="auto", curves=True, n_curve_points=256):
    """Symmetric model from alpha_hat, p_hat and per-sign sojourn fits.

    ``estimator``: mle | moments | nonparametric | both (both Gamma variants
    reported, MLE used for the model).
    """
    if estimator not in ("mle", "moments", "nonparametric", "both"):
        raise ValueError(f"unknown estimator {estimator!r}")
    n = series.n_jumps if hasattr(series, "n_jumps") else len(series.marks)
    if n < MIN_FIT_JUMPS:
        raise SampleSizeError(f"fit refused: {n} jumps, at least {MIN_FIT_JUMPS} required")
    a_hat, a_se = estimate_alpha(series)
    p_hat, p_se = estimate_size_probs(series, m)
    by_sign = build_subsamples(series, "sign")
    by_pair = build_subsamples(series, "pair")

    sign_fits, laws = {}, {}
    for sg, name in ((1, "plus"), (-1, "minus")):
        x = by_sign.groups[sg]
        entry = {"n": int(x.size)}
        if estimator in ("mle", "both", "nonparametric"):
            entry["mle"] = _fit_dict(fit_gamma_mle(x))
        if estimator in ("moments", "both"):
            entry["moments"] = _fit_dict(fit_gamma_moments(x))
        if estimator == "nonparametric":
            bw = _resolve_bandwidth(x, bandwidth)
            entry["bandwidth"] = bw
            laws[name] = EmpiricalKernelLaw(x, bw)
        else:
            key = "moments" if estimator == "moments" else "mle"
            laws[name] = GammaLaw(entry[key]["shape"], entry[key]["scale"])
        entry["ks_statistic"] = float(stats.kstest(x, laws[name].cdf).statistic)
        sign_fits[name] = entry

    pair_fits = {}
    for (i, j), x in sorted(by_pair.groups.items()):
        if x.size >= 10:
            try:
                pair_fits[f"{i:+d},{j:+d}"] = {"n": int(x.size), "mle": _fit_dict(fit_gamma_mle(x))}
            except (NumericalError, ValueError) as exc:
                pair_fits[f"{i:+d},{j:+d}"] = {"n": int(x.size), "error": str(exc)}

    a_model = float(np.clip(a_hat, -1.0, 1.0 - 1e-12))
    probs = tuple(float(v) for v in p_hat)
    model = MrpModel(ReturnChainSpec(a_model, a_model, probs), (laws["plus"], laws["minus"]), "symmetric")

    flags = []
    mle_p, mle_m = sign_fits["plus"].get("mle"), sign_fits["minus"].get("mle")
    if (
        abs(a_hat) < 3 * a_se
        and mle_p
        and mle_m
        and abs(mle_p["shape"] - 1) < 3 * mle_p["shape_stderr"]
        and abs(mle_m["shape"] - 1) < 3 * mle_m["shape_stderr"]
    ):
        flags.append("symmetric_exponential")

    report = FitReport(
        alpha_hat=a_hat,
        alpha_stderr=a_se,
        p_hat=p_hat.tolist(),
        p_stderr=p_se.tolist(),
        n_jumps=int(n),
        counts={"n_plus": by_sign.n_plus, "n_minus": by_sign.n_minus, "n_from": {str(k): v for k, v in by_pair.n_from.items()}},
        sign_fits=sign_fits,
        pair_fits=pair_fits,
        diagnostics={"model_hash": model.model_hash},
        estimator=estimator,
        flags=flags,
    )
    if curves:
        plus, minus = by_sign.groups[1], by_sign.groups[-1]
        pooled = np.concatenate([plus, minus])
        grid = np.linspace(0.0, float(np.percentile(pooled, 99)), n_curve_points)
        fp = kernel_density(plus, bandwidth, grid).values
        fm = kernel_density(minus, bandwidth, grid).values
        hp = kernel_hazard(by_sign, 1, bandwidth, grid).marked_hazard
        hm = kernel_hazard(by_sign, -1, bandwidth, grid).marked_hazard
        report.curves = {"density": (grid, fp, fm), "hazard": (grid, hp, hm)}
    return model, report
