"""Sojourn-time laws: Gamma, Weibull, Exponential, Gaussian-kernel empirical.

Every law exposes ``pdf``, ``cdf``, ``sf``, ``hazard``, ``partial_mean``
(``int_0^t u dF(u)``), ``mean``, ``variance`` and vectorised ``sample``.
``partial_mean`` is what the product-integration convolution scheme and the
stationary-delay cdf are built on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special as sc
from scipy.special import ndtr, ndtri

_CUT = 9.0
_BUDGET = 4_000_000
_SQRT2PI = math.sqrt(2.0 * math.pi)


class SaturationError(ArithmeticError):
    """Raised when a hazard is requested where the survival function is zero."""


def _as_time(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("time argument must be nonnegative")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


class RenewalLaw:
    """Base class; subclasses implement the ``_pdf``/``_cdf``/... hooks."""

    family = "abstract"

    def pdf(self, t):
        t = _as_time(t)
        return _out(self._pdf(t), t)

    def cdf(self, t):
        t = _as_time(t)
        return _out(np.clip(self._cdf(t), 0.0, 1.0), t)

    def sf(self, t):
        t = _as_time(t)
        return _out(np.clip(self._sf(t), 0.0, 1.0), t)

    def hazard(self, t):
        """f(t) / (1 - F(t))."""
        t = _as_time(t)
        surv = np.asarray(self._sf(t))
        if np.any(surv <= 0):
            bad = np.atleast_1d(t)[np.atleast_1d(surv) <= 0][0]
            raise SaturationError(f"survival function is zero at t={bad!r}")
        return _out(self._hazard(t, surv), t)

    def _hazard(self, t, surv):
        return self._pdf(t) / surv

    def _sf(self, t):
        return 1.0 - self._cdf(t)

    def partial_mean(self, t):
        """int_0^t u dF(u)."""
        t = _as_time(t)
        return _out(self._partial_mean(t), t)

    @property
    def second_moment(self):
        return self.variance + self.mean**2

    def isf(self, q):
        """Inverse survival function, vectorised bisection unless overridden."""
        q = np.asarray(q, dtype=float)
        lo = np.zeros_like(q)
        hi = np.full_like(q, max(self.mean, 1e-300))
        for _ in range(200):
            short = self._sf(hi) > q
            if not short.any():
                break
            hi = np.where(short, 2.0 * hi, hi)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            above = self._sf(mid) > q
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= 1e-14 * hi):
                break
        return _out(0.5 * (lo + hi), q)

    def sample(self, rng, size=None):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class GammaLaw(RenewalLaw):
    shape: float
    scale: float
    family = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"gamma shape and scale must be positive, got {self}")

    def _pdf(self, t):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            x = t / self.scale
            logf = (self.shape - 1.0) * np.log(x) - x - sc.gammaln(self.shape) - math.log(self.scale)
            out = np.exp(logf)
        if self.shape == 1.0:
            out = np.where(t == 0, 1.0 / self.scale, out)
        elif self.shape > 1.0:
            out = np.where(t == 0, 0.0, out)
        return out

    def _cdf(self, t):
        return sc.gammainc(self.shape, t / self.scale)

    def _sf(self, t):
        # gammaincc is slow for small shapes; the complement is exact enough away from the tail
        x = t / self.scale
        p = sc.gammainc(self.shape, x)
        tail = p > 0.9
        if np.ndim(p) == 0:
            return sc.gammaincc(self.shape, x) if tail else 1.0 - p
        out = 1.0 - p
        if tail.any():
            out[tail] = sc.gammaincc(self.shape, x[tail])
        return out

    def _hazard(self, t, surv):
        # ratio in log space keeps the far tail finite
        with np.errstate(divide="ignore"):
            x = t / self.scale
            logf = (self.shape - 1.0) * np.log(x) - x - sc.gammaln(self.shape) - math.log(self.scale)
            return np.exp(logf - np.log(surv))

    def _partial_mean(self, t):
        return self.shape * self.scale * sc.gammainc(self.shape + 1.0, t / self.scale)

    def isf(self, q):
        return self.scale * sc.gammainccinv(self.shape, q)

    @property
    def mean(self):
        return self.shape * self.scale

    @property
    def variance(self):
        return self.shape * self.scale**2

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)

    def to_dict(self):
        return {"family": "gamma", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class WeibullLaw(RenewalLaw):
    """Standard Weibull, F(t) = 1 - exp(-(t/scale)^shape)."""

    shape: float
    scale: float
    family = "weibull"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"weibull shape and scale must be positive, got {self}")

    def _pdf(self, t):
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            x = t / lam
            out = (k / lam) * x ** (k - 1.0) * np.exp(-(x**k))
        if k == 1.0:
            out = np.where(t == 0, 1.0 / lam, out)
        elif k > 1.0:
            out = np.where(t == 0, 0.0, out)
        return out

    def _cdf(self, t):
        return -np.expm1(-((t / self.scale) ** self.shape))

    def _sf(self, t):
        return np.exp(-((t / self.scale) ** self.shape))

    def _hazard(self, t, surv):
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore"):
            return (k / lam) * (t / lam) ** (k - 1.0)

    def isf(self, q):
        with np.errstate(divide="ignore"):
            return self.scale * (-np.log(q)) ** (1.0 / self.shape)

    def _partial_mean(self, t):
        a = 1.0 + 1.0 / self.shape
        return self.mean * sc.gammainc(a, (t / self.scale) ** self.shape)

    @property
    def mean(self):
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    @property
    def variance(self):
        g1 = math.gamma(1.0 + 1.0 / self.shape)
        g2 = math.gamma(1.0 + 2.0 / self.shape)
        return self.scale**2 * (g2 - g1 * g1)

    def sample(self, rng, size=None):
        return self.scale * rng.weibull(self.shape, size)

    def to_dict(self):
        return {"family": "weibull", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class ExponentialLaw(RenewalLaw):
    rate: float
    family = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    def _pdf(self, t):
        return self.rate * np.exp(-self.rate * t)

    def _cdf(self, t):
        return -np.expm1(-self.rate * t)

    def _sf(self, t):
        return np.exp(-self.rate * t)

    def _hazard(self, t, surv):
        return np.full_like(t, self.rate, dtype=float)

    def isf(self, q):
        with np.errstate(divide="ignore"):
            return -np.log(q) / self.rate

    def _partial_mean(self, t):
        x = self.rate * t
        return (-np.expm1(-x) - x * np.exp(-x)) / self.rate

    @property
    def mean(self):
        return 1.0 / self.rate

    @property
    def variance(self):
        return 1.0 / self.rate**2

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def to_dict(self):
        return {"family": "exponential", "rate": self.rate}


@dataclass(frozen=True, eq=False)
class EmpiricalKernelLaw(RenewalLaw):
    """Gaussian kernel mixture on the sample, truncated to [0, inf) and renormalised."""

    samples: np.ndarray
    bandwidth: float
    family = "empirical"
    _chunk: int = field(default=2048, repr=False)

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if s.size == 0 or np.any(s <= 0):
            raise ValueError("empirical law needs a nonempty sample of positive values")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "samples", s)
        pos_mass = ndtr(s / self.bandwidth)
        object.__setattr__(self, "_pos_mass", pos_mass)
        object.__setattr__(self, "_norm", pos_mass.mean())

    def _kernel_sum(self, t, fn, left=None, right=None):
        """mean over samples of fn(z, s), z = (t - s)/b.

        Samples more than ``_CUT`` bandwidths below t contribute ``left(s)``
        and those more than ``_CUT`` above contribute ``right(s)`` (the limits
        of fn; zero when omitted), so only a window of samples around each
        chunk of t is evaluated.
        """
        s, b = self.samples, self.bandwidth
        flat = np.atleast_1d(np.asarray(t, dtype=float)).ravel()
        order = np.argsort(flat, kind="stable")
        ts = flat[order]
        out = np.empty_like(ts)
        zero = np.zeros(s.size + 1)
        cum_left = zero if left is None else np.concatenate(([0.0], np.cumsum(left(s))))
        cum_right = zero if right is None else np.concatenate(([0.0], np.cumsum(right(s))))
        i = 0
        while i < ts.size:
            r = min(self._chunk, ts.size - i)
            while True:
                lo = int(np.searchsorted(s, ts[i] - _CUT * b, side="left"))
                hi = int(np.searchsorted(s, ts[i + r - 1] + _CUT * b, side="right"))
                if r == 1 or r * (hi - lo) <= _BUDGET:
                    break
                r = max(1, _BUDGET // max(hi - lo, 1))
            sw = s[lo:hi]
            z = (ts[i : i + r, None] - sw[None, :]) / b
            inner = fn(z, sw).sum(axis=1) if sw.size else np.zeros(r)
            out[i : i + r] = (inner + cum_left[lo] + (cum_right[-1] - cum_right[hi])) / s.size
            i += r
        res = np.empty_like(out)
        res[order] = out
        return res.reshape(np.shape(t))

    def _pdf(self, t):
        dens = self._kernel_sum(t, lambda z, s: np.exp(-0.5 * z * z) / _SQRT2PI)
        return dens / (self.bandwidth * self._norm)

    def _cdf(self, t):
        base = 1.0 - self._norm  # mean of Phi(-s/b)
        return (self._kernel_sum(t, lambda z, s: ndtr(z), left=np.ones_like) - base) / self._norm

    def _sf(self, t):
        return self._kernel_sum(t, lambda z, s: ndtr(-z), right=np.ones_like) / self._norm

    def _partial_mean(self, t):
        b = self.bandwidth
        s = self.samples
        z0 = -s / b
        phi0 = np.exp(-0.5 * z0 * z0) / _SQRT2PI
        const = np.mean(-s * ndtr(z0) + b * phi0)

        def fn(z, sw):
            return sw * ndtr(z) - b * np.exp(-0.5 * z * z) / _SQRT2PI

        return (self._kernel_sum(t, fn, left=lambda x: x) + const) / self._norm

    @property
    def mean(self):
        b = self.bandwidth
        s = self.samples
        phi0 = np.exp(-0.5 * (s / b) ** 2) / _SQRT2PI
        return float(np.mean(s * self._pos_mass + b * phi0) / self._norm)

    @property
    def second_moment(self):
        b = self.bandwidth
        s = self.samples
        phi0 = np.exp(-0.5 * (s / b) ** 2) / _SQRT2PI
        return float(np.mean((s * s + b * b) * self._pos_mass + b * s * phi0) / self._norm)

    @property
    def variance(self):
        return self.second_moment - self.mean**2

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        w = self._pos_mass / self._pos_mass.sum()
        idx = rng.choice(self.samples.size, size=n, p=w)
        centre = self.samples[idx]
        lo = ndtr(-centre / self.bandwidth)
        u = lo + rng.random(n) * (1.0 - lo)
        x = centre + self.bandwidth * ndtri(u)
        x = np.maximum(x, np.finfo(float).tiny)
        return float(x[0]) if size is None else x.reshape(size)

    def to_dict(self):
        return {"family": "empirical", "samples": self.samples.tolist(), "bandwidth": self.bandwidth}

    def __eq__(self, other):
        if not isinstance(other, EmpiricalKernelLaw):
            return NotImplemented
        return self.bandwidth == other.bandwidth and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash(("empirical", self.bandwidth, self.samples.size, float(self.samples[0])))


@dataclass(frozen=True, eq=False)
class MixtureLaw(RenewalLaw):
    """Finite mixture; used for the sign-averaged sojourn law of a symmetric model."""

    weights: tuple
    components: tuple
    family = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.components),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", tuple(self.components))

    def _mix(self, name, t):
        return sum(w * getattr(c, name)(t) for w, c in zip(self.weights, self.components) if w > 0)

    def _pdf(self, t):
        return self._mix("_pdf", t)

    def _cdf(self, t):
        return self._mix("_cdf", t)

    def _sf(self, t):
        return self._mix("_sf", t)

    def _partial_mean(self, t):
        return self._mix("_partial_mean", t)

    @property
    def mean(self):
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def second_moment(self):
        return sum(w * c.second_moment for w, c in zip(self.weights, self.components))

    @property
    def variance(self):
        return self.second_moment - self.mean**2

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        which = rng.choice(len(self.components), size=n, p=np.asarray(self.weights))
        out = np.empty(n)
        for k, comp in enumerate(self.components):
            mask = which == k
            if mask.any():
                out[mask] = comp.sample(rng, int(mask.sum()))
        return float(out[0]) if size is None else out.reshape(size)

    def __eq__(self, other):
        if not isinstance(other, MixtureLaw):
            return NotImplemented
        return self.weights == other.weights and self.components == other.components

    def __hash__(self):
        return hash(("mixture", self.weights, self.components))

    def to_dict(self):
        return {
            "family": "mixture",
            "weights": list(self.weights),
            "components": [c.to_dict() for c in self.components],
        }


def law_from_dict(d, base_dir=None):
    """Inverse of ``to_dict``. ``sample_path`` is resolved against ``base_dir``."""
    family = d.get("family")
    if family == "gamma":
        return GammaLaw(float(d["shape"]), float(d["scale"]))
    if family == "weibull":
        return WeibullLaw(float(d["shape"]), float(d["scale"]))
    if family == "exponential":
        return ExponentialLaw(float(d["rate"]))
    if family == "empirical":
        if "samples" in d:
            samples = np.asarray(d["samples"], dtype=float)
        elif "sample_path" in d:
            path = Path(d["sample_path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            samples = np.loadtxt(path, delimiter=",", ndmin=1)
        else:
            raise ValueError("empirical law needs 'samples' or 'sample_path'")
        bw = d.get("bandwidth", "auto")
        if bw == "auto":
            from .estimate import silverman_bandwidth

            bw = silverman_bandwidth(samples)
        return EmpiricalKernelLaw(samples, float(bw))
    if family == "mixture":
        return MixtureLaw(tuple(d["weights"]), tuple(law_from_dict(c, base_dir) for c in d["components"]))
    raise ValueError(f"unknown law family {family!r}")
