"""Mark chain and Markov-renewal model types.

Marks live in E = {+1, -1, +2, -2, ..., +m, -m} and are always indexed in that
order, so index ``2*(k-1)`` is mark ``+k`` and ``2*(k-1) + 1`` is mark ``-k``.
The sign chain has transition matrix

    [[(1 + a+)/2, (1 - a+)/2],
     [(1 - a-)/2, (1 + a-)/2]]

and the size of each jump is drawn i.i.d. from ``size_probs``, which gives the
block form q_ij = p_|j| * Qhat[sign i, sign j].
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .laws import MixtureLaw, RenewalLaw, law_from_dict

SYMMETRY_TOL = 1e-12


class UnsupportedCaseError(ValueError):
    """An operation was asked for a case its formula does not cover."""


class NumericalError(ArithmeticError):
    pass


def mark_values(m):
    """Mark values in canonical order (+1, -1, ..., +m, -m)."""
    return np.array([s * k for k in range(1, m + 1) for s in (1, -1)], dtype=int)


def mark_index(mark, m):
    mark = int(mark)
    if mark == 0 or abs(mark) > m:
        raise ValueError(f"mark {mark} outside E for m={m}")
    return 2 * (abs(mark) - 1) + (0 if mark > 0 else 1)


@dataclass(frozen=True)
class ReturnChainSpec:
    alpha_plus: float
    alpha_minus: float
    size_probs: tuple = (1.0,)

    def __post_init__(self):
        for name in ("alpha_plus", "alpha_minus"):
            a = getattr(self, name)
            if not (-1.0 <= a < 1.0):
                raise ValueError(f"{name} must lie in [-1, 1), got {a}")
        p = np.asarray(self.size_probs, dtype=float).ravel()
        if p.size < 1:
            raise ValueError("size_probs must be nonempty")
        if p.size == 1:
            if abs(p[0] - 1.0) > 1e-12:
                raise ValueError(f"size_probs must sum to 1, got {p.sum()}")
        elif np.any(p <= 0) or np.any(p >= 1):
            raise ValueError("size_probs entries must lie in (0, 1)")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"size_probs must sum to 1, got {p.sum()}")
        object.__setattr__(self, "size_probs", tuple(float(x) for x in p))

    @classmethod
    def symmetric(cls, alpha, size_probs=(1.0,)):
        return cls(alpha, alpha, size_probs)

    @property
    def m(self):
        return len(self.size_probs)

    @property
    def probs(self):
        return np.asarray(self.size_probs)

    @property
    def is_symmetric(self):
        return abs(self.alpha_plus - self.alpha_minus) <= SYMMETRY_TOL

    @property
    def alpha(self):
        if not self.is_symmetric:
            raise UnsupportedCaseError("alpha is only defined for a symmetric chain (alpha_plus == alpha_minus)")
        return self.alpha_plus

    def sign_matrix(self):
        ap, am = self.alpha_plus, self.alpha_minus
        return np.array([[(1 + ap) / 2, (1 - ap) / 2], [(1 - am) / 2, (1 + am) / 2]])

    def size_moments(self):
        """(E[xi], E[xi^2])."""
        k = np.arange(1, self.m + 1)
        p = self.probs
        return float(p @ k), float(p @ (k * k))


def build_transition_matrix(spec):
    """2m x 2m transition matrix of the mark chain in canonical order."""
    qhat = spec.sign_matrix()
    p = spec.probs
    # column block for size k is p_k * Qhat; rows repeat for every size
    block_row = np.hstack([pk * qhat for pk in p])
    Q = np.vstack([block_row] * spec.m)
    return Q


def invariant_law(Q, tol=1e-10):
    """Stationary distribution of an irreducible stochastic matrix.

    Direct least-squares solve of pi (Q - I) = 0 with sum(pi) = 1, falling back
    to power iteration when the residual is not small enough.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if Q.shape != (n, n) or np.any(Q < 0) or np.max(np.abs(Q.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("transition matrix must be square, nonnegative, with rows summing to 1")
    A = np.vstack([Q.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.max(np.abs(pi @ Q - pi))
    if resid < tol:
        return pi
    # lazy chain avoids periodicity issues in the power iteration
    P = 0.5 * (Q + np.eye(n))
    v = np.full(n, 1.0 / n)
    for _ in range(100_000):
        v_new = v @ P
        if np.max(np.abs(v_new - v)) < tol * 1e-3:
            v = v_new
            break
        v = v_new
    resid = np.max(np.abs(v @ Q - v))
    if not resid < tol:
        raise NumericalError(f"invariant law did not converge, residual {resid:.3e}")
    return v / v.sum()


def sign_autocorrelation(spec):
    """Lag-one correlation of the jump signs under the stationary law (= alpha)."""
    if not spec.is_symmetric:
        raise UnsupportedCaseError("the correlation identity holds only for a symmetric chain")
    return spec.alpha


@dataclass(frozen=True, eq=False)
class MrpModel:
    """Mark chain plus sojourn kernels.

    ``kernels`` is either a pair ``(F_plus, F_minus)`` (symmetric kernels,
    depending on sign(i*j) only) or a 2m x 2m nested tuple of laws indexed by
    canonical mark order.
    """

    chain: ReturnChainSpec
    kernels: tuple
    kind: str = "symmetric"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("symmetric", "full"):
            raise ValueError(f"kernel kind must be 'symmetric' or 'full', got {self.kind!r}")
        if self.kind == "symmetric":
            if len(self.kernels) != 2:
                raise ValueError("symmetric kernels must be a pair (F_plus, F_minus)")
            laws = list(self.kernels)
        else:
            n = 2 * self.chain.m
            if len(self.kernels) != n or any(len(row) != n for row in self.kernels):
                raise ValueError(f"full kernels must be a {n}x{n} array of laws")
            object.__setattr__(self, "kernels", tuple(tuple(r) for r in self.kernels))
            laws = [law for row in self.kernels for law in row]
        for law in laws:
            if not isinstance(law, RenewalLaw):
                raise TypeError(f"kernel entry {law!r} is not a RenewalLaw")
            if not math.isfinite(law.mean):
                raise ValueError("every sojourn law must have a finite mean")

    @classmethod
    def symmetric(cls, alpha, f_plus, f_minus=None, size_probs=(1.0,)):
        return cls(ReturnChainSpec.symmetric(alpha, size_probs), (f_plus, f_plus if f_minus is None else f_minus))

    @property
    def m(self):
        return self.chain.m

    @property
    def is_symmetric(self):
        return self.kind == "symmetric" and self.chain.is_symmetric

    @property
    def transition_matrix(self):
        if "Q" not in self._cache:
            self._cache["Q"] = build_transition_matrix(self.chain)
        return self._cache["Q"]

    @property
    def stationary(self):
        if "pi" not in self._cache:
            self._cache["pi"] = invariant_law(self.transition_matrix)
        return self._cache["pi"]

    def kernel(self, i_idx, j_idx):
        """Sojourn law for the transition between canonical indices i -> j."""
        if self.kind == "full":
            return self.kernels[i_idx][j_idx]
        same = (i_idx % 2) == (j_idx % 2)
        return self.kernels[0] if same else self.kernels[1]

    def kernel_matrix(self):
        n = 2 * self.m
        return [[self.kernel(i, j) for j in range(n)] for i in range(n)]

    @property
    def mean_sojourn(self):
        """Stationary mean sojourn sum_ij pi_i q_ij mean(F_ij)."""
        Q, pi = self.transition_matrix, self.stationary
        n = 2 * self.m
        mu = np.array([[self.kernel(i, j).mean for j in range(n)] for i in range(n)])
        return float(np.sum(pi[:, None] * Q * mu))

    @property
    def mixture_law(self):
        """F = (1+a)/2 F_plus + (1-a)/2 F_minus for symmetric models."""
        self._require_symmetric()
        a = self.chain.alpha
        fp, fm = self.kernels
        if fp == fm:
            return fp
        return MixtureLaw(((1 + a) / 2, (1 - a) / 2), (fp, fm))

    @property
    def marks_independent_of_sojourns(self):
        """True when every F_ij is the same law (the delayed-renewal setting)."""
        laws = {id(law) for row in self.kernel_matrix() for law in row}
        if len(laws) == 1:
            return True
        first = self.kernel(0, 0)
        return all(law == first for row in self.kernel_matrix() for law in row)

    def _require_symmetric(self):
        if not self.is_symmetric:
            raise UnsupportedCaseError("operation requires a symmetric model (alpha_plus == alpha_minus, sign kernels)")

    def to_dict(self):
        d = {
            "alpha_plus": self.chain.alpha_plus,
            "alpha_minus": self.chain.alpha_minus,
            "size_probs": list(self.chain.size_probs),
        }
        if self.kind == "symmetric":
            d["kernels"] = {"type": "symmetric", "plus": self.kernels[0].to_dict(), "minus": self.kernels[1].to_dict()}
        else:
            d["kernels"] = {"type": "full", "matrix": [[law.to_dict() for law in row] for row in self.kernels]}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def model_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def model_from_dict(d, base_dir=None):
    for key in ("alpha_plus", "alpha_minus", "size_probs", "kernels"):
        if key not in d:
            raise ValueError(f"model document is missing field {key!r}")
    chain = ReturnChainSpec(float(d["alpha_plus"]), float(d["alpha_minus"]), tuple(d["size_probs"]))
    k = d["kernels"]
    if k.get("type") == "symmetric":
        kernels = (law_from_dict(k["plus"], base_dir), law_from_dict(k["minus"], base_dir))
        return MrpModel(chain, kernels, "symmetric")
    if k.get("type") == "full":
        rows = tuple(tuple(law_from_dict(x, base_dir) for x in row) for row in k["matrix"])
        return MrpModel(chain, rows, "full")
    raise ValueError(f"unknown kernel type {k.get('type')!r}")


def load_model(path):
    path = Path(path)
    return model_from_dict(json.loads(path.read_text()), base_dir=path.parent)


def macroscopic_variance(model):
    """Closed-form variance rate of the Brownian scaling limit (symmetric case)."""
    model._require_symmetric()
    a = model.chain.alpha
    mu = model.mean_sojourn
    if not (math.isfinite(mu) and mu > 0):
        raise ValueError("mean sojourn must be finite and positive")
    e1, e2 = model.chain.size_moments()
    return (e2 - e1 * e1 + e1 * e1 * (1 + a) / (1 - a)) / mu


def macroscopic_variance_general(Q, pi, mean_sojourn):
    """Variance rate from the Poisson-equation route.

    b_i = sum_j q_ij j, g = (I - Q + Pi)^-1 b, H_ij = j + g_j - g_i and the
    rate is sum_ij pi_i q_ij H_ij^2 / mean_sojourn.
    """
    Q = np.asarray(Q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if not mean_sojourn > 0:
        raise ValueError("mean_sojourn must be positive")
    n = Q.shape[0]
    marks = mark_values(n // 2).astype(float)
    b = Q @ marks
    A = np.eye(n) - Q + np.outer(np.ones(n), pi)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"fundamental matrix is singular (condition {cond:.3e})")
    g = np.linalg.solve(A, b)
    H = marks[None, :] + g[None, :] - g[:, None]
    return float(np.sum(pi[:, None] * Q * H * H) / mean_sojourn)


def drift_constant(Q, pi, mean_sojourn):
    """Almost-sure limit of P_t / t."""
    Q = np.asarray(Q, dtype=float)
    marks = mark_values(Q.shape[0] // 2).astype(float)
    return float(np.sum(np.asarray(pi)[:, None] * Q * marks[None, :]) / mean_sojourn)


def expected_Ln_squared(spec, n):
    """E_pi[(J_1 + ... + J_n)^2] for a symmetric chain started at stationarity."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if not spec.is_symmetric:
        raise UnsupportedCaseError("closed form holds only for a symmetric chain")
    if n == 0:
        return 0.0
    a = spec.alpha
    e1, e2 = spec.size_moments()
    per_step = e2 - e1 * e1 + e1 * e1 * (1 + a) / (1 - a)
    # (1 - a^n) / (1 - a) written as a finite sum avoids cancellation near a = 1
    geom = sum(a**k for k in range(n)) if n < 64 else (1 - a**n) / (1 - a)
    return n * per_step - 2 * a / (1 - a) * geom * e1 * e1
