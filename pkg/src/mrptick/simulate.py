"""Exact path simulation, stationary-delay sampling and generator checks.

Marks are drawn through the sign chain: the sign process is a two-state
Markov chain with flip probability (1 - alpha_sign)/2, so sign runs are
geometric and a whole block of marks is generated without a Python loop.
Sizes |J_k| are i.i.d. with law p, independent of the signs.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .laws import SaturationError
from .model import MrpModel, UnsupportedCaseError, mark_index, mark_values

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PricePath:
    """Piecewise-constant price path.

    ``sojourns`` holds the exact inter-jump durations. ``jump_times`` is their
    running sum and may repeat a value when a sojourn falls below the float
    resolution of the clock, so it is only guaranteed nondecreasing. When
    ``delayed`` is true the first sojourn is a stationary delay, not a draw
    from a kernel.
    """

    jump_times: np.ndarray
    marks: np.ndarray
    p0: int = 0
    sojourns: np.ndarray | None = None
    initial_mark: int = 0
    delayed: bool = False
    horizon: float | None = None

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        j = np.asarray(self.marks, dtype=np.int64)
        if t.shape != j.shape or t.ndim != 1:
            raise ValueError("jump_times and marks must be 1-d arrays of equal length")
        if np.any(j == 0):
            raise ValueError("marks must be nonzero")
        if t.size and (np.any(np.diff(t) < 0) or t[0] < 0):
            raise ValueError("jump_times must be nonnegative and nondecreasing")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "marks", j)
        if self.sojourns is None:
            object.__setattr__(self, "sojourns", np.diff(t, prepend=0.0))
        else:
            object.__setattr__(self, "sojourns", np.asarray(self.sojourns, dtype=float))

    @property
    def n_jumps(self):
        return self.marks.size

    @property
    def prices(self):
        """Price right after each jump."""
        return self.p0 + np.cumsum(self.marks)

    def price_at(self, t):
        """p0 + sum of marks with T_n <= t."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.jump_times, t, side="right")
        cum = np.concatenate(([0], np.cumsum(self.marks)))
        out = self.p0 + cum[k]
        return int(out) if out.ndim == 0 else out

    @property
    def terminal_price(self):
        return int(self.p0 + self.marks.sum())

    def kernel_sojourns(self):
        """Sojourns that are genuine kernel draws (drops a stationary delay)."""
        return self.sojourns[1:] if self.delayed else self.sojourns


@dataclass(frozen=True)
class SemiMarkovState:
    price: int
    last_mark: int
    elapsed: float = 0.0

    def __post_init__(self):
        if not self.elapsed >= 0:
            raise ValueError(f"elapsed must be nonnegative, got {self.elapsed}")
        if self.last_mark == 0:
            raise ValueError("last_mark must be a nonzero mark")


@dataclass(frozen=True)
class InitMode:
    """How the path starts.

    ``stationary``: J_0 ~ pi, first sojourn from the stationary delay law
    (needs mark-independent kernels, otherwise falls back to ``ordinary``).
    ``ordinary``: J_0 ~ pi, first sojourn a kernel draw.
    ``fixed``: J_0 = ``mark``, first sojourn a kernel draw.
    """

    kind: str = "stationary"
    mark: int | None = None

    def __post_init__(self):
        if self.kind not in ("stationary", "ordinary", "fixed"):
            raise ValueError(f"unknown init mode {self.kind!r}")
        if self.kind == "fixed" and not self.mark:
            raise ValueError("fixed init mode needs a nonzero mark")

    @classmethod
    def parse(cls, text):
        """'stationary', 'ordinary' or 'fixed:<mark>'."""
        if isinstance(text, cls):
            return text
        if text.startswith("fixed:"):
            return cls("fixed", int(text.split(":", 1)[1]))
        return cls(text)

    def __str__(self):
        return f"fixed:{self.mark:+d}" if self.kind == "fixed" else self.kind


STATIONARY = InitMode("stationary")
ORDINARY = InitMode("ordinary")


def path_rng(seed, k):
    """Generator for path k; a pure function of (seed, k)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


# ---------------------------------------------------------------- marks


def _flip_probs(model):
    c = model.chain
    return (1.0 - c.alpha_plus) / 2.0, (1.0 - c.alpha_minus) / 2.0


def _sign_block(model, sign0, n, rng):
    """Next n signs of the chain started from sign0."""
    pf_plus, pf_minus = _flip_probs(model)
    out = []
    total = 0
    sign = sign0
    while total < n + 1:
        # runs alternate sign; expected number needed is about n * flip rate
        k = max(8, int(1.2 * (n + 1 - total) * max(pf_plus, pf_minus)) + 8)
        first = sign
        lens_a = rng.geometric(pf_plus if first > 0 else pf_minus, size=k)
        lens_b = rng.geometric(pf_minus if first > 0 else pf_plus, size=k)
        lens = np.empty(2 * k, dtype=np.int64)
        lens[0::2] = lens_a
        lens[1::2] = lens_b
        signs = np.empty(2 * k, dtype=np.int64)
        signs[0::2] = first
        signs[1::2] = -first
        out.append(np.repeat(signs, lens))
        total += int(lens.sum())
        sign = first  # an even number of runs ends with -first; next run starts at first
    # the first run includes sign0 itself
    return np.concatenate(out)[1 : n + 1]


def _mark_block(model, mark0, n, rng):
    signs = _sign_block(model, 1 if mark0 > 0 else -1, n, rng)
    m = model.m
    if m == 1:
        return signs
    sizes = rng.choice(np.arange(1, m + 1), size=n, p=np.asarray(model.chain.probs))
    return signs * sizes


def _mark_idx(marks):
    marks = np.asarray(marks)
    return 2 * (np.abs(marks) - 1) + (marks < 0)


def _sojourn_block(model, prev, marks, rng):
    """S_k ~ F_{J_{k-1} J_k} for consecutive pairs (prev, marks[0]), ..."""
    before = np.empty_like(marks)
    before[0] = prev
    before[1:] = marks[:-1]
    out = np.empty(marks.size)
    if model.marks_independent_of_sojourns:
        return model.kernel(0, 0).sample(rng, marks.size)
    if model.kind == "symmetric":
        same = (before > 0) == (marks > 0)
        for law, mask in ((model.kernels[0], same), (model.kernels[1], ~same)):
            cnt = int(mask.sum())
            if cnt:
                out[mask] = law.sample(rng, cnt)
        return out
    bi, ai = _mark_idx(before), _mark_idx(marks)
    n = 2 * model.m
    code = bi * n + ai
    for c in np.unique(code):
        mask = code == c
        out[mask] = model.kernel(int(c) // n, int(c) % n).sample(rng, int(mask.sum()))
    return out


def _initial_mark(model, init, rng):
    if init.kind == "fixed":
        mark_index(init.mark, model.m)  # validates
        return int(init.mark)
    vals = mark_values(model.m)
    return int(vals[rng.choice(len(vals), p=model.stationary)])


def _resolve_init(model, init):
    init = InitMode.parse(init)
    if init.kind == "stationary" and not model.marks_independent_of_sojourns:
        log.warning("stationary start needs mark-independent kernels; using ordinary start instead")
        return ORDINARY
    return init


def simulate_jumps(model: MrpModel, n_jumps, rng, p0=0, init=STATIONARY):
    """Exactly ``n_jumps`` jumps, regardless of elapsed time."""
    if n_jumps < 1:
        raise ValueError("n_jumps must be at least 1")
    init = _resolve_init(model, init)
    j0 = _initial_mark(model, init, rng)
    marks = _mark_block(model, j0, n_jumps, rng)
    soj = _sojourn_block(model, j0, marks, rng)
    delayed = init.kind == "stationary"
    if delayed:
        soj[0] = stationary_delay_sample(model, rng)
    return PricePath(np.cumsum(soj), marks, p0, soj, j0, delayed)


def simulate_path(model: MrpModel, horizon, p0=0, init=STATIONARY, rng=None):
    """Jumps with T_k <= horizon, drawn chunk by chunk from the exact recursion."""
    if not horizon > 0 or not math.isfinite(horizon):
        raise ValueError(f"horizon must be positive and finite, got {horizon!r}")
    rng = np.random.default_rng() if rng is None else rng
    init = _resolve_init(model, init)
    mu = model.mean_sojourn
    j0 = _initial_mark(model, init, rng)
    delayed = init.kind == "stationary"

    marks_parts, soj_parts, time_parts = [], [], []
    t, prev, first = 0.0, j0, True
    while True:
        remaining = horizon - t
        n = int(1.1 * remaining / mu + 4.0 * math.sqrt(remaining / mu + 1.0)) + 16
        marks = _mark_block(model, prev, n, rng)
        soj = _sojourn_block(model, prev, marks, rng)
        if first:
            if delayed:
                soj[0] = stationary_delay_sample(model, rng)
            first = False
        times = t + np.cumsum(soj)
        keep = int(np.searchsorted(times, horizon, side="right"))
        marks_parts.append(marks[:keep])
        soj_parts.append(soj[:keep])
        time_parts.append(times[:keep])
        if keep < n:
            break
        t, prev = float(times[-1]), int(marks[-1])

    return PricePath(
        np.concatenate(time_parts),
        np.concatenate(marks_parts),
        p0,
        np.concatenate(soj_parts),
        j0,
        delayed,
        float(horizon),
    )


def simulate_batch(model, horizon, p0=0, n_paths=1, seed=0, init=STATIONARY, threads=1):
    """Independent paths; path k uses the substream ``path_rng(seed, k)``."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    init = _resolve_init(model, init)

    def one(k):
        return simulate_path(model, horizon, p0, init, path_rng(seed, k))

    if threads <= 1:
        return [one(k) for k in range(n_paths)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_paths)))


def terminal_prices(model, horizon, n_paths, seed=0, init=STATIONARY, p0=0, threads=1):
    """P_horizon for each path of the batch, without keeping the paths."""
    init = _resolve_init(model, init)

    def one(k):
        return simulate_path(model, horizon, p0, init, path_rng(seed, k)).terminal_price

    if threads <= 1:
        return np.array([one(k) for k in range(n_paths)], dtype=np.int64)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.fromiter(pool.map(one, range(n_paths)), dtype=np.int64, count=n_paths)


def write_paths_csv(paths, fh):
    """Rows ``path_id,t,price,mark``; a t=0 row with mark 0 opens each path."""
    fh.write("path_id,t,price,mark\n")
    for k, path in enumerate(paths):
        fh.write(f"{k},{0.0!r},{path.p0},0\n")
        prices = path.prices
        for t, p, j in zip(path.jump_times.tolist(), prices.tolist(), path.marks.tolist()):
            fh.write(f"{k},{t!r},{p},{j}\n")


# ---------------------------------------------------------------- stationary delay


class _DelayTable:
    """Tabulated D(t) = (t(1 - F(t)) + int_0^t u dF)/mu for inverse-cdf sampling."""

    def __init__(self, law):
        self.law = law
        mu = law.mean
        hi = mu
        while (mu - law.partial_mean(hi) - hi * law.sf(hi)) / mu > 1e-14 and hi < 1e6 * mu:
            hi *= 2.0
        grid = np.concatenate(([0.0], np.geomspace(mu * 1e-14, hi, 4000)))
        self.mu = mu
        self.t = grid
        self.d = self.cdf(grid)
        self.d[-1] = 1.0

    def cdf(self, t):
        law = self.law
        return (t * law.sf(t) + law.partial_mean(t)) / self.mu

    def invert(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        k = np.clip(np.searchsorted(self.d, u, side="left"), 1, self.t.size - 1)
        lo, hi = self.t[k - 1], self.t[k]
        x = lo + (hi - lo) * (u - self.d[k - 1]) / np.maximum(self.d[k] - self.d[k - 1], 1e-300)
        todo = np.arange(u.size)
        # safeguarded Newton on the draws not yet converged; D' = (1 - F)/mu
        for _ in range(80):
            xs, us, los, his = x[todo], u[todo], lo[todo], hi[todo]
            surv = self.law.sf(xs)
            g = (xs * surv + self.law.partial_mean(xs)) / self.mu - us
            below = g < 0
            los = np.where(below, xs, los)
            his = np.where(below, his, xs)
            slope = surv / self.mu
            with np.errstate(divide="ignore", invalid="ignore"):
                step = xs - g / slope
            bad = ~np.isfinite(step) | (step <= los) | (step >= his)
            new = np.where(bad, 0.5 * (los + his), step)
            done = (np.abs(new - xs) <= 1e-13 * new) | (his - los <= 1e-13 * his)
            x[todo], lo[todo], hi[todo] = new, los, his
            todo = todo[~done]
            if todo.size == 0:
                break
        return x


def stationary_delay_law_table(model):
    if not model.marks_independent_of_sojourns:
        raise UnsupportedCaseError(
            "stationary delay needs assumption (H): one sojourn law independent of the marks"
        )
    if "delay" not in model._cache:
        model._cache["delay"] = _DelayTable(model.kernel(0, 0))
    return model._cache["delay"]


def stationary_delay_sample(model, rng, size=None):
    """Draw(s) from the density (1 - F(t))/mu on [0, inf)."""
    table = stationary_delay_law_table(model)
    u = rng.random(1 if size is None else size)
    x = table.invert(np.asarray(u))
    return float(x[0]) if size is None else x


# ---------------------------------------------------------------- generator


def _phi_ds(phi, p, mark, s, h=1e-5):
    ds = getattr(phi, "ds", None)
    if ds is not None:
        return float(ds(p, mark, s))
    if s >= h:
        return (phi(p, mark, s + h) - phi(p, mark, s - h)) / (2.0 * h)
    return (-3.0 * phi(p, mark, s) + 4.0 * phi(p, mark, s + h) - phi(p, mark, s + 2 * h)) / (2.0 * h)


def jump_intensities(model, mark, s):
    """h_ij(s) for every target j, i.e. q_ij f_ij(s) / sum_k q_ik (1 - F_ik(s))."""
    i = mark_index(mark, model.m)
    n = 2 * model.m
    q = model.transition_matrix[i]
    surv = np.array([model.kernel(i, j).sf(s) for j in range(n)])
    total = float(np.dot(q, surv))
    if total <= 0.0:
        raise SaturationError(f"no survival mass left at elapsed time {s!r}")
    dens = np.array([model.kernel(i, j).pdf(s) for j in range(n)])
    h = q * dens / total
    if not np.all(np.isfinite(h)):
        raise ValueError(f"hazard is infinite at elapsed time {s!r}")
    return h


def generator_apply(model, phi, state: SemiMarkovState, h=1e-5, form="auto"):
    """Infinitesimal generator of (P_t, I_t, S_t) applied to phi(p, mark, s).

    ``form='symmetric'`` uses lambda_pm(s) = f_pm(s)/(1 - F(s)) and needs a
    symmetric model; ``'general'`` uses the per-target hazards h_ij.
    """
    p, i, s = state.price, state.last_mark, state.elapsed
    if form == "auto":
        form = "symmetric" if model.is_symmetric else "general"
    base = phi(p, i, s)
    out = _phi_ds(phi, p, i, s, h)
    vals = mark_values(model.m)
    if form == "general":
        rates = jump_intensities(model, i, s)
        for j, r in zip(vals, rates):
            if r:
                out += r * (phi(p + j, j, 0.0) - base)
        return float(out)
    model._require_symmetric()
    a = model.chain.alpha
    fp, fm = model.kernels
    surv = model.mixture_law.sf(s)
    if surv <= 0:
        raise SaturationError(f"F(s) = 1 at elapsed time {s!r}")
    lam_p, lam_m = fp.pdf(s) / surv, fm.pdf(s) / surv
    if not (math.isfinite(lam_p) and math.isfinite(lam_m)):
        raise ValueError(f"hazard is infinite at elapsed time {s!r}")
    sg = 1 if i > 0 else -1
    for size, pj in enumerate(model.chain.probs, start=1):
        up, dn = sg * size, -sg * size
        out += lam_p * (1 + a) / 2 * pj * (phi(p + up, up, 0.0) - base)
        out += lam_m * (1 - a) / 2 * pj * (phi(p + dn, dn, 0.0) - base)
    return float(out)


@dataclass(frozen=True)
class SemigroupResult:
    lhs: float
    rhs: float
    stderr: float
    bias_bound: float
    delta: float
    n_mc: int
    lhs_2delta: float = field(default=float("nan"))

    @property
    def tolerance(self):
        return 3.0 * self.stderr + self.bias_bound

    @property
    def passed(self):
        return abs(self.lhs - self.rhs) <= self.tolerance


def _draw_targets(cum_rows, cur_idx, rng):
    u = rng.random(cur_idx.size)
    out = np.empty_like(cur_idx)
    for i in np.unique(cur_idx):
        mask = cur_idx == i
        out[mask] = np.minimum(np.searchsorted(cum_rows[i], u[mask], side="right"), cum_rows.shape[1] - 1)
    return out


def _draw_sojourns(model, from_idx, to_idx, rng):
    n = 2 * model.m
    code = from_idx * n + to_idx
    out = np.empty(code.size)
    for c in np.unique(code):
        mask = code == c
        out[mask] = model.kernel(int(c) // n, int(c) % n).sample(rng, int(mask.sum()))
    return out


def evolve_from_state(model, state: SemiMarkovState, times, n, rng):
    """n independent copies of X_t = (P_t, I_t, S_t) started at ``state``.

    Returns a list, one (price, mark, elapsed) triple of arrays per entry of
    the increasing sequence ``times``. All copies share the same paths across
    times, so differences between times have small variance.
    """
    times = [float(t) for t in times]
    vals = mark_values(model.m)
    Q = model.transition_matrix
    cum = np.cumsum(Q, axis=1)
    i0 = mark_index(state.last_mark, model.m)
    s = state.elapsed
    k = 2 * model.m

    # first jump: target j with prob ~ q_ij (1 - F_ij(s)), residual from the conditioned law
    surv = np.array([model.kernel(i0, j).sf(s) for j in range(k)])
    w = Q[i0] * surv
    if w.sum() <= 0:
        raise SaturationError(f"no survival mass left at elapsed time {s!r}")
    nxt = rng.choice(k, size=n, p=w / w.sum())
    t_next = np.empty(n)
    for j in np.unique(nxt):
        mask = nxt == j
        law = model.kernel(i0, int(j))
        u = rng.random(int(mask.sum()))
        t_next[mask] = law.isf(u * surv[j]) - s
    t_next = np.maximum(t_next, 0.0)

    price = np.full(n, state.price, dtype=np.int64)
    cur = np.full(n, i0, dtype=np.int64)
    last = np.full(n, -s)
    vals_arr = np.asarray(vals)
    records = []
    pending = list(times)
    while True:
        while pending:
            tau = pending[0]
            if np.any(t_next <= tau):
                break
            records.append((price.copy(), vals_arr[cur], tau - last))
            pending.pop(0)
        if not pending:
            return records
        tau = pending[0]
        act = t_next <= tau
        a_idx = np.flatnonzero(act)
        j = nxt[a_idx]
        price[a_idx] += vals_arr[j]
        cur[a_idx] = j
        last[a_idx] = t_next[a_idx]
        new_j = _draw_targets(cum, j, rng)
        nxt[a_idx] = new_j
        t_next[a_idx] = last[a_idx] + _draw_sojourns(model, j, new_j, rng)


def semigroup_check(model, phi, state: SemiMarkovState, delta=None, n_mc=10**5, seed=0, h=1e-5):
    """Monte Carlo (E[phi(X_delta)] - phi(x))/delta against ``generator_apply``.

    The same paths are read at delta and 2 delta; the difference of the two
    quotients estimates the O(delta) bias, and its size plus three of its
    standard errors is reported as the bias bound.
    """
    if delta is None:
        delta = 1e-2 * model.mean_sojourn
    rng = np.random.default_rng(seed)
    rhs = generator_apply(model, phi, state, h=h)
    base = phi(state.price, state.last_mark, state.elapsed)
    (p1, j1, s1), (p2, j2, s2) = evolve_from_state(model, state, (delta, 2 * delta), n_mc, rng)
    d1 = (np.asarray(phi(p1, j1, s1), dtype=float) - base) / delta
    d2 = (np.asarray(phi(p2, j2, s2), dtype=float) - base) / (2 * delta)
    d1 = np.broadcast_to(d1, (n_mc,))
    d2 = np.broadcast_to(d2, (n_mc,))
    lhs = float(d1.mean())
    se = float(d1.std(ddof=1) / math.sqrt(n_mc))
    diff = d2 - d1
    bias = abs(float(diff.mean())) + 3.0 * float(diff.std(ddof=1) / math.sqrt(n_mc))
    return SemigroupResult(lhs, rhs, se, bias, float(delta), int(n_mc), float(d2.mean()))


# ---------------------------------------------------------------- diffusive scaling


def anderson_darling_normal(x):
    """(A^2, critical value at 1%, approximate p-value) for normality with fitted mean and scale.

    The p-value uses Stephens' small-sample correction A*^2 = A^2 (1 + 0.75/n + 2.25/n^2)
    and his piecewise exponential approximation.
    """
    from scipy import stats

    x = np.asarray(x, dtype=float)
    res = stats.anderson(x, dist="norm")
    a2 = float(res.statistic)
    crit = float(res.critical_values[list(res.significance_level).index(1.0)])
    n = x.size
    z = a2 * (1 + 0.75 / n + 2.25 / n**2)
    if z >= 0.6:
        p = math.exp(1.2937 - 5.709 * z + 0.0186 * z * z)
    elif z >= 0.34:
        p = math.exp(0.9177 - 4.279 * z - 1.38 * z * z)
    elif z >= 0.2:
        p = 1 - math.exp(-8.318 + 42.796 * z - 59.938 * z * z)
    else:
        p = 1 - math.exp(-13.436 + 101.14 * z - 223.73 * z * z)
    return a2, crit, min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class ScalingRow:
    horizon: float
    var_scaled: float
    var_stderr: float
    sigma2_inf: float
    ad_statistic: float
    ad_critical_1pct: float
    ad_pvalue: float

    @property
    def ratio(self):
        return self.var_scaled / self.sigma2_inf


def scaling_experiment(model, horizons, n_paths, seed, threads=1, init=STATIONARY):
    """Var(P_T / sqrt(T)) and a normality test of the standardized terminal price, per T.

    The variance uses the raw integer prices. The Anderson-Darling test runs on
    P_T + U with U uniform on (-1/2, 1/2), drawn from a substream no path uses.
    """
    from .model import macroscopic_variance_general

    horizons = [float(h) for h in horizons]
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be strictly increasing")
    sigma2 = macroscopic_variance_general(model.transition_matrix, model.stationary, model.mean_sojourn)
    rows = []
    for k, T in enumerate(horizons):
        # distinct substreams per horizon so the rows are independent experiments
        P = terminal_prices(model, T, n_paths, seed=(seed, k), init=init, threads=threads).astype(float)
        z = P / math.sqrt(T)
        v = float(z.var(ddof=1))
        m4 = float(np.mean((z - z.mean()) ** 4))
        se = math.sqrt(max(m4 - v * v, 0.0) / n_paths)
        # P_T lives on the tick lattice; spreading each value uniformly over its
        # cell keeps the normal limit but removes the ties that inflate A^2
        jitter = path_rng((seed, k), n_paths).uniform(-0.5, 0.5, n_paths)
        a2, crit, p = anderson_darling_normal((P + jitter) / math.sqrt(T))
        rows.append(ScalingRow(T, v, se, sigma2, a2, crit, p))
    return rows
