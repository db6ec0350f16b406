"""Closed-form query-complexity bounds and Monte-Carlo checks of the supporting lemmas.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)


def _check_common(alpha=None, K=None, delta=None, eps=None, p_o=None, p_e=None):
    if alpha is not None and not alpha >= 1:
        raise ValueError("alpha must be ≥ 1")
    if K is not None and K < 1:
        raise ValueError("K must be ≥ 1")
    for name, v in (("delta", delta), ("eps", eps)):
        if v is not None and not 0 < v < 1:
            raise ValueError(f"{name} must lie in (0, 1)")
    if p_o is not None and not 0 <= p_o < 1:
        raise ValueError("p_o must lie in [0, 1)")
    if p_e is not None and not 0 <= p_e < 0.5:
        raise ValueError("p_e must lie in [0, 1/2)")


def dixie_bound(alpha: float, K: int, m: float) -> float:
    """Expected draws to collect m of every one of K types, p_min ≥ 1/(alpha K)."""
    if m < 1:
        raise ValueError("m must be ≥ 1")
    return 2.0 * alpha * K * (math.log(K) + m * LN2)


@dataclass(frozen=True)
class OutlierQueryBound:
    phase1: float
    phase2: float

    @property
    def total(self) -> float:
        return self.phase1 + self.phase2


def thm_qkmwol(alpha: float, K: int, delta: float, eps: float, p_o: float) -> OutlierQueryBound:
    """Expected-query bound for the two-phase outlier seeding.

    phase1 covers pair seeding (coupon term plus the quadratic outlier term),
    phase2 the filtered growth to K/(delta eps) points per cluster.
    """
    if p_o == 1:
        raise ValueError("p_o = 1 leaves no clusters")
    _check_common(alpha, K, delta, eps, p_o)
    q = 1.0 - p_o
    t1 = 2 * alpha * K ** 2 / q * (math.log(K) + 2 * LN2)
    t2 = 2 * (alpha * K * p_o / q * (math.log(2 * K) + 2 * LN2)) ** 2
    t3 = 2 * alpha * K / q * (p_o + K * q) * (math.log(K) + (K / (delta * eps) - 2) * LN2)
    return OutlierQueryBound(phase1=t1 + t2, phase2=t3)


def erlang_max_moments(alpha: float, K: int, p_o: float, m: float) -> tuple[float, float]:
    """Bounds on E[max X_i] and E[(max X_i)^2] for X_i ~ Erlang(m, p_i)."""
    if K * 2.0 ** m < math.e:
        raise ValueError("requires K * 2**m ≥ e")
    _check_common(alpha, K, p_o=p_o)
    scale = 2 * alpha * K / (1 - p_o)
    ex = scale * (math.log(K) + m * LN2)
    ex2 = (scale * (math.log(2 * K) + m * LN2)) ** 2
    return ex, ex2


def _m_rhs(alpha, K, p_e, coef):
    return coef * alpha * K ** 2 / (2 * p_e - 1) ** 4


def noisy_m_tilde(alpha, K, delta, eps) -> float:
    return max(6 * alpha * K / (delta * eps), 8 * alpha * K * math.log(3 * K / delta))


def noisy_M(alpha: float, K: int, delta: float, eps: float, p_e: float,
            coef: float = 128.0) -> tuple[float, int]:
    """(M_tilde, M): M is the smallest integer ≥ max(M_tilde, 3) with M/ln M ≥ coef alpha K^2/(2p_e-1)^4."""
    _check_common(alpha, K, delta, eps, p_e=p_e)
    m_tilde = noisy_m_tilde(alpha, K, delta, eps)
    rhs = _m_rhs(alpha, K, p_e, coef)
    lo = max(math.ceil(m_tilde), 3)

    def ok(M):
        return M / math.log(M) >= rhs

    if ok(lo):
        return m_tilde, lo
    # M/ln M is increasing for M ≥ 3: bootstrap an upper end, then bisect
    hi = max(lo + 1, math.ceil(rhs * math.log(max(rhs, 3.0))))
    while not ok(hi):
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return m_tilde, hi


@dataclass(frozen=True)
class NoisyOutlierParams:
    M_tilde: float
    M: float
    N: float


def noisy_outlier_params(alpha: float, K: int, delta: float, eps: float, p_e: float, p_o: float,
                         coef_m: float = 128.0, coef_n: float = 64.0) -> NoisyOutlierParams:
    """Sample size M and subgraph size N for noisy clustering with outliers."""
    if p_o == 1:
        raise ValueError("p_o = 1 leaves no clusters")
    _check_common(alpha, K, delta, eps, p_o, p_e)
    r = _m_rhs(alpha, K, p_e, coef_m)
    m_tilde = max(r * math.log(r), 8 * alpha * K / (delta * eps), 8 * alpha * K * math.log(4 * K / delta))
    q = 1 - p_o
    M = 2 * m_tilde / q + math.log(4 / delta) / (2 * q ** 2)
    N = coef_n * K ** 2 * math.log(M) / (1 - 2 * p_e) ** 4 + M - m_tilde
    return NoisyOutlierParams(m_tilde, M, N)


def noisy_outlier_params_alt(alpha: float, K: int, delta: float, eps: float, p_e: float,
                             p_o: float) -> dict:
    """Second sizing route: per-round non-outlier guarantee with a delta/5 split."""
    if p_o == 1:
        raise ValueError("p_o = 1 leaves no clusters")
    _check_common(alpha, K, delta, eps, p_o, p_e)
    r = _m_rhs(alpha, K, p_e, 128.0)
    m_tilde = max(r * math.log(r), 8 * alpha * K / (delta * eps), 8 * alpha * K * math.log(4 * K / delta))
    q = 1 - p_o
    M = 2 * m_tilde / q + math.log(5 / delta) / (2 * q ** 2)
    lm, lk = math.log(M), math.log(5 * K / delta)
    g = (1 - 2 * p_e) ** 2
    n_prime = (128 * K ** 2 * lm + 4 * math.sqrt(2) * g * K * math.sqrt(lm * lk)) / (g ** 2 * q)
    N = 2 * n_prime / q + lk / (2 * q ** 2)
    return {"M_tilde": m_tilde, "M": M, "N_prime": n_prime, "N": N}


def kl_bernoulli(x: float, y: float) -> float:
    """KL divergence D(Bern(x) || Bern(y)) with 0 log 0 = 0."""
    if not (0 <= x <= 1 and 0 <= y <= 1):
        raise ValueError("x and y must lie in [0, 1]")
    if x > y:
        raise ValueError("requires x ≤ y")

    def term(a, b):
        if a == 0:
            return 0.0
        if b == 0:
            return math.inf
        return a * math.log(a / b)

    return term(x, y) + term(1 - x, 1 - y)


def kl_quadratic_bound(x: float, y: float) -> float:
    """(y - x)^2 / (2y), a lower bound on D(x || y) for x ≤ y."""
    if x > y:
        raise ValueError("requires x ≤ y")
    if y == 0:
        return 0.0
    return (y - x) ** 2 / (2 * y)


def min_cluster_threshold(n: float, K: float, eps: float) -> float:
    return n * eps ** 3 / K ** 7


# ---------------------------------------------------------------------------
# Monte-Carlo verifiers


def type_probs(K: int, alpha: float = 1.0) -> np.ndarray:
    """One type at 1/(alpha K), the remaining mass split evenly."""
    if K == 1:
        return np.ones(1)
    p_min = 1.0 / (alpha * K)
    rest = (1.0 - p_min) / (K - 1)
    return np.array([p_min] + [rest] * (K - 1))


def simulate_dixie(probs, m: int, runs: int, rng: np.random.Generator, batch: int = 500) -> np.ndarray:
    """Draws needed until every type has been seen m times, one value per run."""
    probs = np.asarray(probs, dtype=np.float64)
    K = probs.size
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    out = np.empty(runs, dtype=np.int64)
    length = int(2 * m / probs.min() + 50)
    done = 0
    while done < runs:
        b = min(batch, runs - done)
        draws = np.searchsorted(cdf, rng.random((b, length)), side="right")
        finish = np.zeros(b, dtype=np.int64)
        complete = np.ones(b, dtype=bool)
        for t in range(K):
            counts = np.cumsum(draws == t, axis=1)
            reached = counts[:, -1] >= m
            complete &= reached
            pos = np.argmax(counts >= m, axis=1) + 1
            finish = np.maximum(finish, pos)
        if not np.all(complete):
            # sequence too short for some runs; retry the batch longer
            length *= 2
            continue
        out[done:done + b] = finish
        done += b
    return out


def simulate_erlang_max(probs, m: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Samples of max_i X_i with X_i ~ Gamma(shape m, rate p_i)."""
    probs = np.asarray(probs, dtype=np.float64)
    x = rng.gamma(shape=m, scale=1.0 / probs, size=(draws, probs.size))
    return x.max(axis=1)


@dataclass
class CentroidLemmaResult:
    rate_loose: float
    rate_tight: float
    factor_loose: float
    factor_tight: float
    trials: int
    with_replacement: bool


def verify_centroid_lemma(points, m: int, delta: float, trials: int, with_replacement: bool,
                          rng: np.random.Generator) -> CentroidLemmaResult:
    """Fraction of random m-samples whose mean keeps the 1-means cost within the lemma factor.

    Uses phi(S; c) = phi*(S) + |S| ||c - mean(S)||^2.
    """
    pts = np.asarray(points, dtype=np.float64)
    size = pts.shape[0]
    if not with_replacement and m > size:
        raise ValueError("m exceeds the point set size for sampling without replacement")
    mu = pts.mean(axis=0)
    phi_star = float(np.sum((pts - mu) ** 2))
    loose = 1 + 1 / (delta * m)
    shrink = 1 - (m - 1) / (size - 1) if size > 1 else 0.0
    tight = 1 + shrink / (delta * m)

    hits_loose = hits_tight = 0
    for start in range(0, trials, 2000):
        b = min(2000, trials - start)
        if with_replacement:
            idx = rng.integers(0, size, size=(b, m))
        else:
            idx = np.argsort(rng.random((b, size)), axis=1)[:, :m]
        means = pts[idx].mean(axis=1)
        cost = phi_star + size * np.sum((means - mu) ** 2, axis=1)
        # relative slack absorbs float error when the sample mean is exact
        tol = 1e-12 * max(phi_star, 1e-300)
        hits_loose += int(np.count_nonzero(cost <= loose * phi_star + tol))
        hits_tight += int(np.count_nonzero(cost <= tight * phi_star + tol))
    return CentroidLemmaResult(hits_loose / trials, hits_tight / trials, loose, tight, trials,
                               with_replacement)


@dataclass
class HypergeomResult:
    per_cluster_rate: list
    per_cluster_bound: list
    min_rate: float
    # fraction of trials in which every cluster reaches m p_min / 2
    joint_rate: float
    union_bound: float
    trials: int


# (n, probs, m) configurations exercised by the verification suite
HYPERGEOM_GRID = (
    (10_000, (1.0,), 50),
    (10_000, (0.1, 0.2, 0.3, 0.4), 400),
    (10_000, (0.1, 0.2, 0.3, 0.4), 1000),
    (5_000, (0.25, 0.25, 0.25, 0.25), 300),
    (2_000, (0.05, 0.95), 1000),
    (20_000, (0.1,) * 10, 2000),
)


def hypergeom_tail_check(n: int, probs, m: int, trials: int, rng: np.random.Generator) -> HypergeomResult:
    """Empirical P{S_i ≥ m p_i / 2} under sampling m of n points without replacement.

    ``min_rate`` is the rate for the smallest cluster; ``joint_rate`` is the
    rate at which every cluster reaches m p_min / 2, the event covered by the
    union bound 1 - K exp(-m p_min / 8).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1) > 1e-9:
        raise ValueError("probs must sum to 1")
    if m > n:
        raise ValueError("m must not exceed n")
    K = probs.size
    colors = np.floor(probs * n).astype(np.int64)
    colors[np.argmax(probs)] += n - colors.sum()
    order = np.argsort(colors, kind="stable")
    counts = rng.multivariate_hypergeometric(colors, m, size=trials)
    p_real = colors / n
    rates = [(float(np.mean(counts[:, i] >= m * p_real[i] / 2))) for i in range(K)]
    bounds_ = [1 - math.exp(-m * p_real[i] / 8) for i in range(K)]
    i_min = int(order[0])
    union = 1 - K * math.exp(-m * p_real[i_min] / 8)
    joint = float(np.mean(np.all(counts >= m * p_real[i_min] / 2, axis=1)))
    return HypergeomResult(rates, bounds_, rates[i_min], joint, union, trials)


def _first_distinct(idx: np.ndarray, m: int, size: int):
    """First m distinct entries of each row; rows lacking m distinct values are flagged."""
    b, L = idx.shape
    first = np.full((b, size), L, dtype=np.int64)
    rows = np.repeat(np.arange(b), L)
    cols = np.tile(np.arange(L), b)
    np.minimum.at(first, (rows, idx.ravel()), cols)
    is_first = first[np.arange(b)[:, None], idx] == np.arange(L)[None, :]
    rank = np.cumsum(is_first, axis=1)
    keep = is_first & (rank <= m)
    ok = rank[:, -1] >= m
    out = np.zeros((b, m), dtype=np.int64)
    out[ok] = idx[ok][keep[ok]].reshape(-1, m)
    return out, ok


def compare_centroid_sampling(points, m: int, delta: float, trials: int,
                              rng: np.random.Generator) -> tuple[CentroidLemmaResult, CentroidLemmaResult]:
    """Paired with/without-replacement centroid-lemma rates on one stream of uniform draws.

    Each trial draws a sequence of uniform indices; its first m entries are
    the with-replacement sample and its first m distinct entries the
    without-replacement sample, which is a uniform m-subset.
    """
    pts = np.asarray(points, dtype=np.float64)
    size = pts.shape[0]
    if m > size:
        raise ValueError("m exceeds the point set size for sampling without replacement")
    mu = pts.mean(axis=0)
    phi_star = float(np.sum((pts - mu) ** 2))
    loose = 1 + 1 / (delta * m)
    tight = 1 + (1 - (m - 1) / (size - 1) if size > 1 else 0.0) / (delta * m)
    tol = 1e-12 * max(phi_star, 1e-300)
    # expected draws for m distinct, with headroom
    L = int(sum(size / (size - j) for j in range(m)) * 2) + 20
    hits = np.zeros((2, 2), dtype=np.int64)  # [with, without] x [loose, tight]
    done = 0
    while done < trials:
        b = min(1000, trials - done)
        idx = rng.integers(0, size, size=(b, L))
        wo, ok = _first_distinct(idx, m, size)
        if not np.all(ok):
            L *= 2
            continue
        for row, sample in enumerate((idx[:, :m], wo)):
            cost = phi_star + size * np.sum((pts[sample].mean(axis=1) - mu) ** 2, axis=1)
            hits[row, 0] += np.count_nonzero(cost <= loose * phi_star + tol)
            hits[row, 1] += np.count_nonzero(cost <= tight * phi_star + tol)
        done += b
    with_r = CentroidLemmaResult(hits[0, 0] / trials, hits[0, 1] / trials, loose, tight, trials, True)
    without = CentroidLemmaResult(hits[1, 0] / trials, hits[1, 1] / trials, loose, tight, trials, False)
    return with_r, without


def centroid_point_sets(seed: int = 0, size: int = 100) -> dict:
    """Three fixed test sets: uniform cube, two separated blobs, points on a line."""
    rng = np.random.default_rng(seed)
    half = size // 2
    blobs = np.vstack([rng.normal(0, 0.3, (half, 2)), rng.normal((5, 5), 0.3, (size - half, 2))])
    t = rng.random(size)
    line = np.column_stack([t, 2 * t - 1])
    return {"cube": rng.random((size, 3)), "two_blob": blobs, "line": line}
