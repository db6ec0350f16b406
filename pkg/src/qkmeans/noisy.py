"""Cluster recovery from a persistent noisy same-cluster oracle, and the
sample-recover-average pipelines built on it.

Recovery works in rounds. A subgraph V' of up to N unassigned vertices is
queried completely. Vertices whose +1 degree clears T(|V'|) are linked when
their +1 neighbourhoods differ in at most theta(|V'|) vertices; linked
components of size ≥ N/K become active clusters. Every vertex outside V' is
then offered to each active cluster by a strict majority vote over c log n
distinct members. Leftover vertices seed the next round.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import bounds
from .geometry import OUTLIER, CentroidSet, assign, centroid
from .report import ExperimentReport


class RecoveryError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class Constants:
    """Constant factors of the recovery thresholds and sample-size formulas."""

    n_coef: float  # subgraph size N
    m_coef: float  # sample-size condition M / log M
    c_coef: float  # majority-vote multiplier c
    t_slack: float  # sqrt slack in the degree threshold T
    theta_slack: float  # sqrt slack in the neighbourhood threshold theta


PAPER = Constants(n_coef=64, m_coef=128, c_coef=16, t_slack=6, theta_slack=2)
DESK = Constants(n_coef=4, m_coef=8, c_coef=4, t_slack=1.0, theta_slack=0.5)
SCALES = {"paper": PAPER, "desk": DESK}


@dataclass(frozen=True)
class NoisyParams:
    p_e: float
    K: int
    n_total: int
    N: int
    c: float
    constants: Constants = DESK
    scale_mode: str = "desk"
    # vertices of V' that may be outliers; excluded from the N/K size cutoff
    outlier_allowance: int = 0

    @classmethod
    def build(cls, p_e: float, K: int, n_total: int, scale: str = "desk", N: int | None = None,
              constants: Constants | None = None, outlier_allowance: int = 0) -> "NoisyParams":
        if not 0 <= p_e < 0.5:
            raise ValueError("p_e must lie in [0, 1/2)")
        if n_total < 2:
            raise ValueError("need at least two vertices")
        consts = constants or SCALES[scale]
        g = 1 - 2 * p_e
        if N is None:
            N = math.ceil(consts.n_coef * K ** 2 * math.log(n_total) / g ** 4)
        c = consts.c_coef / g ** 2
        return cls(p_e, K, n_total, int(N), c, consts, scale, int(outlier_allowance))

    def size_cutoff(self, a: int) -> float:
        return min(self.N - self.outlier_allowance, a) / self.K

    @property
    def log_n(self) -> float:
        return math.log(self.n_total)

    def degree_threshold(self, a: int, n_sub: int) -> float:
        g = 1 - 2 * self.p_e
        return self.p_e * a + self.constants.t_slack * math.sqrt(n_sub * self.log_n) / g

    def overlap_threshold(self, a: int, n_sub: int) -> float:
        return 2 * self.p_e * (1 - self.p_e) * a + self.constants.theta_slack * math.sqrt(n_sub * self.log_n)

    @property
    def votes(self) -> int:
        return max(1, math.ceil(self.c * self.log_n))


@dataclass
class Recovery:
    clusters: list = field(default_factory=list)
    leftover: list = field(default_factory=list)
    rounds: int = 0
    queries: int = 0
    round_log: list = field(default_factory=list)


def _identify(W: np.ndarray, params: NoisyParams, n_sub: int):
    """Active-cluster identification on a fully queried subgraph.

    Returns lists of positions (into the subgraph) of the clusters that clear
    the size cutoff.
    """
    a = W.shape[0]
    deg = W.sum(axis=1)
    passing = np.flatnonzero(deg >= params.degree_threshold(a, n_sub))
    if passing.size == 0:
        return []
    Wp = W[passing].astype(np.float32)
    common = Wp @ Wp.T
    dp = deg[passing].astype(np.float64)
    symdiff = dp[:, None] + dp[None, :] - 2 * common
    link = symdiff <= params.overlap_threshold(a, n_sub)
    n_comp, comp = connected_components(csr_matrix(link), directed=False)
    out = []
    for k in range(n_comp):
        members = passing[comp == k]
        if members.size >= params.size_cutoff(a):
            out.append(members)
    # creation order: by smallest subgraph position
    out.sort(key=lambda m: int(m.min()))
    return out


def majority_joins(session, v: int, members, votes: int, rng: np.random.Generator) -> bool:
    """Strict majority of SAME answers over min(votes, |members|) distinct members; ties do not join."""
    members = np.asarray(members, dtype=np.int64)
    k = min(votes, members.size)
    others = members[rng.choice(members.size, size=k, replace=False)]
    yes = int(np.count_nonzero(session.query_many(np.full(k, v), others)))
    return 2 * yes > k


def recover_clusters(session, candidates, params: NoisyParams, rng: np.random.Generator | None = None) -> Recovery:
    """Recover every cluster large enough to clear the size cutoff.

    When fewer than N unassigned vertices remain, V' holds all of them and
    |V'| stands in for N in T, theta and the size cutoff. The cutoff is
    (N - outlier_allowance)/K so that outlier slots in V' are not counted.
    """
    if not session.is_noisy:
        raise ValueError("recover_clusters expects a noisy oracle session")
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise ValueError("candidate set is empty")
    rng = rng if rng is not None else np.random.default_rng(session.seed)
    q0 = session.query_count
    n_c = cand.size

    unassigned = np.ones(n_c, dtype=bool)
    in_sub = np.zeros(n_c, dtype=bool)
    sub: list[int] = []  # local indices in V'
    W = np.zeros((0, 0), dtype=bool)
    active: list[list[int]] = []
    tested: dict[int, set] = {}
    votes = params.votes
    max_rounds = math.ceil(n_c * params.K / params.N) + 1
    result = Recovery()

    for rnd in range(1, max_rounds + 1):
        result.rounds = rnd
        pool = np.flatnonzero(unassigned & ~in_sub)
        need = params.N - len(sub)
        added = np.empty(0, dtype=np.int64)
        if need > 0 and pool.size:
            added = rng.choice(pool, size=min(need, pool.size), replace=False)
        if added.size:
            old = np.array(sub, dtype=np.int64)
            na, no = added.size, old.size
            Wn = np.zeros((no + na, no + na), dtype=bool)
            Wn[:no, :no] = W
            if no:
                ii, jj = np.meshgrid(np.arange(no), np.arange(na), indexing="ij")
                ans = session.query_many(cand[old[ii.ravel()]], cand[added[jj.ravel()]]).reshape(no, na)
                Wn[:no, no:] = ans
                Wn[no:, :no] = ans.T
            iu, ju = np.triu_indices(na, k=1)
            ans = session.query_many(cand[added[iu]], cand[added[ju]])
            Wn[no + iu, no + ju] = ans
            Wn[no + ju, no + iu] = ans
            W = Wn
            sub.extend(int(v) for v in added)
            in_sub[added] = True

        a = len(sub)
        n_sub = min(params.N, a)
        found = _identify(W, params, n_sub) if a >= 2 else []
        new_clusters = 0
        if found:
            drop = np.zeros(a, dtype=bool)
            for pos in found:
                members = [sub[p] for p in pos]
                active.append(members)
                drop[pos] = True
                unassigned[members] = False
                in_sub[members] = False
                new_clusters += 1
            keep = ~drop
            W = W[np.ix_(keep, keep)]
            sub = [v for v, k in zip(sub, keep) if k]

        joins = 0
        if active:
            for v in np.flatnonzero(unassigned & ~in_sub):
                v = int(v)
                seen = tested.setdefault(v, set())
                for ci, members in enumerate(active):
                    if ci in seen:
                        continue
                    seen.add(ci)
                    if majority_joins(session, cand[v], cand[np.asarray(members)], votes, rng):
                        members.append(v)
                        unassigned[v] = False
                        joins += 1
                        break

        result.round_log.append({"round": rnd, "subgraph": a, "added": int(added.size),
                                 "new_clusters": new_clusters, "joins": joins})
        # V' remnants count as unassigned: a smaller V' lowers the cutoff next round
        remaining = np.count_nonzero(unassigned)
        if remaining == 0 or (new_clusters == 0 and joins == 0 and added.size == 0):
            break
    else:
        if np.count_nonzero(unassigned & ~in_sub):
            result.clusters = [cand[np.array(c)] for c in active]
            raise RecoveryError(f"recovery did not settle within {max_rounds} rounds", result)

    result.clusters = [cand[np.array(c, dtype=np.int64)] for c in active]
    result.leftover = cand[np.flatnonzero(unassigned)]
    result.queries = session.query_count - q0
    return result


def _largest(clusters, K):
    order = sorted(range(len(clusters)), key=lambda i: (-len(clusters[i]), i))
    return [clusters[i] for i in sorted(order[:K])]


def _centers_of(dataset, clusters) -> CentroidSet:
    return CentroidSet(np.array([centroid(dataset.points[c]) for c in clusters]))


def run_noisy(session, dataset, K: int, delta: float, eps: float, alpha: float,
              scale: str = "desk", rng=None, trial_id: int = 0,
              constants: Constants | None = None) -> tuple[CentroidSet, np.ndarray, ExperimentReport]:
    """Sample M points without replacement, recover K clusters, average them."""
    t0 = time.perf_counter()
    if dataset.truth.n_outliers:
        raise ValueError("run_noisy expects a dataset without outliers; use run_noisy_outlier")
    consts = constants or SCALES[scale]
    rng = rng if rng is not None else np.random.default_rng(session.seed)
    m_tilde, M = bounds.noisy_M(alpha, K, delta, eps, session.p_e, coef=consts.m_coef)
    if M > dataset.n:
        raise ValueError(f"M={M} exceeds n={dataset.n} ({scale} constants)")
    q0 = session.query_count
    sample = np.sort(rng.choice(dataset.n, size=M, replace=False))
    params = NoisyParams.build(session.p_e, K, M, scale, constants=consts)
    rec = recover_clusters(session, sample, params, rng)
    if len(rec.clusters) < K:
        raise RecoveryError(f"recovered {len(rec.clusters)} clusters, expected {K}", rec)
    clusters = _largest(rec.clusters, K)
    centers = _centers_of(dataset, clusters)
    labels = assign(dataset.points, centers)

    rep = ExperimentReport(
        algorithm="noisy",
        trial_id=trial_id,
        config={"K": K, "delta": delta, "eps": eps, "alpha": alpha, "p_e": session.p_e},
        draws=M,
        queries_total=session.query_count - q0,
        queries_phase1=rec.queries,
        queries_phase2=0,
        rng_seed=session.seed,
        scale_mode=scale,
        bound_values={"M_tilde": m_tilde, "M": M, "N": params.N,
                      "query_envelope": M * K ** 2 * math.log(M) / (1 - 2 * session.p_e) ** 4},
    )
    rep.extra.update(rounds=rec.rounds, recovered=len(rec.clusters), leftover=len(rec.leftover),
                     cluster_sizes=[len(c) for c in clusters],
                     subgraph_policy="retain unassigned V' members, top up to N")
    rep.score(dataset, centers, labels)
    rep.wall_time_ms = (time.perf_counter() - t0) * 1000
    return centers, labels, rep


def run_noisy_outlier(session, dataset, K: int, delta: float, eps: float, alpha: float, p_o: float,
                      scale: str = "desk", rng=None, trial_id: int = 0,
                      constants: Constants | None = None) -> tuple[CentroidSet, np.ndarray, ExperimentReport]:
    """Noisy pipeline with outliers: outliers fall below the cluster size cutoff."""
    t0 = time.perf_counter()
    consts = constants or SCALES[scale]
    rng = rng if rng is not None else np.random.default_rng(session.seed)
    prm = bounds.noisy_outlier_params(alpha, K, delta, eps, session.p_e, p_o,
                                      coef_m=consts.m_coef, coef_n=consts.n_coef)
    M, N = math.ceil(prm.M), math.ceil(prm.N)
    if M > dataset.n:
        raise ValueError(f"M={M} exceeds n={dataset.n} ({scale} constants)")
    q0 = session.query_count
    sample = np.sort(rng.choice(dataset.n, size=M, replace=False))
    allowance = math.floor(prm.M - prm.M_tilde)
    params = NoisyParams.build(session.p_e, K, M, scale, N=N, constants=consts, outlier_allowance=allowance)
    rec = recover_clusters(session, sample, params, rng)
    if len(rec.clusters) < K:
        raise RecoveryError(f"recovered {len(rec.clusters)} clusters, expected {K}", rec)
    clusters = _largest(rec.clusters, K)
    centers = _centers_of(dataset, clusters)

    radius = []
    for c, mu in zip(clusters, centers.centers):
        dist = np.linalg.norm(dataset.points[c] - mu, axis=1)
        radius.append(dist.max() + math.sqrt(eps * float(np.sum(dist ** 2)) / len(c)))
    centers = centers.with_gamma(np.array(radius))
    labels = assign(dataset.points, centers)
    # sampled points the recovery left out were rejected by the oracle
    labels[sample] = OUTLIER
    for i, c in enumerate(clusters):
        labels[c] = i

    truth = dataset.truth
    rep = ExperimentReport(
        algorithm="noisy-outlier",
        trial_id=trial_id,
        config={"K": K, "delta": delta, "eps": eps, "alpha": alpha, "p_o": p_o, "p_e": session.p_e},
        draws=M,
        queries_total=session.query_count - q0,
        queries_phase1=rec.queries,
        queries_phase2=0,
        rng_seed=session.seed,
        scale_mode=scale,
        bound_values={"M_tilde": prm.M_tilde, "M": prm.M, "N": prm.N},
    )
    rep.extra.update(
        rounds=rec.rounds,
        recovered=len(rec.clusters),
        leftover=len(rec.leftover),
        cluster_sizes=[len(c) for c in clusters],
        outliers_in_clusters=int(sum(np.count_nonzero(truth.labels[c] == OUTLIER) for c in clusters)),
        subgraph_policy="retain unassigned V' members, top up to N",
    )
    rep.score(dataset, centers, labels)
    rep.wall_time_ms = (time.perf_counter() - t0) * 1000
    return centers, labels, rep
