"""Noiseless query seeding: grow clusters by same-cluster queries, then average.

Points are drawn uniformly with replacement. Each draw is compared with one
representative per discovered cluster until the oracle answers SAME; if
every representative answers DIFFERENT the point opens a new cluster. The
loop ends once K clusters each hold m = ceil(K / (delta * eps)) points.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .geometry import CentroidSet, assign, centroid
from .report import ExperimentReport

DEFAULT_MAX_DRAWS = 2_000_000
PROBE_ORDERS = ("creation", "nearest_centroid")


class SeedingError(RuntimeError):
    """Raised when seeding cannot finish; ``partial`` holds the state reached."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SeedConfig:
    K: int
    delta: float
    eps: float
    max_draws: int | None = None
    probe_order: str = "creation"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be ≥ 1")
        if not (0 < self.delta < 1 and 0 < self.eps < 1):
            raise ValueError("delta and eps must lie in (0, 1)")
        if self.probe_order not in PROBE_ORDERS:
            raise ValueError(f"probe_order must be one of {PROBE_ORDERS}")

    @property
    def m(self) -> int:
        # guard against K/(delta*eps) landing a hair above an integer
        return max(1, math.ceil(self.K / (self.delta * self.eps) - 1e-9))

    @property
    def draw_cap(self) -> int:
        return DEFAULT_MAX_DRAWS if self.max_draws is None else self.max_draws


@dataclass
class ClusterSeeds:
    clusters: list = field(default_factory=list)
    representatives: list = field(default_factory=list)
    draws: int = 0
    queries: int = 0
    # draws that hit a representative itself; joined without a query
    self_hits: int = 0
    # points rejected by every representative when new clusters are closed
    removed: list = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.clusters]

    def copy(self) -> "ClusterSeeds":
        return ClusterSeeds(
            clusters=[list(c) for c in self.clusters],
            representatives=list(self.representatives),
            draws=self.draws,
            queries=self.queries,
            self_hits=self.self_hits,
            removed=list(self.removed),
        )


class IndexStream:
    """Uniform indices in [0, n), drawn from ``rng`` in blocks."""

    def __init__(self, rng: np.random.Generator, n: int, block: int = 4096):
        self.rng = rng
        self.n = n
        self.block = block
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def __next__(self) -> int:
        if self._pos >= self._buf.size:
            self._buf = self.rng.integers(0, self.n, size=self.block)
            self._pos = 0
        x = int(self._buf[self._pos])
        self._pos += 1
        return x

    def __iter__(self):
        return self


def _done(sizes, K, m, open_new):
    if len(sizes) < K:
        return False
    if open_new:
        return sorted(sizes, reverse=True)[K - 1] >= m
    return min(sizes) >= m


def grow(session, stream: IndexStream, seeds: ClusterSeeds, K: int, m: int, *,
         open_new: bool = True, max_draws: int = DEFAULT_MAX_DRAWS,
         probe_order: str = "creation", points=None) -> ClusterSeeds:
    """Shared sampling loop, mutating ``seeds`` in place.

    With ``open_new`` an all-DIFFERENT draw starts a new cluster; without it
    the draw is recorded in ``seeds.removed`` and dropped.
    """
    rep_index = {r: i for i, r in enumerate(seeds.representatives)}
    sums = None
    if probe_order == "nearest_centroid":
        if points is None:
            raise ValueError("nearest_centroid probing needs the point coordinates")
        sums = [points[c].sum(axis=0) for c in seeds.clusters]

    while not _done(seeds.sizes, K, m, open_new):
        if seeds.draws >= max_draws:
            raise SeedingError(
                f"max_draws={max_draws} reached with cluster sizes {seeds.sizes}", seeds
            )
        x = next(stream)
        seeds.draws += 1
        if x in rep_index:
            seeds.clusters[rep_index[x]].append(x)
            seeds.self_hits += 1
            if sums is not None:
                sums[rep_index[x]] = sums[rep_index[x]] + points[x]
            continue

        order = range(len(seeds.clusters))
        if sums is not None and len(seeds.clusters) > 1:
            means = np.array([s / len(c) for s, c in zip(sums, seeds.clusters)])
            order = np.argsort(((means - points[x]) ** 2).sum(axis=1), kind="stable")

        joined = None
        for i in order:
            seeds.queries += 1
            if session.same(seeds.representatives[i], x):
                joined = int(i)
                break
        if joined is not None:
            seeds.clusters[joined].append(x)
            if sums is not None:
                sums[joined] = sums[joined] + points[x]
        elif open_new:
            rep_index[x] = len(seeds.clusters)
            seeds.clusters.append([x])
            seeds.representatives.append(x)
            if sums is not None:
                sums.append(points[x].copy())
        else:
            seeds.removed.append(x)
    return seeds


def seed(session, dataset, cfg: SeedConfig, rng: np.random.Generator | None = None,
         stream: IndexStream | None = None) -> tuple[ClusterSeeds, int]:
    """Query-driven seeding; returns the seed clusters and the number of draws."""
    if session.is_noisy:
        raise ValueError("noiseless seeding requires a noiseless oracle")
    if stream is None:
        rng = rng if rng is not None else np.random.default_rng(session.seed)
        stream = IndexStream(rng, dataset.n)
    seeds = grow(session, stream, ClusterSeeds(), cfg.K, cfg.m, open_new=True,
                 max_draws=cfg.draw_cap, probe_order=cfg.probe_order, points=dataset.points)
    if len(seeds.clusters) > cfg.K:
        raise SeedingError(
            f"found {len(seeds.clusters)} clusters but K={cfg.K}; dataset has more clusters than K", seeds
        )
    return seeds, seeds.draws


def estimate_centers(seeds: ClusterSeeds, dataset) -> CentroidSet:
    """Centroid of each seed cluster, in cluster creation order."""
    if not seeds.clusters:
        raise ValueError("no seed clusters")
    centers = []
    for i, members in enumerate(seeds.clusters):
        if not members:
            raise ValueError(f"seed cluster {i} is empty")
        centers.append(centroid(dataset.points[members]))
    return CentroidSet(np.array(centers))


def run_noiseless(session, dataset, cfg: SeedConfig, rng: np.random.Generator | None = None,
                  trial_id: int = 0) -> tuple[CentroidSet, np.ndarray, ExperimentReport]:
    t0 = time.perf_counter()
    q0 = session.query_count
    seeds, draws = seed(session, dataset, cfg, rng)
    centers = estimate_centers(seeds, dataset)
    labels = assign(dataset.points, centers)
    alpha = dataset.truth.alpha
    rep = ExperimentReport(
        algorithm="noiseless",
        trial_id=trial_id,
        config={"K": cfg.K, "delta": cfg.delta, "eps": cfg.eps, "m": cfg.m, "probe_order": cfg.probe_order},
        draws=draws,
        queries_total=session.query_count - q0,
        queries_phase1=seeds.queries,
        queries_phase2=0,
        rng_seed=session.seed,
        # each draw costs at most K queries and the draws are a double Dixie cup
        bound_values={"query_bound": cfg.K * bounds.dixie_bound(alpha, cfg.K, cfg.m),
                      "draw_bound": bounds.dixie_bound(alpha, cfg.K, cfg.m), "alpha_realized": alpha},
    )
    rep.extra["self_hits"] = seeds.self_hits
    rep.extra["seed_sizes"] = seeds.sizes
    rep.score(dataset, centers, labels)
    rep.wall_time_ms = (time.perf_counter() - t0) * 1000
    return centers, labels, rep
