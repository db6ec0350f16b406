"""Two-phase noiseless query seeding for data with outliers.

Phase 1 collects K clusters that each contain a queried pair. Under a
noiseless oracle any pair answered SAME is two non-outliers, so these seeds
are clean. Singletons, which hold every sampled outlier, are thrown away.
Phase 2 grows the K seeds to m points each, discarding draws that every
seed rejects. Unqueried points are then assigned to the nearest center
unless they sit beyond that center's rejection radius.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .datagen import separation_thresholds
from .geometry import OUTLIER, CentroidSet, assign
from .report import ExperimentReport
from .seeding import ClusterSeeds, IndexStream, SeedConfig, SeedingError, estimate_centers, grow


@dataclass
class PairSeedState:
    proto_clusters: list = field(default_factory=list)
    paired_count: int = 0
    draws: int = 0
    queries: int = 0
    # (point index, queries spent) per draw, for auditing the cost per draw
    draw_log: list = field(default_factory=list)
    # singleton clusters dropped at the end of phase 1
    discarded: list = field(default_factory=list)


def phase1_pair_seed(session, dataset, K: int, max_draws: int | None = None,
                     stream: IndexStream | None = None, rng=None) -> PairSeedState:
    if session.is_noisy:
        raise ValueError("pair seeding requires a noiseless oracle")
    if stream is None:
        rng = rng if rng is not None else np.random.default_rng(session.seed)
        stream = IndexStream(rng, dataset.n)
    cap = max_draws if max_draws is not None else 2_000_000
    state = PairSeedState()
    clusters = state.proto_clusters
    members = set()

    while state.paired_count < K:
        if state.draws >= cap:
            raise SeedingError(
                f"max_draws={cap} reached with {state.paired_count} of {K} clusters paired", state
            )
        x = next(stream)
        state.draws += 1
        if x in members:
            # a pair must be two distinct points; repeats carry no information
            state.draw_log.append((x, 0))
            continue
        cost = 0
        for c in clusters:
            cost += 1
            if session.same(c[0], x):
                c.append(x)
                if len(c) == 2:
                    state.paired_count += 1
                break
        else:
            clusters.append([x])
        members.add(x)
        state.queries += cost
        state.draw_log.append((x, cost))

    state.discarded = [c[0] for c in clusters if len(c) == 1]
    state.proto_clusters = [c for c in clusters if len(c) >= 2]
    return state


def phase2_filtered_seed(session, dataset, state: PairSeedState, cfg: SeedConfig,
                         stream: IndexStream | None = None, rng=None) -> ClusterSeeds:
    if len(state.proto_clusters) != cfg.K:
        raise ValueError(f"expected {cfg.K} paired seed clusters, got {len(state.proto_clusters)}")
    if stream is None:
        rng = rng if rng is not None else np.random.default_rng(session.seed)
        stream = IndexStream(rng, dataset.n)
    seeds = ClusterSeeds(
        clusters=[list(c) for c in state.proto_clusters],
        representatives=[c[0] for c in state.proto_clusters],
    )
    return grow(session, stream, seeds, cfg.K, cfg.m, open_new=False, max_draws=cfg.draw_cap,
                probe_order=cfg.probe_order, points=dataset.points)


def seed_true_labels(dataset, seeds: ClusterSeeds) -> list[int]:
    """Majority ground-truth label of each seed cluster."""
    out = []
    for members in seeds.clusters:
        labels = dataset.truth.labels[members]
        labels = labels[labels != OUTLIER]
        out.append(int(np.bincount(labels).argmax()) if labels.size else OUTLIER)
    return out


def truth_gamma(dataset, seeds: ClusterSeeds, eps: float) -> np.ndarray:
    """Per-seed rejection radius from the ground truth at separation parameter sqrt(eps).

    Radius of seed j is max_{y in C_i} ||y - c_i|| + sqrt(beta phi_i / |C_i|)
    for its true cluster i, with beta = sqrt(eps), the smallest beta allowed
    by eps ≤ beta^2.
    """
    truth = dataset.truth
    thr = separation_thresholds(dataset.points, truth.labels, truth.true_centers.centers, math.sqrt(eps))
    return np.array([thr[i] for i in seed_true_labels(dataset, seeds)])


def auto_gamma(dataset, seeds: ClusterSeeds, centers: CentroidSet, eps: float) -> np.ndarray:
    """Data-driven rejection radius from the queried points only."""
    out = []
    for members, c in zip(seeds.clusters, centers.centers):
        dist = np.linalg.norm(dataset.points[members] - c, axis=1)
        phi = float(np.sum(dist ** 2))
        out.append(dist.max() + math.sqrt(eps * phi / len(members)))
    return np.array(out)


def label_points(dataset, seeds: ClusterSeeds, centers: CentroidSet, removed=()) -> np.ndarray:
    """Distance rule for unqueried points; queried points keep what the oracle told us."""
    labels = assign(dataset.points, centers)
    for i, members in enumerate(seeds.clusters):
        labels[members] = i
    if len(removed):
        labels[np.asarray(removed, dtype=np.int64)] = OUTLIER
    return labels


def run_outlier(session, dataset, cfg: SeedConfig, gamma="auto", rng=None,
                trial_id: int = 0) -> tuple[CentroidSet, np.ndarray, ExperimentReport]:
    """Full pipeline. ``gamma`` is "auto", "truth", a radius, or one radius per cluster."""
    t0 = time.perf_counter()
    rng = rng if rng is not None else np.random.default_rng(session.seed)
    stream = IndexStream(rng, dataset.n)
    q0 = session.query_count
    state = phase1_pair_seed(session, dataset, cfg.K, cfg.max_draws, stream)
    q1 = session.query_count - q0
    seeds = phase2_filtered_seed(session, dataset, state, cfg, stream)
    q2 = session.query_count - q0 - q1

    centers = estimate_centers(seeds, dataset)
    if isinstance(gamma, str):
        if gamma == "auto":
            radius = auto_gamma(dataset, seeds, centers, cfg.eps)
        elif gamma == "truth":
            radius = truth_gamma(dataset, seeds, cfg.eps)
        else:
            raise ValueError(f"unknown gamma mode {gamma!r}")
    else:
        radius = gamma
    if radius is not None and np.all(np.isinf(radius)):
        radius = None
    centers = centers.with_gamma(radius)
    if radius is None:
        # no rejection radius: plain nearest-center labels, nothing is an outlier
        labels = assign(dataset.points, centers)
    else:
        labels = label_points(dataset, seeds, centers, seeds.removed)

    truth = dataset.truth
    alpha = truth.alpha
    bound = bounds.thm_qkmwol(alpha, cfg.K, cfg.delta, cfg.eps, truth.p_o)
    rep = ExperimentReport(
        algorithm="outlier",
        trial_id=trial_id,
        config={"K": cfg.K, "delta": cfg.delta, "eps": cfg.eps, "m": cfg.m,
                "gamma": gamma if isinstance(gamma, str) else "given"},
        draws=state.draws + seeds.draws,
        queries_total=session.query_count - q0,
        queries_phase1=q1,
        queries_phase2=q2,
        rng_seed=session.seed,
        bound_values={"thm_qkmwol_phase1": bound.phase1, "thm_qkmwol_phase2": bound.phase2,
                      "thm_qkmwol_total": bound.total, "alpha_realized": alpha, "p_o": truth.p_o},
    )
    rep.extra.update(
        phase1_draws=state.draws,
        phase2_draws=seeds.draws,
        discarded_singletons=len(state.discarded),
        removed=len(seeds.removed),
        seed_sizes=seeds.sizes,
        outliers_in_seeds=int(sum(np.count_nonzero(truth.labels[c] == OUTLIER) for c in seeds.clusters)),
    )
    rep.score(dataset, centers, labels)
    rep.wall_time_ms = (time.perf_counter() - t0) * 1000
    return centers, labels, rep
