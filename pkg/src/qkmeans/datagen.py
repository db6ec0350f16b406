"""Synthetic Gaussian-mixture datasets with controlled imbalance and separated outliers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import OUTLIER, CentroidSet, cluster_centroids

FORMAT_VERSION = 1
PRNG_NAME = "numpy.random.PCG64"


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    n: int
    K: int
    d: int = 2
    alpha: float = 1.0
    p_o: float = 0.0
    sigma: float = 0.05
    center_spread: float = 10.0
    seed: int = 0
    # minimum pairwise center distance, in units of sigma
    min_center_sep: float = 10.0
    # eps used in the outlier separation thresholds
    sep_eps: float = 0.1

    def validate(self):
        if self.n < 1 or self.K < 1 or self.d < 1:
            raise InfeasibleSpec("n, K and d must be positive")
        if not self.alpha >= 1:
            raise InfeasibleSpec("alpha must be ≥ 1")
        if self.alpha > self.n / self.K:
            raise InfeasibleSpec("alpha must be ≤ n/K")
        if not 0 <= self.p_o < 1:
            raise InfeasibleSpec("p_o must lie in [0, 1)")
        if not self.sigma > 0:
            raise InfeasibleSpec("sigma must be > 0")
        if not 0 < self.sep_eps < 1:
            raise InfeasibleSpec("sep_eps must lie in (0, 1)")
        if self.n * (1 - self.p_o) / (self.alpha * self.K) < 1:
            raise InfeasibleSpec("n(1-p_o)/(alpha*K) must be ≥ 1 (smallest cluster would be empty)")


@dataclass
class GroundTruth:
    labels: np.ndarray
    cluster_sizes: tuple
    p_o: float
    true_centers: CentroidSet | None = None

    @property
    def K(self) -> int:
        return len(self.cluster_sizes)

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.labels == OUTLIER

    @property
    def n_outliers(self) -> int:
        return int(np.count_nonzero(self.labels == OUTLIER))

    @property
    def alpha(self) -> float:
        """Realized imbalance of the non-outlier clusters."""
        n_t = sum(self.cluster_sizes)
        return n_t / (self.K * min(self.cluster_sizes))

    @classmethod
    def from_labels(cls, points, labels, K: int | None = None) -> "GroundTruth":
        labels = np.asarray(labels, dtype=np.int64)
        if K is None:
            K = int(labels.max()) + 1 if np.any(labels != OUTLIER) else 0
        sizes = tuple(int(np.count_nonzero(labels == i)) for i in range(K))
        if K == 0 or min(sizes) == 0:
            raise ValueError("every cluster index in [0, K) must appear at least once")
        if np.any((labels != OUTLIER) & ((labels < 0) | (labels >= K))):
            raise ValueError("labels outside [0, K)")
        n_out = int(np.count_nonzero(labels == OUTLIER))
        centers = CentroidSet(cluster_centroids(points, labels, K))
        return cls(labels=labels, cluster_sizes=sizes, p_o=n_out / len(labels), true_centers=centers)


@dataclass
class Dataset:
    points: np.ndarray
    truth: GroundTruth
    header: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def inliers(self) -> np.ndarray:
        return self.points[~self.truth.outlier_mask]


def cluster_sizes(n_t: int, K: int, alpha: float) -> list[int]:
    """One cluster pinned at the minimum size, the rest share the remainder."""
    s_min = math.ceil(n_t / (alpha * K))
    if K == 1:
        return [n_t]
    rest = n_t - s_min
    base, extra = divmod(rest, K - 1)
    # equal shares; the remainder goes one point each to the first clusters
    return [s_min] + [base + (1 if i < extra else 0) for i in range(K - 1)]


def _draw_centers(rng, spec: MixtureSpec, max_tries: int = 100000) -> np.ndarray:
    min_dist = spec.min_center_sep * spec.sigma
    centers = []
    tries = 0
    while len(centers) < spec.K:
        tries += 1
        if tries > max_tries:
            raise InfeasibleSpec(
                f"could not place {spec.K} centers {min_dist:g} apart in a cube of side {spec.center_spread:g}"
            )
        c = rng.uniform(0.0, spec.center_spread, size=spec.d)
        if all(np.linalg.norm(c - o) >= min_dist for o in centers):
            centers.append(c)
    return np.array(centers)


def separation_thresholds(points, labels, centers, eps: float) -> np.ndarray:
    """Per-cluster outlier threshold: radius + sqrt(eps * phi_i / |C_i|)."""
    points = np.asarray(points, dtype=np.float64)
    out = np.empty(len(centers))
    for i, c in enumerate(centers):
        members = points[labels == i]
        dist = np.linalg.norm(members - c, axis=1)
        phi = float(np.sum(dist ** 2))
        out[i] = dist.max() + math.sqrt(eps * phi / members.shape[0])
    return out


def generate(spec: MixtureSpec) -> Dataset:
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n_out = int(round(spec.n * spec.p_o))
    n_t = spec.n - n_out
    if n_t < spec.K:
        raise InfeasibleSpec("fewer non-outlier points than clusters")
    sizes = cluster_sizes(n_t, spec.K, spec.alpha)
    means = _draw_centers(rng, spec)

    blocks, labels = [], []
    for i, s in enumerate(sizes):
        blocks.append(means[i] + spec.sigma * rng.standard_normal((s, spec.d)))
        labels.append(np.full(s, i, dtype=np.int64))
    inliers = np.concatenate(blocks)
    in_labels = np.concatenate(labels)
    true_centers = cluster_centroids(inliers, in_labels, spec.K)

    outliers = np.empty((0, spec.d))
    if n_out:
        thresholds = separation_thresholds(inliers, in_labels, true_centers, spec.sep_eps)
        radius = 2.0 * thresholds.max()
        found = []
        while len(found) < n_out:
            j = rng.integers(spec.K)
            u = rng.standard_normal(spec.d)
            u /= np.linalg.norm(u)
            x = true_centers[j] + radius * u
            # the shell is measured from the nearest center
            if np.all(np.linalg.norm(true_centers - x, axis=1) >= radius * (1 - 1e-12)):
                found.append(x)
        outliers = np.array(found)

    # interleave outliers at random positions so index order carries no signal
    points = np.concatenate([inliers, outliers])
    all_labels = np.concatenate([in_labels, np.full(n_out, OUTLIER, dtype=np.int64)])
    perm = rng.permutation(spec.n)
    points, all_labels = points[perm], all_labels[perm]

    truth = GroundTruth(
        labels=all_labels,
        cluster_sizes=tuple(sizes),
        p_o=n_out / spec.n,
        true_centers=CentroidSet(cluster_centroids(points, all_labels, spec.K)),
    )
    header = {
        "version": FORMAT_VERSION,
        "n": spec.n,
        "d": spec.d,
        "K": spec.K,
        "p_o": truth.p_o,
        "seed": spec.seed,
        "prng": PRNG_NAME,
        "sigma": spec.sigma,
    }
    return Dataset(points=points, truth=truth, header=header)


def check_gamma_margin(dataset: Dataset, gamma: float) -> bool:
    """True iff gamma*||x - c_i|| < ||y - c_i|| for all x in C_i, y in C_j, i != j.

    Evaluated per cluster as gamma * radius_i < nearest foreign point, which
    is the same quantifier without the O(n^2) pair loop.
    """
    truth = dataset.truth
    if truth.true_centers is None:
        raise ValueError("ground truth has no true centers")
    pts, labels = dataset.points, truth.labels
    for i, c in enumerate(truth.true_centers.centers):
        own = labels == i
        foreign = (labels != i) & (labels != OUTLIER)
        if not np.any(foreign):
            continue
        radius = np.linalg.norm(pts[own] - c, axis=1).max()
        nearest_foreign = np.linalg.norm(pts[foreign] - c, axis=1).min()
        if not gamma * radius < nearest_foreign:
            return False
    return True


@dataclass
class Separation:
    gamma: float
    thresholds: np.ndarray
    violations: list


def compute_gamma(dataset: Dataset, eps: float) -> Separation:
    """Outlier separation threshold Gamma(eps) and any outliers that violate it.

    ``gamma`` is the smallest per-cluster threshold; ``violations`` lists
    (point index, cluster index) pairs where an outlier sits within that
    cluster's threshold.
    """
    truth = dataset.truth
    if truth.K == 0 or truth.true_centers is None:
        raise ValueError("ground truth has no clusters")
    centers = truth.true_centers.centers
    thr = separation_thresholds(dataset.points, truth.labels, centers, eps)
    violations = []
    for idx in np.flatnonzero(truth.outlier_mask):
        dist = np.linalg.norm(centers - dataset.points[idx], axis=1)
        for i in np.flatnonzero(~(dist > thr)):
            violations.append((int(idx), int(i)))
    return Separation(gamma=float(thr.min()), thresholds=thr, violations=violations)


def write_dataset(dataset: Dataset, path) -> None:
    lines = [json.dumps(dataset.header, sort_keys=True)]
    for row, label in zip(dataset.points, dataset.truth.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    head, _, body = text.partition("\n")
    header = json.loads(head)
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {header.get('version')!r}")
    d, K = int(header["d"]), int(header["K"])
    rows = [line.split(",") for line in body.splitlines() if line]
    if len(rows) != int(header["n"]):
        raise ValueError(f"header says n={header['n']} but file has {len(rows)} rows")
    points = np.array([[float(v) for v in r[:d]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    labels = np.array([int(r[d]) for r in rows], dtype=np.int64)
    truth = GroundTruth.from_labels(points, labels, K)
    return Dataset(points=points, truth=truth, header=header)
