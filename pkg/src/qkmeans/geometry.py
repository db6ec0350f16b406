"""K-means potential, centroids and nearest-center assignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Label for points rejected as outliers. Never a valid cluster index.
OUTLIER = -1

_CHUNK = 65536


@dataclass(frozen=True)
class CentroidSet:
    """K centers plus an optional outlier-rejection radius.

    ``gamma`` is either a single radius shared by all centers or one radius
    per center. A point whose nearest center lies farther than that center's
    radius is labelled OUTLIER by :func:`assign`.
    """

    centers: np.ndarray
    gamma: float | np.ndarray | None = field(default=None)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.float64, ndmin=2)
        if centers.shape[0] == 0:
            raise ValueError("centroid set is empty")
        if not np.all(np.isfinite(centers)):
            raise ValueError("centers must be finite")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        if self.gamma is not None:
            g = np.asarray(self.gamma, dtype=np.float64)
            if g.ndim == 0:
                g = float(g)
                if not g >= 0:
                    raise ValueError("gamma must be nonnegative")
            else:
                if g.shape != (centers.shape[0],):
                    raise ValueError("per-center gamma must have one entry per center")
                if np.any(~(g >= 0)):
                    raise ValueError("gamma must be nonnegative")
                g = g.copy()
                g.setflags(write=False)
            object.__setattr__(self, "gamma", g)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def with_gamma(self, gamma) -> "CentroidSet":
        return CentroidSet(self.centers, gamma)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-d array (n, d)")
    return pts


def _as_centers(centers) -> CentroidSet:
    if isinstance(centers, CentroidSet):
        return centers
    return CentroidSet(np.asarray(centers, dtype=np.float64))


def sq_distances(points, centers) -> np.ndarray:
    """(n, K) matrix of squared Euclidean distances."""
    pts = _as_points(points)
    cs = _as_centers(centers).centers
    if pts.shape[1] != cs.shape[1]:
        raise ValueError(f"dimension mismatch: points have d={pts.shape[1]}, centers d={cs.shape[1]}")
    out = np.empty((pts.shape[0], cs.shape[0]), dtype=np.float64)
    for start in range(0, pts.shape[0], _CHUNK):
        block = pts[start:start + _CHUNK]
        diff = block[:, None, :] - cs[None, :, :]
        out[start:start + _CHUNK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def potential(points, centers) -> float:
    """Sum over points of the squared distance to the nearest center.

    The ``gamma`` field of a CentroidSet is ignored here.
    """
    d2 = sq_distances(points, centers)
    if d2.shape[0] == 0:
        return 0.0
    return float(np.sum(d2.min(axis=1)))


def centroid(points) -> np.ndarray:
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("centroid of an empty point set")
    return pts.sum(axis=0) / pts.shape[0]


def assign(points, centers) -> np.ndarray:
    """Nearest-center labels; ties go to the lowest center index.

    If the centroid set carries ``gamma``, points farther than it from their
    nearest center get the OUTLIER label.
    """
    cset = _as_centers(centers)
    d2 = sq_distances(points, cset)
    if d2.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    # argmin returns the first minimum, which is the tie rule we want
    labels = d2.argmin(axis=1).astype(np.int64)
    if cset.gamma is not None:
        nearest = np.sqrt(d2[np.arange(d2.shape[0]), labels])
        radius = cset.gamma if np.ndim(cset.gamma) == 0 else cset.gamma[labels]
        labels[nearest > radius] = OUTLIER
    return labels


def cluster_centroids(points, labels, k: int) -> np.ndarray:
    """Mean of each label group 0..k-1; OUTLIER labels are skipped."""
    pts = _as_points(points)
    labels = np.asarray(labels)
    out = np.empty((k, pts.shape[1]), dtype=np.float64)
    for i in range(k):
        members = pts[labels == i]
        if members.shape[0] == 0:
            raise ValueError(f"cluster {i} is empty")
        out[i] = centroid(members)
    return out
