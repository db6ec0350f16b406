"""Per-trial experiment reports and clustering quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import OUTLIER, potential

SCHEMA_VERSION = 1
REFERENCE_KIND = "ground_truth_partition"


def misclassification_ratio(true_labels, pred_labels) -> float:
    """Fraction of points misplaced under the best cluster relabelling.

    Cluster labels are matched with the Hungarian method on the confusion
    matrix; OUTLIER only ever matches OUTLIER.
    """
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("label arrays differ in length")
    n = t.size
    if n == 0:
        return 0.0
    correct = int(np.count_nonzero((t == OUTLIER) & (p == OUTLIER)))
    both = (t != OUTLIER) & (p != OUTLIER)
    if np.any(both):
        tv, pv = t[both], p[both]
        _, ti = np.unique(tv, return_inverse=True)
        _, pi = np.unique(pv, return_inverse=True)
        conf = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
        np.add.at(conf, (ti, pi), 1)
        rows, cols = linear_sum_assignment(conf, maximize=True)
        correct += int(conf[rows, cols].sum())
    return (n - correct) / n


def outlier_scores(true_labels, pred_labels) -> tuple[float, float]:
    """(precision, recall) of the OUTLIER label. Empty denominators score 1.0."""
    t = np.asarray(true_labels) == OUTLIER
    p = np.asarray(pred_labels) == OUTLIER
    tp = int(np.count_nonzero(t & p))
    n_pred, n_true = int(np.count_nonzero(p)), int(np.count_nonzero(t))
    precision = tp / n_pred if n_pred else (1.0 if n_true == 0 else 0.0)
    recall = tp / n_true if n_true else 1.0
    return precision, recall


def reference_potential(dataset) -> float:
    """Potential of the non-outlier points at the ground-truth cluster means."""
    return potential(dataset.inliers, dataset.truth.true_centers)


@dataclass
class ExperimentReport:
    algorithm: str
    trial_id: int = 0
    config: dict = field(default_factory=dict)
    draws: int = 0
    queries_total: int = 0
    queries_phase1: int = 0
    queries_phase2: int = 0
    potential_achieved: float = math.nan
    potential_reference: float = math.nan
    potential_ratio: float = math.nan
    potential_reference_kind: str = REFERENCE_KIND
    misclassification_ratio: float = math.nan
    outlier_precision: float = math.nan
    outlier_recall: float = math.nan
    bound_values: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_time_ms: float = 0.0
    rng_seed: int = 0
    scale_mode: str | None = None
    hash_mixer: str = "splitmix64"
    schema_version: int = SCHEMA_VERSION
    kind: str = "trial"

    def score(self, dataset, centers, labels) -> "ExperimentReport":
        """Fill the potential and label metrics against ground truth."""
        truth = dataset.truth
        self.potential_achieved = potential(dataset.inliers, centers)
        self.potential_reference = reference_potential(dataset)
        if self.potential_reference > 0:
            self.potential_ratio = self.potential_achieved / self.potential_reference
        self.misclassification_ratio = misclassification_ratio(truth.labels, labels)
        self.outlier_precision, self.outlier_recall = outlier_scores(truth.labels, labels)
        return self

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        # JSON has no NaN/Inf; null keeps rows valid JSON
        return None
    return obj


def load_schema() -> dict:
    """The JSON schema that every report row validates against."""
    from importlib import resources

    return json.loads(resources.files(__package__).joinpath("report.schema.json").read_text(encoding="utf-8"))
