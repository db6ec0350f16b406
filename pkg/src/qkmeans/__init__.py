"""Semi-supervised K-means with same-cluster query oracles."""

from .geometry import OUTLIER, CentroidSet, assign, centroid, potential
from .oracle import Answer, OracleSession

__version__ = "0.1.0"

__all__ = ["OUTLIER", "CentroidSet", "assign", "centroid", "potential", "Answer", "OracleSession"]
