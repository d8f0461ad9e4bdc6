"""
Cluster validity and agreement metrics.

Internal indices (silhouette, Calinski-Harabasz) score an assignment
against the data and skip DBSCAN noise rows. External indices (ARI,
homogeneity, completeness, accuracy) compare an assignment with ground
truth and count noise rows as their own label, or as wrong for accuracy.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import (
    adjusted_rand_score,
    calinski_harabasz_score,
    homogeneity_completeness_v_measure,
    silhouette_samples,
)
from sklearn.metrics.cluster import contingency_matrix

from privclust.clustering.base import NOISE, ClusterAssignment, as_matrix, canonical_labels
from privclust.errors import InputError, UndefinedMetricError


class MetricReport(BaseModel):
    """
    Metrics of one clustering run. Internal indices are None when undefined
    for the assignment; external ones are None without ground truth.
    """

    ari: Optional[float] = None
    silhouette: Optional[float] = None
    ch: Optional[float] = None
    homogeneity: Optional[float] = None
    completeness: Optional[float] = None
    accuracy_raw: Optional[float] = None
    accuracy_mapped: Optional[float] = None
    k_effective: int = 0
    noise_fraction: float = 0.0


def _labels(pred: object) -> np.ndarray:
    if isinstance(pred, ClusterAssignment):
        return pred.labels
    return np.asarray(pred)


def _paired(truth: Sequence[int], pred: object) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(truth), _labels(pred)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"labelings differ in length: {a.shape} vs {b.shape}")
    return a, b


def ari(truth: Sequence[int], pred: object) -> float:
    """Hubert-Arabie adjusted Rand index; 1 for identical partitions."""
    a, b = _paired(truth, pred)
    if len(a) < 2:
        raise InputError("ari needs at least 2 rows")
    return float(adjusted_rand_score(a, b))


def _scored(data: np.ndarray, assignment: ClusterAssignment) -> Tuple[np.ndarray, np.ndarray]:
    data = as_matrix(data)
    if len(data) != len(assignment):
        raise InputError(f"{len(data)} rows for {len(assignment)} labels")
    keep = ~assignment.noise_mask
    labels, _ = canonical_labels(assignment.labels[keep])
    return keep, labels


def silhouette(
    data: np.ndarray,
    assignment: ClusterAssignment,
    distances: Optional[np.ndarray] = None,
) -> float:
    """
    Mean silhouette over non-noise rows. Rows of singleton clusters score 0,
    so an all-singleton assignment scores 0.

    Args:
        data (np.ndarray): Row matrix.
        assignment (ClusterAssignment): Labels to score.
        distances (Optional[np.ndarray]): Precomputed n x n Euclidean
            distances, reused across many assignments of the same data.

    Raises:
        UndefinedMetricError: If fewer than 2 clusters remain after excluding noise.
    """
    keep, labels = _scored(data, assignment)
    k = len(np.unique(labels))
    if k < 2:
        raise UndefinedMetricError(f"silhouette needs >= 2 clusters, got {k}")
    if k == len(labels):
        return 0.0
    if distances is not None:
        scores = silhouette_samples(distances[np.ix_(keep, keep)], labels, metric="precomputed")
    else:
        scores = silhouette_samples(as_matrix(data)[keep], labels)
    return float(np.mean(scores))


def calinski_harabasz(data: np.ndarray, assignment: ClusterAssignment) -> float:
    """
    Between/within dispersion ratio over non-noise rows.

    Raises:
        UndefinedMetricError: If k < 2, k >= scored rows, or the within-cluster
            scatter is zero.
    """
    keep, labels = _scored(data, assignment)
    rows = as_matrix(data)[keep]
    k = len(np.unique(labels))
    if k < 2 or k >= len(rows):
        raise UndefinedMetricError(
            f"Calinski-Harabasz needs 2 <= k < n, got k={k}, n={len(rows)}"
        )
    means = np.array([rows[labels == c].mean(axis=0) for c in range(k)])
    within = float(((rows - means[labels]) ** 2).sum())
    if not within > 0:
        raise UndefinedMetricError("within-cluster scatter is zero")
    return float(calinski_harabasz_score(rows, labels))


def homogeneity_completeness(truth: Sequence[int], pred: object) -> Tuple[float, float]:
    """Entropy-based homogeneity and completeness; 1 when the conditioning entropy is 0."""
    a, b = _paired(truth, pred)
    homogeneity, completeness, _ = homogeneity_completeness_v_measure(a, b)
    return float(homogeneity), float(completeness)


def accuracy(truth: Sequence[int], pred: object, mapped: bool = False) -> float:
    """
    Share of rows whose cluster id equals the class label.

    In mapped mode clusters are first matched one-to-one to classes so as to
    maximize the number of agreeing rows. Noise rows never agree.
    """
    a, b = _paired(truth, pred)
    if len(a) == 0:
        raise InputError("accuracy needs at least one row")
    if not mapped:
        return float(np.mean(a == b))
    keep = b != NOISE
    if not np.any(keep):
        return 0.0
    table = contingency_matrix(a[keep], b[keep])
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / len(a))


def evaluate(
    data: np.ndarray,
    assignment: ClusterAssignment,
    truth: Optional[Sequence[int]] = None,
) -> MetricReport:
    """Every metric that is defined for this assignment."""
    report = MetricReport(
        k_effective=assignment.k_effective,
        noise_fraction=assignment.noise_fraction,
    )
    try:
        report.silhouette = silhouette(data, assignment)
    except UndefinedMetricError:
        pass
    try:
        report.ch = calinski_harabasz(data, assignment)
    except UndefinedMetricError:
        pass
    if truth is not None:
        report.ari = ari(truth, assignment)
        report.homogeneity, report.completeness = homogeneity_completeness(truth, assignment)
        report.accuracy_raw = accuracy(truth, assignment)
        report.accuracy_mapped = accuracy(truth, assignment, mapped=True)
    return report
