import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist

from privclust.clustering.base import (
    BaseAlgorithm,
    ClusterAssignment,
    as_matrix,
    canonical_labels,
    check_k,
)


@dataclass(frozen=True)
class KMeansResult:
    """
    Attributes:
        assignment (ClusterAssignment): Final labels.
        centroids (np.ndarray): One row per cluster id of `assignment`.
        wcss (float): Within-cluster sum of squared distances to the centroids.
        iterations (int): Lloyd iterations of the kept run.
        wcss_trace (Tuple[float, ...]): WCSS after every assignment step.
    """

    assignment: ClusterAssignment
    centroids: np.ndarray
    wcss: float
    iterations: int
    wcss_trace: Tuple[float, ...]


def _assign(data: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    distances = cdist(data, centroids, metric="sqeuclidean")
    labels = np.argmin(distances, axis=1)
    return labels, distances[np.arange(len(data)), labels]


def kmeans_plusplus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """
    Greedy k-means++ seeding: each new centre is the best of a few
    D^2-weighted draws, judged by the potential it leaves.
    """
    n = len(data)
    n_trials = 2 + int(math.log(k))
    centers = np.empty((k, data.shape[1]))
    first = int(rng.integers(n))
    centers[0] = data[first]
    closest = cdist(data, centers[:1], metric="sqeuclidean").ravel()
    for c in range(1, k):
        potential = closest.sum()
        if potential > 0:
            cumulative = np.cumsum(closest)
            draws = rng.random(n_trials) * potential
            candidates = np.minimum(np.searchsorted(cumulative, draws, side="right"), n - 1)
        else:
            candidates = rng.integers(n, size=n_trials)
        candidate_distances = cdist(data[candidates], data, metric="sqeuclidean")
        candidate_closest = np.minimum(closest, candidate_distances)
        best = int(np.argmin(candidate_closest.sum(axis=1)))
        centers[c] = data[candidates[best]]
        closest = candidate_closest[best]
    return centers


def _update(
    data: np.ndarray, labels: np.ndarray, centroids: np.ndarray, dist_sq: np.ndarray
) -> np.ndarray:
    k = len(centroids)
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, data)
    updated = centroids.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if len(empty):
        # empty clusters restart at the points worst served by their centroid
        farthest = np.argsort(-dist_sq, kind="stable")[: len(empty)]
        updated[empty] = data[farthest]
    return updated


def _lloyd(
    data: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float
) -> Tuple[np.ndarray, np.ndarray, List[float], int]:
    threshold = tol * float(np.mean(np.var(data, axis=0)))
    labels, dist_sq = _assign(data, centroids)
    trace = [float(dist_sq.sum())]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        updated = _update(data, labels, centroids, dist_sq)
        shift = float(np.sum((updated - centroids) ** 2))
        new_labels, dist_sq = _assign(data, updated)
        trace.append(float(dist_sq.sum()))
        centroids = updated
        unchanged = np.array_equal(new_labels, labels)
        labels = new_labels
        if unchanged or shift <= threshold:
            break
    return labels, centroids, trace, iterations


def kmeans(
    data: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
    n_init: int = 1,
) -> KMeansResult:
    """
    Lloyd's algorithm from greedy k-means++ seeds.

    Iterates until the labels stop changing, the squared centroid shift
    drops below `tol` times the mean feature variance, or `max_iter`.
    With `n_init` > 1 the run with the lowest WCSS is kept (first on ties).

    Raises:
        ParameterError: If k < 1 or k > n.
    """
    data = as_matrix(data)
    check_k(k, len(data))
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(1, n_init)):
        rng = np.random.default_rng(child)
        centroids = kmeans_plusplus(data, k, rng)
        labels, centroids, trace, iterations = _lloyd(data, centroids, max_iter, tol)
        if best is None or trace[-1] < best[2][-1]:
            best = (labels, centroids, trace, iterations)

    assert best is not None
    labels, centroids, trace, iterations = best
    canonical, order = canonical_labels(labels)
    # centroids of the final labels are exact means
    means = np.array([data[canonical == c].mean(axis=0) for c in range(len(order))])
    wcss = float(((data - means[canonical]) ** 2).sum())
    trace.append(wcss)
    return KMeansResult(
        assignment=ClusterAssignment.from_labels(canonical),
        centroids=means,
        wcss=wcss,
        iterations=iterations,
        wcss_trace=tuple(trace),
    )


class KMeansAlgorithm(BaseAlgorithm):
    kind = "kmeans"

    class schema(BaseModel, extra="forbid"):
        k: int = Field(ge=1)
        max_iter: int = Field(300, ge=1)
        tol: float = Field(1e-4, ge=0)
        n_init: int = Field(1, ge=1)

    def fit(self, data: np.ndarray) -> KMeansResult:
        return kmeans(
            data,
            self.params.k,
            seed=self.seed,
            max_iter=self.params.max_iter,
            tol=self.params.tol,
            n_init=self.params.n_init,
        )

    def execute(self, data: np.ndarray) -> ClusterAssignment:
        return self.fit(data).assignment
