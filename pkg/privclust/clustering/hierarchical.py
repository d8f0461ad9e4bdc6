from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.distance import pdist, squareform

from privclust.clustering.base import BaseAlgorithm, ClusterAssignment, as_matrix, check_k
from privclust.errors import ParameterError
from privclust.schemas import Linkage

LINKAGES = ("single", "complete", "average", "ward")


@dataclass(frozen=True)
class Dendrogram:
    """
    Agglomerative merge history.

    Attributes:
        merges (np.ndarray): (n-1) x 2 slot pairs in merge order. Merging
            (a, b) stores the union in slot a, with a < b.
        heights (np.ndarray): Linkage distance of every merge, non-decreasing.
        n (int): Number of leaves.
    """

    merges: np.ndarray
    heights: np.ndarray
    n: int

    def cut(self, k: int) -> np.ndarray:
        """Raw labels after replaying the first n-k merges."""
        parent = np.arange(self.n)

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return int(i)

        for a, b in self.merges[: self.n - k]:
            ra, rb = find(int(a)), find(int(b))
            parent[max(ra, rb)] = min(ra, rb)
        return np.array([find(i) for i in range(self.n)])


def _lance_williams(
    D: np.ndarray, a: int, b: int, size: np.ndarray, linkage: str
) -> np.ndarray:
    d_ka, d_kb, d_ab = D[a], D[b], D[a, b]
    n_a, n_b = size[a], size[b]
    if linkage == "single":
        return np.minimum(d_ka, d_kb)
    if linkage == "complete":
        return np.maximum(d_ka, d_kb)
    if linkage == "average":
        return (n_a * d_ka + n_b * d_kb) / (n_a + n_b)
    # ward, on squared distances
    return ((n_a + size) * d_ka + (n_b + size) * d_kb - size * d_ab) / (n_a + n_b + size)


def linkage_tree(data: np.ndarray, linkage: str = "ward") -> Dendrogram:
    """
    Build the full dendrogram with the nearest-neighbour chain algorithm and
    Lance-Williams distance updates. Ward runs on squared Euclidean
    distances and reports heights on the Euclidean scale.
    """
    if linkage not in LINKAGES:
        raise ParameterError(f"unknown linkage '{linkage}', expected one of {LINKAGES}")
    data = as_matrix(data)
    n = len(data)
    if n == 1:
        return Dendrogram(np.empty((0, 2), dtype=np.int64), np.empty(0), 1)

    metric = "sqeuclidean" if linkage == "ward" else "euclidean"
    D = squareform(pdist(data, metric=metric))
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    first_active = 0
    active = np.ones(n, dtype=bool)
    merges: List[Tuple[int, int]] = []
    heights: List[float] = []
    chain: List[int] = []

    for _ in range(n - 1):
        while True:
            if not chain:
                while not active[first_active]:
                    first_active += 1
                chain.append(first_active)
            a = chain[-1]
            row = D[a]
            b = int(np.argmin(row))
            # ties keep the chain's predecessor so the chain always closes
            if len(chain) > 1 and row[chain[-2]] <= row[b]:
                b = chain[-2]
            if len(chain) > 1 and b == chain[-2]:
                break
            chain.append(b)

        chain.pop()
        chain.pop()
        lo, hi = min(a, b), max(a, b)
        merges.append((lo, hi))
        heights.append(float(D[a, b]))

        updated = _lance_williams(D, lo, hi, size, linkage)
        D[lo, :] = updated
        D[:, lo] = updated
        D[lo, lo] = np.inf
        D[hi, :] = np.inf
        D[:, hi] = np.inf
        size[lo] += size[hi]
        active[hi] = False

    order = np.argsort(np.asarray(heights), kind="stable")
    sorted_heights = np.asarray(heights)[order]
    if linkage == "ward":
        sorted_heights = np.sqrt(np.clip(sorted_heights, 0.0, None))
    return Dendrogram(np.asarray(merges, dtype=np.int64)[order], sorted_heights, n)


def hierarchical(data: np.ndarray, k: int, linkage: str = "ward") -> ClusterAssignment:
    """
    Agglomerative clustering from singletons down to k clusters.

    Raises:
        ParameterError: If k < 1, k > n, or the linkage is unknown.
    """
    data = as_matrix(data)
    check_k(k, len(data))
    return ClusterAssignment.from_labels(linkage_tree(data, linkage).cut(k))


class HierarchicalAlgorithm(BaseAlgorithm):
    kind = "hierarchical"

    class schema(BaseModel, extra="forbid"):
        k: int = Field(ge=1)
        linkage: Linkage = "ward"

    def execute(self, data: np.ndarray) -> ClusterAssignment:
        return hierarchical(data, self.params.k, linkage=self.params.linkage)
