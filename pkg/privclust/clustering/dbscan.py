from collections import deque
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from privclust.clustering.base import NOISE, BaseAlgorithm, ClusterAssignment, as_matrix

CHUNK_ROWS = 1024


class DBSCANParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    eps: float = Field(gt=0)
    min_pts: int = Field(ge=1)


def neighborhoods(data: np.ndarray, eps: float) -> List[np.ndarray]:
    """Indices within distance eps of every row, the row itself included."""
    data = as_matrix(data)
    out: List[np.ndarray] = []
    for start in range(0, len(data), CHUNK_ROWS):
        block = cdist(data[start : start + CHUNK_ROWS], data)
        out.extend(np.flatnonzero(row <= eps) for row in block)
    return out


def core_points(data: np.ndarray, params: DBSCANParams) -> np.ndarray:
    return np.array([len(nb) >= params.min_pts for nb in neighborhoods(data, params.eps)])


def dbscan(data: np.ndarray, params: DBSCANParams) -> ClusterAssignment:
    """
    Density-based clustering with brute-force neighbourhoods.

    Rows are scanned in order; each unlabelled core row starts a cluster
    that grows through density-reachable rows. A border row joins the first
    cluster that reaches it. Rows reachable from no core row are noise (-1).
    """
    data = as_matrix(data)
    neighbors = neighborhoods(data, params.eps)
    core = np.array([len(nb) >= params.min_pts for nb in neighbors])
    labels = np.full(len(data), NOISE, dtype=np.int64)
    cluster = 0
    for i in range(len(data)):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return ClusterAssignment.from_labels(labels)


class DBSCANAlgorithm(BaseAlgorithm):
    kind = "dbscan"

    class schema(DBSCANParams):
        pass

    def execute(self, data: np.ndarray) -> ClusterAssignment:
        return dbscan(data, self.params)
