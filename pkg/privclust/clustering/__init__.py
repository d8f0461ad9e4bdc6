"""
From-scratch clustering kernels: k-means, agglomerative hierarchical
clustering, Gaussian mixtures fitted by EM, and DBSCAN.

Algorithm classes are registered under the `privclust.algorithm` entry
point group; the built-in families resolve even when the package is not
installed.
"""

import importlib
import importlib.metadata
from typing import Dict, Type

from privclust.clustering.base import NOISE, BaseAlgorithm, ClusterAssignment
from privclust.clustering.dbscan import DBSCANParams, core_points, dbscan
from privclust.clustering.gmm import GMMResult, gmm
from privclust.clustering.hierarchical import Dendrogram, hierarchical, linkage_tree
from privclust.clustering.kmeans import KMeansResult, kmeans

BUILTIN_ALGORITHMS = {
    "kmeans": "privclust.clustering.kmeans:KMeansAlgorithm",
    "hierarchical": "privclust.clustering.hierarchical:HierarchicalAlgorithm",
    "gmm": "privclust.clustering.gmm:GMMAlgorithm",
    "dbscan": "privclust.clustering.dbscan:DBSCANAlgorithm",
}


def _load(target: str) -> Type[BaseAlgorithm]:
    module, name = target.split(":")
    return getattr(importlib.import_module(module), name)


def get_algorithm(kind: str) -> Type[BaseAlgorithm]:
    """Loads a single algorithm class by kind"""
    for entrypoint in importlib.metadata.entry_points(group="privclust.algorithm", name=kind):
        return entrypoint.load()
    if kind in BUILTIN_ALGORITHMS:
        return _load(BUILTIN_ALGORITHMS[kind])
    raise KeyError(f"Unrecognized algorithm {kind}")


def get_algorithms() -> Dict[str, Type[BaseAlgorithm]]:
    """Load all available algorithms and return them as a dictionary"""
    algorithms = {kind: _load(target) for kind, target in BUILTIN_ALGORITHMS.items()}
    for entrypoint in importlib.metadata.entry_points(group="privclust.algorithm"):
        algorithms[entrypoint.name] = entrypoint.load()
    return algorithms


__all__ = [
    "NOISE",
    "BaseAlgorithm",
    "ClusterAssignment",
    "DBSCANParams",
    "Dendrogram",
    "GMMResult",
    "KMeansResult",
    "core_points",
    "dbscan",
    "get_algorithm",
    "get_algorithms",
    "gmm",
    "hierarchical",
    "kmeans",
    "linkage_tree",
]
