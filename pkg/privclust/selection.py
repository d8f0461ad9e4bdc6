"""
Server-side search for the clustering algorithm and its parameters.

The server only ever sees a NoisyDataset. It estimates k with the elbow
rule, derives DBSCAN's radius from the knee of the k-distance curve, scores
every candidate with the silhouette and the Calinski-Harabasz index, and
keeps the candidate with the highest CH among those whose silhouette lies
within `alpha` of the best silhouette.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from rich.console import Console
from scipy.spatial.distance import cdist, pdist, squareform
from sklearn.preprocessing import StandardScaler

from privclust.clustering import ClusterAssignment, get_algorithm, kmeans
from privclust.clustering.base import as_matrix
from privclust.errors import (
    EpsError,
    InputError,
    ParameterError,
    SelectionError,
    UndefinedMetricError,
)
from privclust.ldp import NoisyDataset
from privclust.metrics import calinski_harabasz, silhouette
from privclust.schemas import AlgorithmKind, SelectionConfig

KNEE_TIE_TOLERANCE = 1e-12


class AlgorithmCandidate(BaseModel):
    """An algorithm family with concrete hyper-parameters."""

    model_config = ConfigDict(frozen=True)

    kind: AlgorithmKind
    params: Dict[str, Any]

    @model_validator(mode="after")
    def _check_params(self) -> "AlgorithmCandidate":
        if self.kind == "dbscan":
            if not self.params.get("eps", 0) > 0 or int(self.params.get("min_pts", 0)) < 1:
                raise ValueError("dbscan candidates need eps > 0 and min_pts >= 1")
        elif int(self.params.get("k", 0)) < 1:
            raise ValueError(f"{self.kind} candidates need k >= 1")
        return self

    def describe(self) -> str:
        if self.kind == "dbscan":
            return f"Eps = {self.params['eps']:.4g}, min_pts = {self.params['min_pts']}"
        return f"k = {self.params['k']}"


class ScoredCandidate(BaseModel):
    """Server-side scores of one candidate; None marks a non-scorable candidate."""

    candidate: AlgorithmCandidate
    silhouette_score: Optional[float] = None
    ch_index: Optional[float] = None
    k_effective: int = 0
    noise_fraction: float = 0.0

    @property
    def scorable(self) -> bool:
        return self.silhouette_score is not None and self.ch_index is not None


class Recommendation(BaseModel):
    """
    The payload the server broadcasts back to the owners.

    Attributes:
        best_algorithm (AlgorithmCandidate): The chosen candidate.
        best_parameters (Dict[str, Any]): Its hyper-parameters.
        max_silhouette (float): Best silhouette over scorable candidates.
        silhouette_threshold (float): max_silhouette - alpha.
        best_ch_index (float): CH of the chosen candidate.
        alpha (float): Width of the silhouette band.
        scored (List[ScoredCandidate]): Every candidate in scoring order.
    """

    best_algorithm: AlgorithmCandidate
    best_parameters: Dict[str, Any]
    max_silhouette: float
    silhouette_threshold: float
    best_ch_index: float
    alpha: float
    scored: List[ScoredCandidate] = Field(default_factory=list)

    def to_payload(self) -> Dict[str, Any]:
        return {
            "algorithm": self.best_algorithm.kind,
            "params": dict(self.best_parameters),
            "max_silhouette": self.max_silhouette,
            "threshold": self.silhouette_threshold,
            "best_ch_index": self.best_ch_index,
        }


def find_knee(xs: Sequence[float], ys: Sequence[float]) -> int:
    """
    Index of the point farthest from the chord joining the curve's endpoints,
    with both axes scaled to [0, 1]. Only interior points compete; near-ties
    go to the smallest index. Curves with fewer than 3 points return index 0;
    flat ones have no knee and return the first interior index.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) != len(y):
        raise InputError("knee curve axes differ in length")
    if len(x) < 3:
        return 0
    if np.ptp(y) == 0 or np.ptp(x) == 0:
        return 1
    xn = (x - x.min()) / np.ptp(x)
    yn = (y - y.min()) / np.ptp(y)
    dx, dy = xn[-1] - xn[0], yn[-1] - yn[0]
    distance = np.abs(dx * (yn[0] - yn) - dy * (xn[0] - xn)) / np.hypot(dx, dy)
    interior = distance[1:-1]
    best = interior.max()
    return 1 + int(np.flatnonzero(interior >= best - KNEE_TIE_TOLERANCE)[0])


def _k_values(k_range: Tuple[int, int]) -> List[int]:
    lo, hi = k_range
    return list(range(lo, hi + 1))


def wcss_curve(data: np.ndarray, ks: Sequence[int], seed: int, n_init: int = 1) -> List[float]:
    return [kmeans(data, k, seed=seed, n_init=n_init).wcss for k in ks]


def elbow_k(
    data: np.ndarray, k_range: Tuple[int, int], seed: int = 0, n_init: int = 1
) -> int:
    """
    Cluster count at the knee of the k-means WCSS curve.

    Raises:
        ParameterError: If k_range leaves [1, n] or spans fewer than 3 values.
    """
    data = as_matrix(data)
    ks = _k_values(k_range)
    if len(ks) < 3 or ks[0] < 1 or ks[-1] > len(data):
        raise ParameterError(
            f"elbow_k needs at least 3 values of k within [1, {len(data)}], got {tuple(k_range)}"
        )
    curve = wcss_curve(data, ks, seed, n_init)
    if not np.all(np.isfinite(curve)):
        raise ParameterError("k-means produced a non-finite WCSS")
    return ks[find_knee(ks, curve)]


def silhouette_k(
    data: np.ndarray, k_range: Tuple[int, int], seed: int = 0, n_init: int = 1
) -> int:
    """
    Cluster count whose k-means assignment has the highest mean silhouette,
    first k on ties.

    Raises:
        ParameterError: If k_range leaves [2, n-1].
    """
    data = as_matrix(data)
    ks = _k_values(k_range)
    if not ks or ks[0] < 2 or ks[-1] > len(data) - 1:
        raise ParameterError(
            f"silhouette_k needs k within [2, {len(data) - 1}], got {tuple(k_range)}"
        )
    distances = squareform(pdist(data))
    best_k, best_score = ks[0], -np.inf
    for k in ks:
        assignment = kmeans(data, k, seed=seed, n_init=n_init).assignment
        try:
            score = silhouette(data, assignment, distances=distances)
        except UndefinedMetricError:
            continue
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def k_distances(data: np.ndarray, k: int) -> np.ndarray:
    """Distance of every row to its k-th nearest other row."""
    data = as_matrix(data)
    if not 1 <= k < len(data):
        raise ParameterError(f"k-NN index must satisfy 1 <= k < n={len(data)}, got {k}")
    out = np.empty(len(data))
    for start in range(0, len(data), 1024):
        block = cdist(data[start : start + 1024], data)
        # position 0 after partitioning is the row itself (distance 0)
        out[start : start + len(block)] = np.partition(block, k, axis=1)[:, k]
    return out


def knn_eps(data: np.ndarray, k: int) -> float:
    """
    DBSCAN radius at the knee of the sorted k-distance curve.

    Raises:
        EpsError: If every k-distance is 0.
    """
    curve = np.sort(k_distances(data, k))
    if not np.any(curve > 0):
        raise EpsError("all k-nearest-neighbour distances are 0; no radius can be derived")
    eps = float(curve[find_knee(np.arange(len(curve)), curve)])
    if eps <= 0:
        eps = float(curve[curve > 0][0])
    return eps


def min_pts(dim: int, n: int) -> int:
    """max(4, 2 * dim), capped at n - 1."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    return max(1, min(max(4, 2 * dim), n - 1))


def score_candidate(
    data: np.ndarray,
    candidate: AlgorithmCandidate,
    seed: int = 0,
    distances: Optional[np.ndarray] = None,
    max_noise_fraction: float = 0.5,
    kmeans_restarts: int = 1,
    console: Optional[Console] = None,
) -> Tuple[ScoredCandidate, ClusterAssignment]:
    """
    Fit one candidate and compute its silhouette and CH. DBSCAN outputs with
    fewer than 2 clusters or too much noise stay unscored.
    """
    config = dict(candidate.params)
    if candidate.kind == "kmeans":
        config.setdefault("n_init", kmeans_restarts)
    algorithm = get_algorithm(candidate.kind)(config, seed=seed, console=console)
    assignment = algorithm.execute(data)
    scored = ScoredCandidate(
        candidate=candidate,
        k_effective=assignment.k_effective,
        noise_fraction=assignment.noise_fraction,
    )
    if candidate.kind == "dbscan" and assignment.noise_fraction > max_noise_fraction:
        return scored, assignment
    try:
        scored.silhouette_score = silhouette(data, assignment, distances=distances)
        scored.ch_index = calinski_harabasz(data, assignment)
    except UndefinedMetricError:
        scored.silhouette_score = scored.ch_index = None
    return scored, assignment


def select_from_scores(scored: Sequence[ScoredCandidate], alpha: float) -> Recommendation:
    """
    Two passes over already scored candidates: find the best silhouette, then
    take the highest CH within [best - alpha, best]. CH ties keep list order.

    Raises:
        SelectionError: If no candidate is scorable.
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    scorable = [s for s in scored if s.scorable]
    if not scorable:
        raise SelectionError("no scorable candidate")

    max_silhouette = -np.inf
    for s in scorable:
        if s.silhouette_score > max_silhouette:  # type: ignore[operator]
            max_silhouette = s.silhouette_score  # type: ignore[assignment]
    threshold = max_silhouette - alpha

    best: Optional[ScoredCandidate] = None
    for s in scorable:
        if s.silhouette_score < threshold:  # type: ignore[operator]
            continue
        if best is None or s.ch_index > best.ch_index:  # type: ignore[operator]
            best = s
    assert best is not None
    return Recommendation(
        best_algorithm=best.candidate,
        best_parameters=dict(best.candidate.params),
        max_silhouette=float(max_silhouette),
        silhouette_threshold=float(threshold),
        best_ch_index=float(best.ch_index),  # type: ignore[arg-type]
        alpha=alpha,
        scored=list(scored),
    )


def select_best(
    data: np.ndarray,
    candidates: Sequence[AlgorithmCandidate],
    alpha: float = 0.1,
    seed: int = 0,
    max_noise_fraction: float = 0.5,
    kmeans_restarts: int = 1,
    workers: int = 1,
    console: Optional[Console] = None,
) -> Recommendation:
    """
    Score every candidate (in parallel, results kept in candidate order) and
    apply the silhouette-band / CH rule.
    """
    if not candidates:
        raise SelectionError("no candidates to select from")
    data = as_matrix(data)
    distances = squareform(pdist(data))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = [
            executor.submit(
                score_candidate,
                data,
                candidate,
                seed,
                distances,
                max_noise_fraction,
                kmeans_restarts,
                console,
            )
            for candidate in candidates
        ]
        scored = [future.result()[0] for future in futures]
    return select_from_scores(scored, alpha)


def server_view(noisy: NoisyDataset, standardize: bool = False) -> np.ndarray:
    """The real-valued matrix the server clusters: decoded noisy rows."""
    data = noisy.decoded()
    if standardize:
        data = StandardScaler().fit_transform(data)
    return data


def build_candidates(
    data: np.ndarray,
    config: SelectionConfig,
    seed: int = 0,
    console: Optional[Console] = None,
) -> List[AlgorithmCandidate]:
    """
    kmeans / hierarchical / gmm at the elbow k, dbscan at the knee of the
    k-distance curve with the k-NN index equal to min_pts.
    """
    console = console or Console()
    n, d = data.shape
    lo, hi = config.k_range
    hi = min(hi, n - 1)
    lo = min(lo, hi)
    ks = list(range(lo, hi + 1))
    if len(ks) >= 3:
        k = elbow_k(data, (lo, hi), seed=seed, n_init=config.kmeans_restarts)
    else:
        k = ks[-1]

    candidates = []
    for kind in config.algorithms:
        if kind == "dbscan":
            mp = min_pts(d, n)
            try:
                eps = knn_eps(data, mp)
            except EpsError as e:
                console.log(f"[yellow]Warning: skipping dbscan candidate: {e}[/yellow]")
                continue
            candidates.append(AlgorithmCandidate(kind="dbscan", params={"eps": eps, "min_pts": mp}))
        elif kind == "hierarchical":
            candidates.append(
                AlgorithmCandidate(kind=kind, params={"k": k, "linkage": config.linkage})
            )
        else:
            candidates.append(AlgorithmCandidate(kind=kind, params={"k": k}))
    return candidates


def server_recommend(
    noisy_sample: NoisyDataset,
    config: Optional[SelectionConfig] = None,
    seed: int = 0,
    workers: int = 1,
    console: Optional[Console] = None,
) -> Recommendation:
    """
    Recommend an algorithm and its parameters from noisy rows only.

    Raises:
        TypeError: If given anything but a NoisyDataset.
        SelectionError: If the sample is too small or nothing is scorable.
    """
    if not isinstance(noisy_sample, NoisyDataset):
        raise TypeError(
            f"server_recommend only accepts a NoisyDataset, got {type(noisy_sample).__name__}"
        )
    config = config or SelectionConfig()
    if len(noisy_sample) < 3:
        raise SelectionError(f"need at least 3 shared rows, got {len(noisy_sample)}")
    data = server_view(noisy_sample, config.server_standardize)
    candidates = build_candidates(data, config, seed=seed, console=console)
    return select_best(
        data,
        candidates,
        alpha=config.alpha,
        seed=seed,
        max_noise_fraction=config.max_noise_fraction,
        kmeans_restarts=config.kmeans_restarts,
        workers=workers,
        console=console,
    )
