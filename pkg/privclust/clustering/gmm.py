from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from rich.console import Console
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from privclust.clustering.base import (
    BaseAlgorithm,
    ClusterAssignment,
    as_matrix,
    check_k,
)
from privclust.clustering.kmeans import kmeans
from privclust.errors import ParameterError


@dataclass(frozen=True)
class GMMResult:
    """
    Attributes:
        assignment (ClusterAssignment): Hard labels by maximum responsibility.
        weights (np.ndarray): Mixing weights, one per component.
        means (np.ndarray): k x d component means.
        covariances (np.ndarray): k x d x d full covariances, reg * I included.
        log_likelihood (Tuple[float, ...]): Mean log-likelihood per sample at
            every accepted EM iteration since the last component re-seed.
        iterations (int): EM iterations run.
        converged (bool): Whether the gain fell below tol before max_iter.
        reseeds (int): Number of degenerate components that were re-seeded.
    """

    assignment: ClusterAssignment
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: Tuple[float, ...]
    iterations: int
    converged: bool
    reseeds: int = 0


def _log_gaussian(data: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    n, d = data.shape
    out = np.empty((n, len(means)))
    for c, (mean, cov) in enumerate(zip(means, covariances)):
        chol = linalg.cholesky(cov, lower=True)
        solved = linalg.solve_triangular(chol, (data - mean).T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, c] = -0.5 * (d * np.log(2 * np.pi) + log_det + np.sum(solved**2, axis=0))
    return out


def _m_step(
    data: np.ndarray, resp: np.ndarray, reg: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    nk = resp.sum(axis=0)
    safe = np.where(nk > 0, nk, 1.0)
    means = (resp.T @ data) / safe[:, None]
    d = data.shape[1]
    covariances = np.empty((len(nk), d, d))
    for c in range(len(nk)):
        diff = data - means[c]
        covariances[c] = (resp[:, c, None] * diff).T @ diff / safe[c] + reg * np.eye(d)
    return nk / len(data), means, covariances, nk


def gmm(
    data: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    reg: float = 1e-6,
    console: Optional[Console] = None,
) -> GMMResult:
    """
    Full-covariance Gaussian mixture fitted by EM.

    Means start from a k-means run with the same seed. Iteration stops when
    the gain in mean log-likelihood drops below `tol`; an iteration that
    would lower the likelihood is discarded. A component whose
    responsibility mass vanishes is re-seeded at the row farthest from all
    current means, with a warning on the console.

    Raises:
        ParameterError: If k < 1, k > n, or reg <= 0.
    """
    data = as_matrix(data)
    n, d = data.shape
    check_k(k, n)
    if not reg > 0:
        raise ParameterError(f"reg must be positive, got {reg}")
    console = console or Console()

    init = kmeans(data, k, seed=seed)
    resp = np.zeros((n, k))
    resp[np.arange(n), init.assignment.labels] = 1.0
    # duplicate rows can leave k-means with fewer clusters; those start empty
    weights, means, covariances, nk = _m_step(data, resp, reg)

    trace: List[float] = []
    reseeds = 0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        empty = np.flatnonzero(nk <= 10 * np.finfo(float).eps * n)
        if len(empty):
            live = np.setdiff1d(np.arange(k), empty)
            distances = cdist(data, means[live], metric="sqeuclidean").min(axis=1)
            for c, row in zip(empty, np.argsort(-distances, kind="stable")):
                console.log(
                    f"[yellow]Warning: GMM component {c} lost all responsibility mass; "
                    f"re-seeding it at row {row}[/yellow]"
                )
                means[c] = data[row]
                covariances[c] = np.cov(data, rowvar=False, bias=True).reshape(d, d) + reg * np.eye(d)
                weights[c] = 1.0 / n
            weights = weights / weights.sum()
            reseeds += len(empty)
            trace = []

        log_prob = _log_gaussian(data, means, covariances) + np.log(np.maximum(weights, 1e-300))
        log_norm = logsumexp(log_prob, axis=1)
        log_likelihood = float(np.mean(log_norm))
        if trace and log_likelihood < trace[-1]:
            converged = True
            break
        accepted = (weights, means, covariances, log_prob)
        trace.append(log_likelihood)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        resp = np.exp(log_prob - log_norm[:, None])
        weights, means, covariances, nk = _m_step(data, resp, reg)

    weights, means, covariances, log_prob = accepted
    labels = np.argmax(log_prob, axis=1)
    return GMMResult(
        assignment=ClusterAssignment.from_labels(labels),
        weights=weights,
        means=means,
        covariances=covariances,
        log_likelihood=tuple(trace),
        iterations=iterations,
        converged=converged,
        reseeds=reseeds,
    )


class GMMAlgorithm(BaseAlgorithm):
    kind = "gmm"

    class schema(BaseModel, extra="forbid"):
        k: int = Field(ge=1)
        max_iter: int = Field(200, ge=1)
        tol: float = Field(1e-6, ge=0)
        reg: float = Field(1e-6, gt=0)

    def fit(self, data: np.ndarray) -> GMMResult:
        return gmm(
            data,
            self.params.k,
            seed=self.seed,
            max_iter=self.params.max_iter,
            tol=self.params.tol,
            reg=self.params.reg,
            console=self.console,
        )

    def execute(self, data: np.ndarray) -> ClusterAssignment:
        return self.fit(data).assignment
