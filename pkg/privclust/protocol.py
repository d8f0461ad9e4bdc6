"""
The collaborative flow between data owners and a semi-honest server:

1. every owner discretizes and perturbs its rows with randomized response;
2. every owner shares a uniform sample of its noisy rows;
3. the server pools the shares and scores candidate algorithms;
4. the server broadcasts its recommendation;
5. the owners cluster their pooled clean rows with it and evaluate.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from rich.console import Console

from privclust.clustering import ClusterAssignment, get_algorithm
from privclust.dataset import Dataset, concat_datasets
from privclust.errors import ParameterError, PrivclustError, ProtocolError, ShareError
from privclust.ldp import NoisyDataset, discretize, fit_bin_edges, perturb_dataset, rr_params
from privclust.metrics import MetricReport, evaluate
from privclust.schemas import ProtocolConfig
from privclust.selection import (
    AlgorithmCandidate,
    Recommendation,
    ScoredCandidate,
    server_recommend,
)
from privclust.utils import derive_seeds


@dataclass(frozen=True)
class OwnerState:
    """
    Attributes:
        owner_id (int): Position of the owner in the collaboration.
        dataset (Dataset): The owner's discretized rows, labels included.
        noisy (NoisyDataset): All rows after randomized response.
        share_fraction (float): Fraction f of noisy rows sent to the server.
        shared (NoisyDataset): The rows actually sent.
    """

    owner_id: int
    dataset: Dataset
    noisy: NoisyDataset
    share_fraction: float
    shared: NoisyDataset


def shared_count(n: int, f: float) -> int:
    """round(f * n), halves rounded up."""
    return int(np.floor(f * n + 0.5))


def owner_prepare(
    d: Dataset,
    epsilon: float,
    f: float,
    seed: int,
    bins: int = 10,
    bin_edges: Optional[Mapping[str, Sequence[float]]] = None,
    owner_id: int = 0,
) -> OwnerState:
    """
    Perturb all of an owner's rows and sample round(f * n) of them without
    replacement for the server. Labels never leave the owner.

    Raises:
        ParameterError: If f is outside (0, 1] or epsilon is not positive.
        ShareError: If round(f * n) is 0.
    """
    if not 0 < f <= 1:
        raise ParameterError(f"share fraction must lie in (0, 1], got {f}")
    rr_params(epsilon, 2)
    count = shared_count(len(d), f)
    if count == 0:
        raise ShareError(f"owner {owner_id}: round({f} * {len(d)}) = 0 rows would be shared")

    perturb_seed, share_seed = derive_seeds(seed, 2)
    discrete = discretize(d, bins=bins, bin_edges=bin_edges)
    noisy = perturb_dataset(discrete.without_labels(), epsilon, perturb_seed)
    picked = np.random.default_rng(share_seed).choice(len(noisy), size=count, replace=False)
    return OwnerState(
        owner_id=owner_id,
        dataset=discrete,
        noisy=noisy,
        share_fraction=f,
        shared=noisy.subset(np.sort(picked)),
    )


def server_combine(shares: Sequence[NoisyDataset]) -> NoisyDataset:
    """
    Concatenate the owners' shares, keeping record ids and provenance.

    Raises:
        ProtocolError: If there are no shares, or schemas or budgets differ.
    """
    if not shares:
        raise ProtocolError("server_combine", "no shares received")
    first = shares[0]
    for i, share in enumerate(shares[1:], start=1):
        if share.schema != first.schema:
            raise ProtocolError("server_combine", f"share {i} has a different schema")
        if dict(share.provenance) != dict(first.provenance):
            raise ProtocolError(
                "server_combine", f"share {i} was perturbed with a different budget"
            )
    return NoisyDataset(
        np.vstack([s.codes for s in shares]),
        first.schema,
        np.concatenate([s.ids for s in shares]),
        first.provenance,
        name="combined",
    )


@dataclass(frozen=True)
class CandidateReport:
    """A server candidate re-run on the clean pooled data."""

    scored: ScoredCandidate
    metrics: MetricReport
    recommended: bool


@dataclass
class RunReport:
    """
    Attributes:
        recommendation (Recommendation): The server's payload.
        final_assignment (ClusterAssignment): Step-5 clustering of the clean pooled rows.
        metrics (MetricReport): Metrics of the final assignment against ground truth.
        provenance (Dict[str, Any]): Budget, share fraction, seeds and algorithm grid.
        combined (NoisyDataset): What the server saw.
        clean (Dataset): The pooled clean rows the owners clustered.
        candidates (List[CandidateReport]): Every candidate on the clean data,
            filled when the protocol runs with evaluate_all.
    """

    recommendation: Recommendation
    final_assignment: ClusterAssignment
    metrics: MetricReport
    provenance: Dict[str, Any]
    combined: NoisyDataset
    clean: Dataset
    candidates: List[CandidateReport] = field(default_factory=list)

    def to_record(self) -> Dict[str, Any]:
        return {
            "provenance": self.provenance,
            "recommendation": self.recommendation.to_payload(),
            "server_scores": [
                s.model_dump(mode="json") for s in self.recommendation.scored
            ],
            "final": {
                "k_effective": self.final_assignment.k_effective,
                "cluster_sizes": [int(s) for s in self.final_assignment.sizes()],
                "metrics": self.metrics.model_dump(mode="json"),
            },
            "candidates": [
                {
                    "algorithm": c.scored.candidate.kind,
                    "params": c.scored.candidate.params,
                    "recommended": c.recommended,
                    "metrics": c.metrics.model_dump(mode="json"),
                }
                for c in self.candidates
            ],
        }


def cluster_clean(
    clean: Dataset,
    candidate: AlgorithmCandidate,
    seed: int,
    kmeans_restarts: int = 1,
    console: Optional[Console] = None,
) -> ClusterAssignment:
    config = dict(candidate.params)
    if candidate.kind == "kmeans":
        config.setdefault("n_init", kmeans_restarts)
    algorithm = get_algorithm(candidate.kind)(config, seed=seed, console=console)
    return algorithm.execute(clean.rows)


def run_protocol(
    owners: Sequence[Dataset],
    epsilon: float,
    f: float,
    config: Optional[ProtocolConfig] = None,
    seed: int = 0,
    console: Optional[Console] = None,
) -> RunReport:
    """
    Run the five steps for one (epsilon, f, seed) point.

    Owners report on a common grid of equal-width bins fitted over all of
    them. Step 5 runs the recommended algorithm on the pooled clean rows.

    Raises:
        ProtocolError: Naming the step that failed.
    """
    config = config or ProtocolConfig()
    console = console or Console()
    if len(owners) < 2:
        raise ProtocolError("owner_prepare", f"collaboration needs >= 2 owners, got {len(owners)}")
    names = owners[0].feature_names
    if any(o.feature_names != names for o in owners[1:]):
        raise ProtocolError("owner_prepare", "owners do not share one schema")

    seeds = derive_seeds(seed, len(owners) + 1)
    owner_seeds, server_seed = seeds[:-1], seeds[-1]

    try:
        edges = fit_bin_edges(owners, config.bins)
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            futures = [
                executor.submit(
                    owner_prepare, owner, epsilon, f, owner_seeds[i], config.bins, edges, i
                )
                for i, owner in enumerate(owners)
            ]
            states = [future.result() for future in futures]
    except PrivclustError as e:
        if isinstance(e, ProtocolError):
            raise
        raise ProtocolError("owner_prepare", str(e)) from e

    combined = server_combine([s.shared for s in states])

    try:
        recommendation = server_recommend(
            combined, config.selection, seed=server_seed, workers=config.workers, console=console
        )
    except PrivclustError as e:
        raise ProtocolError("server_recommend", str(e)) from e

    clean = concat_datasets(owners, name="clean")
    restarts = config.selection.kmeans_restarts
    try:
        final = cluster_clean(
            clean, recommendation.best_algorithm, server_seed, restarts, console
        )
    except PrivclustError as e:
        raise ProtocolError("collaborative_clustering", str(e)) from e

    try:
        metrics = evaluate(clean.rows, final, clean.labels)
        candidates = []
        if config.evaluate_all:
            for scored in recommendation.scored:
                if scored.candidate == recommendation.best_algorithm:
                    assignment = final
                else:
                    assignment = cluster_clean(
                        clean, scored.candidate, server_seed, restarts, console
                    )
                candidates.append(
                    CandidateReport(
                        scored=scored,
                        metrics=evaluate(clean.rows, assignment, clean.labels),
                        recommended=scored.candidate == recommendation.best_algorithm,
                    )
                )
    except PrivclustError as e:
        raise ProtocolError("evaluate", str(e)) from e

    provenance = {
        "epsilon": epsilon,
        "share_fraction": f,
        "seed": seed,
        "owner_seeds": owner_seeds,
        "server_seed": server_seed,
        "owners": len(owners),
        "owner_sizes": [len(o) for o in owners],
        "shared_rows": len(combined),
        "bins": config.bins,
        "algorithms": list(config.selection.algorithms),
        "alpha": config.selection.alpha,
        "k_range": list(config.selection.k_range),
    }
    return RunReport(
        recommendation=recommendation,
        final_assignment=final,
        metrics=metrics,
        provenance=provenance,
        combined=combined,
        clean=clean,
        candidates=candidates,
    )
