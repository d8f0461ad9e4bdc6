"""
Membership-inference harness.

A case group has its rows perturbed and shared; a control group never
does. The attacker scores each target by its distance to the nearest shared
row, calibrates a threshold on the control group for a fixed false-positive
rate, and reports the true-positive rate on the case group.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, field_validator
from rich.console import Console
from scipy.spatial.distance import cdist
from sklearn.preprocessing import StandardScaler

from privclust.dataset import Dataset
from privclust.errors import InputError, ParameterError
from privclust.ldp import NoisyDataset, discretize, fit_bin_edges
from privclust.protocol import owner_prepare
from privclust.utils import derive_seeds, rich_as_completed

MIN_GROUP_SIZE = 20


def membership_scores(targets: np.ndarray, shared: np.ndarray) -> np.ndarray:
    """Minimum Euclidean distance from every target row to the shared rows."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    shared = np.atleast_2d(np.asarray(shared, dtype=float))
    if shared.shape[0] == 0 or shared.size == 0:
        raise InputError("the shared set is empty")
    if targets.shape[1] != shared.shape[1]:
        raise InputError(
            f"target has {targets.shape[1]} features, shared rows have {shared.shape[1]}"
        )
    return cdist(targets, shared).min(axis=1)


def membership_score(target: Sequence[float], shared: np.ndarray) -> float:
    """Distance from one target record to its nearest shared row; lower is stronger evidence."""
    return float(membership_scores(np.asarray(target, dtype=float)[None, :], shared)[0])


def calibrate_threshold(control_scores: Sequence[float], target_fpr: float) -> float:
    """
    Lower-interpolated target_fpr quantile of the control scores. Declaring
    "member" when score < threshold keeps the control false-positive rate
    at or below target_fpr.

    Raises:
        ParameterError: If target_fpr is outside (0, 1) or fewer than 20 scores are given.
    """
    if not 0 < target_fpr < 1:
        raise ParameterError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    scores = np.asarray(control_scores, dtype=float)
    if len(scores) < MIN_GROUP_SIZE:
        raise ParameterError(
            f"need at least {MIN_GROUP_SIZE} control scores, got {len(scores)}"
        )
    return float(np.quantile(scores, target_fpr, method="lower"))


@dataclass(frozen=True)
class AttackSetup:
    """
    Attributes:
        case_group (Dataset): Rows whose noisy versions were shared.
        control_group (Dataset): Rows that were never shared.
        shared (NoisyDataset): The attacker's view.
    """

    case_group: Dataset
    control_group: Dataset
    shared: NoisyDataset

    def __post_init__(self) -> None:
        overlap = np.intersect1d(self.case_group.ids, self.control_group.ids)
        if len(overlap):
            raise InputError(f"case and control groups share {len(overlap)} record ids")

    def _attacker_space(self, group: Dataset, scaler: StandardScaler) -> np.ndarray:
        edges = {f.name: f.bin_edges for f in self.shared.schema if f.bin_edges is not None}
        discrete = discretize(group, bin_edges=edges) if edges else group
        return scaler.transform(discrete.decoded())

    def scores(self) -> Tuple[np.ndarray, np.ndarray]:
        """Case and control scores on standardized decoded features."""
        shared = self.shared.decoded()
        scaler = StandardScaler().fit(shared)
        shared = scaler.transform(shared)
        return (
            membership_scores(self._attacker_space(self.case_group, scaler), shared),
            membership_scores(self._attacker_space(self.control_group, scaler), shared),
        )


class AttackResult(BaseModel):
    epsilon: float
    tau: float
    tpr: float
    fpr: float


def attack_once(setup: AttackSetup, epsilon: float, target_fpr: float = 0.1) -> AttackResult:
    case_scores, control_scores = setup.scores()
    tau = calibrate_threshold(control_scores, target_fpr)
    return AttackResult(
        epsilon=epsilon,
        tau=tau,
        tpr=float(np.mean(case_scores < tau)),
        fpr=float(np.mean(control_scores < tau)),
    )


class AttackEntry(BaseModel):
    epsilon: float
    tau: float
    tpr: float
    fpr: float
    tpr_std: float = 0.0
    runs: int = 1


class AttackCurve(BaseModel):
    """Attack power per budget, averaged over seeds, sorted by budget."""

    target_fpr: float
    entries: List[AttackEntry]

    @field_validator("entries")
    @classmethod
    def _sorted(cls, v: List[AttackEntry]) -> List[AttackEntry]:
        return sorted(v, key=lambda e: e.epsilon)

    @property
    def tprs(self) -> List[float]:
        return [e.tpr for e in self.entries]

    def inversions(self, tolerance: float = 0.0) -> List[Tuple[float, float]]:
        """Adjacent budget pairs where the mean TPR drops by more than `tolerance`."""
        return [
            (a.epsilon, b.epsilon)
            for a, b in zip(self.entries, self.entries[1:])
            if b.tpr < a.tpr - tolerance
        ]

    def trend(self) -> str:
        if len(self.entries) < 2:
            return "flat"
        if not self.inversions():
            return "non-decreasing"
        if all(b.tpr <= a.tpr for a, b in zip(self.entries, self.entries[1:])):
            return "non-increasing"
        return "mixed"

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["epsilon", "tau", "tpr", "fpr", "tpr_std", "runs"])
            for e in self.entries:
                writer.writerow(
                    [repr(e.epsilon), repr(e.tau), repr(e.tpr), repr(e.fpr), repr(e.tpr_std), e.runs]
                )


def build_setup(
    data: Dataset,
    epsilon: float,
    case_size: int,
    control_size: int,
    seed: int,
    bins: int = 10,
) -> AttackSetup:
    """
    Draw disjoint case and control groups and share every case row through
    `owner_prepare` at the given budget.
    """
    if case_size < MIN_GROUP_SIZE or control_size < MIN_GROUP_SIZE:
        raise ParameterError(
            f"case and control groups need >= {MIN_GROUP_SIZE} rows, got {case_size} and {control_size}"
        )
    if case_size + control_size > len(data):
        raise ParameterError(
            f"{case_size} + {control_size} group rows exceed the {len(data)} available"
        )
    group_seed, share_seed = derive_seeds(seed, 2)
    order = np.random.default_rng(group_seed).permutation(len(data))
    case = data.subset(np.sort(order[:case_size]))
    control = data.subset(np.sort(order[case_size : case_size + control_size]))
    edges = fit_bin_edges([data], bins)
    state = owner_prepare(case, epsilon, 1.0, share_seed, bins=bins, bin_edges=edges)
    return AttackSetup(case_group=case, control_group=control, shared=state.shared)


def attack_power(
    dataset_factory: Callable[[int], Dataset],
    epsilons: Sequence[float],
    case_size: int,
    control_size: int,
    target_fpr: float = 0.1,
    seeds: Sequence[int] = (0,),
    bins: int = 10,
    workers: int = 1,
    console: Optional[Console] = None,
) -> AttackCurve:
    """
    Attack power over a budget grid, averaged over seeds.

    Args:
        dataset_factory (Callable[[int], Dataset]): Builds the population for a seed.
        epsilons (Sequence[float]): Budgets to evaluate.
        case_size (int): Rows shared by the victim owner.
        control_size (int): Rows never shared.
        target_fpr (float): False-positive rate the threshold is calibrated for.
        seeds (Sequence[int]): One attack per seed and budget.
    """
    if not epsilons:
        raise ParameterError("the budget grid is empty")
    if not 0 < target_fpr < 1:
        raise ParameterError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    console = console or Console()
    populations = {seed: dataset_factory(seed) for seed in seeds}

    def run(epsilon: float, seed: int) -> AttackResult:
        setup = build_setup(populations[seed], epsilon, case_size, control_size, seed, bins)
        return attack_once(setup, epsilon, target_fpr)

    grid = [(float(e), s) for e in epsilons for s in seeds]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = [executor.submit(run, e, s) for e, s in grid]
        results: List[AttackResult] = rich_as_completed(
            futures, desc="Attacking", console=console
        )

    entries = []
    for epsilon in sorted(set(float(e) for e in epsilons)):
        runs = [r for (e, _), r in zip(grid, results) if e == epsilon]
        tprs = np.array([r.tpr for r in runs])
        entries.append(
            AttackEntry(
                epsilon=epsilon,
                tau=float(np.mean([r.tau for r in runs])),
                tpr=float(tprs.mean()),
                fpr=float(np.mean([r.fpr for r in runs])),
                tpr_std=float(tprs.std()),
                runs=len(runs),
            )
        )
    return AttackCurve(target_fpr=target_fpr, entries=entries)
