"""
The BaseAlgorithm class is the abstract base class for every clustering
family. An algorithm is configured by a small parameter dict, validated
through its nested pydantic `schema`, and applied to a row matrix.
"""

import csv
from abc import ABC, ABCMeta, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError
from rich.console import Console

from privclust.errors import InputError, ParameterError
from privclust.utils import classproperty

NOISE = -1


def canonical_labels(labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Renumber non-noise clusters 0..k-1 by first appearance.

    Returns:
        Tuple[np.ndarray, np.ndarray]: The new labels, and for every new id
        the original id it came from.
    """
    raw = np.asarray(labels, dtype=np.int64)
    order: Dict[int, int] = {}
    for value in raw:
        if value != NOISE and int(value) not in order:
            order[int(value)] = len(order)
    out = np.full(raw.shape, NOISE, dtype=np.int64)
    for old, new in order.items():
        out[raw == old] = new
    return out, np.array(list(order), dtype=np.int64)


@dataclass(frozen=True)
class ClusterAssignment:
    """
    Per-row cluster ids. Non-noise ids are contiguous in 0..k_effective-1
    and numbered by first appearance; -1 marks DBSCAN noise.
    """

    labels: np.ndarray
    k_effective: int

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "ClusterAssignment":
        canonical, order = canonical_labels(labels)
        canonical.setflags(write=False)
        return cls(labels=canonical, k_effective=len(order))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def noise_mask(self) -> np.ndarray:
        return self.labels == NOISE

    @property
    def noise_fraction(self) -> float:
        return float(self.noise_mask.mean()) if len(self) else 0.0

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels[~self.noise_mask], minlength=self.k_effective)

    def to_csv(self, path: str, ids: Sequence[int]) -> None:
        if len(ids) != len(self):
            raise InputError(f"{len(ids)} record ids for {len(self)} labels")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["id", "cluster"])
            for record_id, label in zip(ids, self.labels):
                writer.writerow([int(record_id), int(label)])


def check_k(k: int, n: int) -> None:
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of rows n={n}")


def as_matrix(data: Any) -> np.ndarray:
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise InputError(f"expected a non-empty n x d matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InputError("data contains non-finite values")
    return matrix


class BaseAlgorithmMeta(ABCMeta):
    def __new__(cls, *arg, **kw):
        self = ABCMeta.__new__(cls, *arg, **kw)
        self.schema.__name__ = self.__name__
        return self


class BaseAlgorithm(ABC, metaclass=BaseAlgorithmMeta):
    kind: str = "base"

    def __init__(
        self,
        config: Dict[str, Any],
        seed: int = 0,
        console: Optional[Console] = None,
    ):
        """
        Initialize the algorithm.

        Args:
            config (Dict[str, Any]): Hyper-parameters, validated against `schema`.
            seed (int): Seed for any randomized initialization.
            console (Optional[Console]): Rich console for warnings. Defaults to a new Console.
        """
        self.config = dict(config)
        self.seed = seed
        self.console = console or Console()
        self.syntax_check()

    # This must be overridden in a subclass
    class schema(BaseModel, extra="forbid"):
        pass

    @classproperty
    def json_schema(cls):
        assert hasattr(
            cls.schema, "model_json_schema"
        ), "Programming error: %s.schema must be a pydantic object but is a %s" % (
            cls,
            type(cls.schema),
        )
        return cls.schema.model_json_schema()

    def syntax_check(self) -> None:
        """
        Validate the hyper-parameters.

        Raises:
            ParameterError: If a parameter is missing or out of range.
        """
        try:
            self.params = self.schema.model_validate(self.config)
        except ValidationError as e:
            raise ParameterError(f"invalid {self.kind} parameters: {e}") from e

    @abstractmethod
    def execute(self, data: np.ndarray) -> ClusterAssignment:
        """Cluster the rows of `data`."""
        pass
