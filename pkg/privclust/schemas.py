"""
Pydantic models for everything that is read from or written to a
configuration file.

An experiment configuration looks like:

```yaml
name: seven_blobs
dataset:
  type: blobs
  blobs:
    k_true: 7
    n_per_cluster: 300
    dim: 8
    spread: 1.0
    seed: 0
owners:
  shares: [0.5, 0.5]
epsilons: [0.1, 1, 5]
shared_fractions: [0.1]
seeds: [0, 1, 2]
selection:
  alpha: 0.1
  k_range: [2, 12]
attack:
  case_size: 150
  control_size: 150
```
"""

import math
import os
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

AlgorithmKind = Literal["kmeans", "hierarchical", "gmm", "dbscan"]
Linkage = Literal["single", "complete", "average", "ward"]

ALGORITHM_ORDER: Tuple[str, ...] = ("kmeans", "hierarchical", "gmm", "dbscan")


class BlobSpec(BaseModel):
    """
    Isotropic Gaussian blobs used as a desk-scale stand-in for real data.

    Attributes:
        k_true (int): Number of generating clusters.
        n_per_cluster (int): Rows drawn per cluster.
        dim (int): Number of features.
        centers (Optional[List[List[float]]]): k_true x dim centres. When
            omitted, centres are drawn uniformly in [-center_box, center_box].
        spread (Union[float, List[float]]): Standard deviation, shared or per cluster.
        seed (int): Seed of the generator.
    """

    model_config = ConfigDict(frozen=True)

    k_true: int = Field(ge=1)
    n_per_cluster: int = Field(ge=1)
    dim: int = Field(ge=1)
    centers: Optional[List[List[float]]] = None
    spread: Union[float, List[float]] = 1.0
    center_box: float = Field(10.0, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "BlobSpec":
        if self.centers is not None:
            if len(self.centers) != self.k_true:
                raise ValueError(
                    f"'centers' must have k_true={self.k_true} rows, got {len(self.centers)}"
                )
            for row in self.centers:
                if len(row) != self.dim:
                    raise ValueError(f"every centre must have dim={self.dim} values")
        spreads = self.spread if isinstance(self.spread, list) else [self.spread]
        if isinstance(self.spread, list) and len(spreads) != self.k_true:
            raise ValueError("per-cluster 'spread' must have k_true values")
        if any(not (s > 0) for s in spreads):
            raise ValueError("'spread' must be positive")
        return self

    def spreads(self) -> List[float]:
        if isinstance(self.spread, list):
            return list(self.spread)
        return [float(self.spread)] * self.k_true


class DatasetConfig(BaseModel):
    type: Literal["blobs", "csv"]
    blobs: Optional[BlobSpec] = None
    path: Optional[str] = None
    schema_hints: Dict[str, Literal["categorical", "numeric"]] = Field(
        default_factory=dict
    )
    label_column: Optional[str] = None
    id_column: Optional[str] = None

    @model_validator(mode="after")
    def _check_source(self) -> "DatasetConfig":
        if self.type == "blobs" and self.blobs is None:
            raise ValueError("dataset of type 'blobs' needs a 'blobs' section")
        if self.type == "csv":
            if not self.path:
                raise ValueError("dataset of type 'csv' needs a 'path'")
            if not os.path.exists(self.path):
                raise ValueError(f"dataset path does not exist: {self.path}")
        return self


class OwnersConfig(BaseModel):
    shares: List[float] = Field(default_factory=lambda: [0.5, 0.5], min_length=2)

    @field_validator("shares")
    @classmethod
    def _check_shares(cls, v: List[float]) -> List[float]:
        if any(s <= 0 for s in v):
            raise ValueError("owner shares must be positive")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"owner shares must sum to 1, got {sum(v)}")
        return v


class SelectionConfig(BaseModel):
    """
    Server-side search settings.

    Attributes:
        alpha (float): Width of the silhouette band below the best silhouette.
        k_range (Tuple[int, int]): Inclusive cluster-count sweep.
        algorithms (List[str]): Candidate families, scored in this order.
        linkage (str): Linkage used for the hierarchical candidate.
        server_standardize (bool): Standardize the noisy sample before scoring.
        kmeans_restarts (int): Seeded k-means restarts per fit.
        max_noise_fraction (float): DBSCAN candidates labelling more rows as
            noise than this are not scorable.
    """

    alpha: float = Field(0.1, ge=0)
    k_range: Tuple[int, int] = (2, 12)
    algorithms: List[AlgorithmKind] = Field(
        default_factory=lambda: list(ALGORITHM_ORDER), min_length=1
    )
    linkage: Linkage = "ward"
    server_standardize: bool = False
    kmeans_restarts: int = Field(4, ge=1)
    max_noise_fraction: float = Field(0.5, gt=0, le=1)

    @field_validator("k_range")
    @classmethod
    def _check_k_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError(f"k_range must satisfy 1 <= lo <= hi, got {v}")
        return v


class ProtocolConfig(BaseModel):
    """
    Settings of one protocol run. Standardization is a population step
    (`ExperimentConfig.standardize`) and happens before owners exist.
    """

    model_config = ConfigDict(extra="forbid")

    bins: int = Field(10, ge=2)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    evaluate_all: bool = False
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)


class AttackConfig(BaseModel):
    case_size: int = Field(150, ge=20)
    control_size: int = Field(150, ge=20)
    target_fpr: float = Field(0.1, gt=0, lt=1)


class GapVizConfig(BaseModel):
    clusters: Optional[List[int]] = Field(None, min_length=2, max_length=2)
    features: List[int] = Field(default_factory=lambda: [0, 1], min_length=2, max_length=2)


def _finite_positive(values: List[float], name: str) -> List[float]:
    for v in values:
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"every entry of '{name}' must be a positive finite number")
    return values


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    dataset: DatasetConfig
    owners: OwnersConfig = Field(default_factory=OwnersConfig)
    epsilons: List[float] = Field(min_length=1)
    shared_fractions: List[float] = Field(default_factory=lambda: [0.1], min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    bins: int = Field(10, ge=2)
    standardize: bool = False
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    attack: AttackConfig = Field(default_factory=AttackConfig)
    gapviz: GapVizConfig = Field(default_factory=GapVizConfig)
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    output_dir: Optional[str] = None

    @field_validator("epsilons")
    @classmethod
    def _check_epsilons(cls, v: List[float]) -> List[float]:
        return _finite_positive(v, "epsilons")

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, v: List[int]) -> List[int]:
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative integers")
        return v

    @field_validator("shared_fractions")
    @classmethod
    def _check_fractions(cls, v: List[float]) -> List[float]:
        if any(not (0 < f <= 1) for f in v):
            raise ValueError("every shared fraction must lie in (0, 1]")
        return v

    def protocol(self, evaluate_all: bool = False) -> ProtocolConfig:
        return ProtocolConfig(
            bins=self.bins,
            selection=self.selection,
            evaluate_all=evaluate_all,
            workers=self.workers,
        )
