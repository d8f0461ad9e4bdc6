"""
Generalized randomized response over finite state domains, the binning
that gives numeric features a state domain, and the aggregator-side
frequency estimator.
"""

import csv
import json
import math
import os
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from frozendict import frozendict
from pydantic import BaseModel, ConfigDict

from privclust.dataset import Dataset, FeatureSchema
from privclust.errors import (
    ConfigError,
    DomainError,
    EstimationError,
    InputError,
    ParameterError,
    ParseError,
    StateError,
)

DEFAULT_BINS = 10


class RRParams(BaseModel):
    """
    Mechanism constants for one feature: the true state is kept with
    probability p and every other state is reported with probability q.
    """

    model_config = ConfigDict(frozen=True)

    epsilon: float
    m: int
    p: float
    q: float


def rr_params(epsilon: float, m: int) -> RRParams:
    """
    Build the randomized-response constants for a budget and a state count.

    p = e^eps / (e^eps + m - 1) and q = 1 / (e^eps + m - 1), evaluated in
    the e^-eps form so large budgets do not overflow.

    Raises:
        ParameterError: If epsilon is not a positive finite number or m < 1.
    """
    if isinstance(epsilon, bool) or not isinstance(epsilon, (int, float, np.floating, np.integer)):
        raise ParameterError(f"epsilon must be a real number, got {epsilon!r}")
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise ParameterError(f"epsilon must be positive and finite, got {epsilon}")
    if int(m) != m or m < 1:
        raise ParameterError(f"state count m must be a positive integer, got {m}")
    m = int(m)
    if m == 1:
        return RRParams(epsilon=float(epsilon), m=1, p=1.0, q=0.0)
    decay = math.exp(-epsilon)
    denominator = 1.0 + (m - 1) * decay
    return RRParams(epsilon=float(epsilon), m=m, p=1.0 / denominator, q=decay / denominator)


def _respond(codes: np.ndarray, uniforms: np.ndarray, params: RRParams) -> np.ndarray:
    """
    Inverse-CDF response: u < p keeps the code, otherwise the remaining mass
    is split into m-1 slots of width q over the other states.
    """
    if params.m == 1:
        return codes.copy()
    slot = np.floor((uniforms - params.p) / params.q)
    slot = np.clip(slot, 0, params.m - 2).astype(np.int64)
    other = np.where(slot < codes, slot, slot + 1)
    return np.where(uniforms < params.p, codes, other)


def perturb_value(v: int, params: RRParams, rng: np.random.Generator) -> int:
    """Report one state code through the mechanism with a single uniform draw."""
    if int(v) != v or not 0 <= v < params.m:
        raise DomainError(f"value {v} is outside the state domain [0, {params.m})")
    u = rng.random()
    return int(_respond(np.array([int(v)]), np.array([u]), params)[0])


def record_uniforms(seed: int, ids: np.ndarray, d: int) -> np.ndarray:
    """
    n x d uniforms in [0, 1), row i drawn from the stream keyed by
    (seed, ids[i]). Feature j always consumes the j-th draw of its record,
    so the output does not depend on row order or on how rows are batched.
    """
    out = np.empty((len(ids), d), dtype=np.float64)
    for i, record_id in enumerate(ids):
        words = np.random.SeedSequence([seed, int(record_id) % 2**64]).generate_state(
            d, dtype=np.uint64
        )
        out[i] = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return out


def bin_edges_for(values: np.ndarray, bins: int) -> Tuple[float, ...]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        return (lo - 0.5, lo + 0.5)
    return tuple(float(e) for e in np.linspace(lo, hi, bins + 1))


def discretize(
    d: Dataset,
    bins: int = DEFAULT_BINS,
    bin_edges: Optional[Mapping[str, Sequence[float]]] = None,
) -> Dataset:
    """
    Quantize every raw numeric feature into equal-width bins over its
    observed [min, max], or over explicit edges when given. The stored value
    is the bin code and the feature's state count becomes the bin count.
    A constant column collapses to a single state.

    Args:
        d (Dataset): Dataset to discretize.
        bins (int): Bins per numeric feature. Must be at least 2.
        bin_edges (Optional[Mapping[str, Sequence[float]]]): Edges per feature
            name, e.g. from `fit_bin_edges`. Values outside them fall into the
            end bins.
    """
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    explicit = dict(bin_edges or {})
    rows = np.array(d.rows)
    schema: List[FeatureSchema] = []
    for j, feature in enumerate(d.schema):
        if feature.is_discrete:
            schema.append(feature)
            continue
        if feature.name in explicit:
            edges = tuple(float(e) for e in explicit[feature.name])
        else:
            edges = bin_edges_for(rows[:, j], bins)
        m = len(edges) - 1
        codes = np.searchsorted(np.asarray(edges), rows[:, j], side="right") - 1
        rows[:, j] = np.clip(codes, 0, m - 1)
        schema.append(
            FeatureSchema(name=feature.name, kind="numeric", state_count=m, bin_edges=edges)
        )
    return d.replace(rows=rows, schema=schema)


def fit_bin_edges(datasets: Sequence[Dataset], bins: int = DEFAULT_BINS) -> Dict[str, Tuple[float, ...]]:
    """
    Equal-width edges per raw numeric feature over the union range of all
    datasets, so every owner reports on the same grid.
    """
    if not datasets:
        raise InputError("fit_bin_edges needs at least one dataset")
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    names = datasets[0].feature_names
    for other in datasets[1:]:
        if other.feature_names != names:
            raise InputError("all datasets must share one schema to fit common bin edges")
    edges: Dict[str, Tuple[float, ...]] = {}
    for j, feature in enumerate(datasets[0].schema):
        if feature.is_discrete:
            continue
        column = np.concatenate([ds.rows[:, j] for ds in datasets])
        edges[feature.name] = bin_edges_for(column, bins)
    return edges


class NoisyDataset:
    """
    Output of randomized response: state codes per record and feature, plus
    the mechanism constants each feature was perturbed with. Carries no
    labels.
    """

    def __init__(
        self,
        codes: np.ndarray,
        schema: Sequence[FeatureSchema],
        ids: Sequence[int],
        provenance: Mapping[str, RRParams],
        name: str = "noisy",
    ):
        self.schema: Tuple[FeatureSchema, ...] = tuple(schema)
        matrix = np.array(codes, dtype=np.int64)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.schema):
            raise InputError(
                f"codes must be an n x {len(self.schema)} matrix, got shape {matrix.shape}"
            )
        for j, feature in enumerate(self.schema):
            if not feature.is_discrete:
                raise StateError(f"feature '{feature.name}' has no state domain")
            if feature.name not in provenance:
                raise InputError(f"no mechanism recorded for feature '{feature.name}'")
            m = feature.state_count or 1
            if provenance[feature.name].m != m:
                raise InputError(f"feature '{feature.name}': provenance m differs from schema m")
            column = matrix[:, j]
            if np.any(column < 0) or np.any(column >= m):
                raise DomainError(f"feature '{feature.name}' holds codes outside [0, {m})")
        id_array = np.array(ids, dtype=np.int64)
        if id_array.shape != (matrix.shape[0],):
            raise InputError("one record id per row is required")
        matrix.setflags(write=False)
        id_array.setflags(write=False)
        self.codes = matrix
        self.ids = id_array
        self.provenance = frozendict({f.name: provenance[f.name] for f in self.schema})
        self.name = name

    def __len__(self) -> int:
        return self.codes.shape[0]

    def __repr__(self) -> str:
        return f"NoisyDataset(name='{self.name}', n={len(self)}, d={self.d}, epsilon={self.epsilon})"

    @property
    def d(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.schema]

    @property
    def epsilon(self) -> Optional[float]:
        """The common budget, or None if features were perturbed at different budgets."""
        budgets = {params.epsilon for params in self.provenance.values()}
        return budgets.pop() if len(budgets) == 1 else None

    def subset(self, indices: Sequence[int]) -> "NoisyDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return NoisyDataset(self.codes[idx], self.schema, self.ids[idx], self.provenance, self.name)

    def decoded(self) -> np.ndarray:
        """Bin midpoints for numeric features, codes for categorical ones."""
        out = self.codes.astype(np.float64)
        for j, feature in enumerate(self.schema):
            if feature.kind == "numeric":
                out[:, j] = feature.midpoints()[self.codes[:, j]]
        return out

    def counts(self, feature: str) -> np.ndarray:
        j = self.feature_names.index(feature)
        m = self.schema[j].state_count or 1
        return np.bincount(self.codes[:, j], minlength=m)


def perturb_dataset(d: Dataset, epsilon: float, seed: int) -> NoisyDataset:
    """
    Pass every cell through randomized response with its feature's constants.
    Labels are dropped. Cells use independent keyed streams, so the result
    depends only on (seed, record id, feature position).

    Raises:
        StateError: If a numeric feature has not been discretized.
    """
    for feature in d.schema:
        if not feature.is_discrete:
            raise StateError(
                f"numeric feature '{feature.name}' has no bin_edges; call discretize first"
            )
    provenance = {f.name: rr_params(epsilon, f.state_count or 1) for f in d.schema}
    codes = d.rows.astype(np.int64)
    uniforms = record_uniforms(seed, d.ids, d.d)
    noisy = np.empty_like(codes)
    for j, feature in enumerate(d.schema):
        noisy[:, j] = _respond(codes[:, j], uniforms[:, j], provenance[feature.name])
    return NoisyDataset(noisy, d.schema, d.ids, provenance, name=d.name)


def estimate_frequencies(observed_counts: Sequence[float], params: RRParams) -> np.ndarray:
    """
    Unbiased state frequencies from randomized-response counts:
    f_v = (c_v / N - q) / (p - q). The estimates sum to 1 but individual
    entries may fall outside [0, 1].

    Raises:
        EstimationError: If N < 1, m < 2, or p == q.
    """
    counts = np.asarray(observed_counts, dtype=np.float64)
    if counts.ndim != 1 or len(counts) != params.m:
        raise InputError(f"expected {params.m} counts, got shape {counts.shape}")
    if np.any(counts < 0):
        raise InputError("counts must be non-negative")
    total = counts.sum()
    if total < 1:
        raise EstimationError("frequency estimation needs at least one report")
    if params.m < 2:
        raise EstimationError("frequency estimation needs at least 2 states")
    gap = params.p - params.q
    if not gap > 0:
        raise EstimationError("p == q: the mechanism carries no information")
    return (counts / total - params.q) / gap


def estimate_marginals(noisy: NoisyDataset) -> Dict[str, np.ndarray]:
    """Per-feature frequency estimates; single-state features report [1.0]."""
    marginals: Dict[str, np.ndarray] = {}
    for feature in noisy.schema:
        params = noisy.provenance[feature.name]
        if params.m == 1:
            marginals[feature.name] = np.array([1.0])
        else:
            marginals[feature.name] = estimate_frequencies(noisy.counts(feature.name), params)
    return marginals


def sidecar_path(path: str) -> str:
    return f"{path}.meta.json"


def save_noisy(noisy: NoisyDataset, path: str) -> None:
    """Write codes as CSV (id column first) plus a `<path>.meta.json` sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + noisy.feature_names)
        for record_id, row in zip(noisy.ids, noisy.codes):
            writer.writerow([int(record_id)] + [int(v) for v in row])
    meta = {
        "name": noisy.name,
        "n": len(noisy),
        "epsilon": noisy.epsilon,
        "features": [
            {
                "name": f.name,
                "kind": f.kind,
                "m": f.state_count,
                "bin_edges": list(f.bin_edges) if f.bin_edges is not None else None,
                "categories": list(f.categories),
                "epsilon": noisy.provenance[f.name].epsilon,
            }
            for f in noisy.schema
        ],
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)


def load_noisy(path: str) -> NoisyDataset:
    """
    Read a noisy CSV written by `save_noisy`.

    Raises:
        ConfigError: If the CSV or its sidecar is missing or the sidecar is unreadable.
        ParseError: If the CSV does not match the sidecar.
    """
    if not os.path.exists(path):
        raise ConfigError(f"noisy CSV not found: {path}")
    meta_path = sidecar_path(path)
    if not os.path.exists(meta_path):
        raise ConfigError(f"missing sidecar metadata file: {meta_path}")
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        schema = [
            FeatureSchema(
                name=spec["name"],
                kind=spec["kind"],
                state_count=spec["m"],
                bin_edges=tuple(spec["bin_edges"]) if spec.get("bin_edges") else None,
                categories=tuple(spec.get("categories") or ()),
            )
            for spec in meta["features"]
        ]
        provenance = {
            spec["name"]: rr_params(spec.get("epsilon", meta["epsilon"]), spec["m"])
            for spec in meta["features"]
        }
    except (KeyError, TypeError, ValueError) as e:
        # ValueError also covers json decoding, pydantic and ParameterError
        raise ConfigError(f"invalid sidecar {meta_path}: {e}") from e

    names = [f.name for f in schema]
    ids: List[int] = []
    rows: List[List[int]] = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id"] + names:
            raise ParseError(f"header of {path} does not match its sidecar", row=1)
        for raw in reader:
            if not raw:
                continue
            if len(raw) != len(names) + 1:
                raise ParseError(
                    f"expected {len(names) + 1} fields, found {len(raw)}", row=reader.line_num
                )
            try:
                values = [int(token) for token in raw]
            except ValueError:
                raise ParseError("state codes must be integers", row=reader.line_num)
            ids.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise ParseError(f"{path} has no data rows")
    return NoisyDataset(np.array(rows), schema, ids, provenance, name=meta.get("name", "noisy"))
