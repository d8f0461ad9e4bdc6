"""
Record matrices, their per-feature schema, CSV ingestion, and the
synthetic blobs used for desk-scale experiments.
"""

import csv
import json
import math
import os
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from sklearn.preprocessing import StandardScaler

from privclust.errors import ConfigError, DomainError, InputError, ParameterError, ParseError
from privclust.schemas import BlobSpec, DatasetConfig


class FeatureSchema(BaseModel):
    """
    Description of a single feature.

    Attributes:
        name (str): Column name.
        kind (str): 'categorical' or 'numeric'.
        state_count (Optional[int]): Number of states m used by randomized
            response. None for a numeric feature that has not been discretized.
        bin_edges (Optional[Tuple[float, ...]]): m+1 strictly increasing edges,
            set once a numeric feature is discretized.
        categories (Tuple[str, ...]): Original tokens of a categorical feature,
            indexed by state code.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal["categorical", "numeric"]
    state_count: Optional[int] = None
    bin_edges: Optional[Tuple[float, ...]] = None
    categories: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "FeatureSchema":
        if self.state_count is not None and self.state_count < 1:
            raise ValueError(f"feature '{self.name}': state_count must be >= 1")
        if self.kind == "categorical":
            if self.state_count is None:
                raise ValueError(f"categorical feature '{self.name}' needs a state_count")
            if self.bin_edges is not None:
                raise ValueError(f"categorical feature '{self.name}' cannot have bin_edges")
            if self.categories and len(self.categories) != self.state_count:
                raise ValueError(
                    f"feature '{self.name}': {len(self.categories)} categories for m={self.state_count}"
                )
        else:
            if self.bin_edges is not None:
                edges = np.asarray(self.bin_edges, dtype=float)
                if self.state_count is None or len(edges) != self.state_count + 1:
                    raise ValueError(f"feature '{self.name}': bin_edges must have m+1 values")
                if not np.all(np.diff(edges) > 0):
                    raise ValueError(f"feature '{self.name}': bin_edges must be strictly increasing")
            elif self.state_count is not None:
                raise ValueError(
                    f"numeric feature '{self.name}' has a state_count but no bin_edges"
                )
        return self

    @property
    def is_discrete(self) -> bool:
        return self.kind == "categorical" or self.bin_edges is not None

    def midpoints(self) -> np.ndarray:
        if self.bin_edges is None:
            raise ParameterError(f"feature '{self.name}' has no bin_edges")
        edges = np.asarray(self.bin_edges, dtype=float)
        return (edges[:-1] + edges[1:]) / 2.0


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


class Dataset:
    """
    An immutable record matrix with stable record ids and optional
    ground-truth labels.

    Categorical and discretized numeric values are stored as state codes in
    a float matrix; raw numeric values keep full precision. Labels exist only
    for evaluation and are never handed to the server.
    """

    def __init__(
        self,
        rows: np.ndarray,
        schema: Sequence[FeatureSchema],
        ids: Optional[Sequence[int]] = None,
        labels: Optional[Sequence[int]] = None,
        label_names: Optional[Sequence[str]] = None,
        name: str = "dataset",
    ):
        self.schema: Tuple[FeatureSchema, ...] = tuple(schema)
        matrix = np.array(rows, dtype=np.float64)
        if matrix.ndim == 1 and len(self.schema) == 1:
            matrix = matrix.reshape(-1, 1)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.schema):
            raise InputError(
                f"rows must be an n x {len(self.schema)} matrix, got shape {matrix.shape}"
            )
        n = matrix.shape[0]
        id_array = np.arange(n, dtype=np.int64) if ids is None else np.array(ids, dtype=np.int64)
        if id_array.shape != (n,):
            raise InputError(f"expected {n} record ids, got {id_array.shape[0]}")
        if len(np.unique(id_array)) != n:
            raise InputError("record ids must be unique")
        label_array = None
        if labels is not None:
            label_array = np.array(labels, dtype=np.int64)
            if label_array.shape != (n,):
                raise InputError(f"labels must cover all {n} rows")

        for j, feature in enumerate(self.schema):
            if feature.is_discrete:
                column = matrix[:, j]
                m = feature.state_count or 1
                if np.any(column != np.floor(column)) or np.any(column < 0) or np.any(column >= m):
                    raise DomainError(
                        f"feature '{feature.name}' holds values outside its {m} states"
                    )

        self.rows = _frozen(matrix)
        self.ids = _frozen(id_array)
        self.labels = None if label_array is None else _frozen(label_array)
        self.label_names: Tuple[str, ...] = tuple(label_names or ())
        self.name = name

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __repr__(self) -> str:
        return (
            f"Dataset(name='{self.name}', n={len(self)}, d={self.d}, "
            f"labels={'yes' if self.labels is not None else 'no'})"
        )

    @property
    def d(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.schema]

    def replace(
        self,
        rows: Optional[np.ndarray] = None,
        schema: Optional[Sequence[FeatureSchema]] = None,
        keep_labels: bool = True,
    ) -> "Dataset":
        return Dataset(
            self.rows if rows is None else rows,
            self.schema if schema is None else schema,
            ids=self.ids,
            labels=self.labels if keep_labels else None,
            label_names=self.label_names if keep_labels else None,
            name=self.name,
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Rows at the given positions, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.rows[idx],
            self.schema,
            ids=self.ids[idx],
            labels=None if self.labels is None else self.labels[idx],
            label_names=self.label_names,
            name=self.name,
        )

    def without_labels(self) -> "Dataset":
        return self.replace(keep_labels=False)

    def decoded(self) -> np.ndarray:
        """
        Real-valued view of the rows: binned numeric features become their
        bin midpoints, categorical codes and raw values pass through.
        """
        out = np.array(self.rows, dtype=np.float64)
        for j, feature in enumerate(self.schema):
            if feature.kind == "numeric" and feature.bin_edges is not None:
                out[:, j] = feature.midpoints()[self.rows[:, j].astype(np.int64)]
        return out

    def to_csv(self, path: str, id_column: str = "id", label_column: str = "label") -> None:
        """
        Write the dataset with a header row. Categorical features are written
        as their original tokens, and the schema (full category vocabularies,
        bin edges, label names) goes to a `<path>.schema.json` sidecar, so
        `ingest_csv` recovers the same codes even when some states do not
        occur in the written rows.
        """
        header = [id_column] + self.feature_names
        if self.labels is not None:
            header.append(label_column)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for i in range(len(self)):
                record: List[str] = [str(int(self.ids[i]))]
                for j, feature in enumerate(self.schema):
                    value = self.rows[i, j]
                    if feature.kind == "categorical" and feature.categories:
                        record.append(feature.categories[int(value)])
                    elif feature.is_discrete:
                        record.append(str(int(value)))
                    else:
                        record.append(repr(float(value)))
                if self.labels is not None:
                    label = int(self.labels[i])
                    record.append(
                        self.label_names[label] if self.label_names else str(label)
                    )
                writer.writerow(record)
        meta = {
            "name": self.name,
            "id_column": id_column,
            "label_column": label_column if self.labels is not None else None,
            "label_names": list(self.label_names),
            "features": [f.model_dump(mode="json") for f in self.schema],
        }
        with open(schema_sidecar_path(path), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2)


def _parse_real(token: str, column: str, row: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric value '{token}' in numeric column '{column}'", row=row)
    if not math.isfinite(value):
        raise ParseError(f"non-finite value '{token}' in numeric column '{column}'", row=row)
    return value


def _is_real(token: str) -> bool:
    try:
        return math.isfinite(float(token))
    except ValueError:
        return False


def _first_appearance_codes(tokens: Sequence[str]) -> Tuple[List[int], Tuple[str, ...]]:
    mapping: Dict[str, int] = {}
    codes = []
    for token in tokens:
        if token not in mapping:
            mapping[token] = len(mapping)
        codes.append(mapping[token])
    return codes, tuple(mapping)


def schema_sidecar_path(path: str) -> str:
    return f"{path}.schema.json"


def _read_schema_sidecar(path: str) -> Optional[Dict[str, Any]]:
    meta_path = schema_sidecar_path(path)
    if not os.path.exists(meta_path):
        return None
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        meta["features"] = {
            spec["name"]: FeatureSchema(**spec) for spec in meta.get("features", [])
        }
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid schema sidecar {meta_path}: {e}") from e
    return meta


def _vocabulary_codes(
    tokens: Sequence[str], vocabulary: Sequence[str], column: str, lines: Sequence[int]
) -> List[int]:
    """Codes from a fixed vocabulary; without one, tokens must be integer codes."""
    mapping = {token: code for code, token in enumerate(vocabulary)}
    codes = []
    for token, line in zip(tokens, lines):
        if mapping:
            if token not in mapping:
                raise ParseError(f"unknown token '{token}' in column '{column}'", row=line)
            codes.append(mapping[token])
        else:
            try:
                codes.append(int(token))
            except ValueError:
                raise ParseError(f"state code '{token}' in column '{column}' is not an integer", row=line)
    return codes


def ingest_csv(
    path: str,
    schema_hints: Optional[Mapping[str, str]] = None,
    label_column: Optional[str] = None,
    id_column: Optional[str] = None,
    name: Optional[str] = None,
) -> Dataset:
    """
    Read a CSV file with a header row into a Dataset.

    Columns named in `schema_hints` get the hinted kind; the others are
    numeric when every cell parses as a finite real, categorical otherwise.
    Categorical tokens (and label classes) are coded by first appearance.

    A `<path>.schema.json` sidecar written by `Dataset.to_csv` takes
    precedence: its vocabularies, bin edges and label names fix the codes,
    and its id and label columns are used unless given explicitly. A hint
    that disagrees with the sidecar's kind drops the sidecar for that column.

    Args:
        path (str): Path to the CSV file.
        schema_hints (Optional[Mapping[str, str]]): Column name -> 'categorical' | 'numeric'.
        label_column (Optional[str]): Ground-truth column, kept out of the features.
        id_column (Optional[str]): Integer record-id column. Row order is used otherwise.
        name (Optional[str]): Dataset name. Defaults to the file stem.

    Raises:
        ParseError: On an empty file, ragged rows, missing cells, or
            non-numeric tokens in numeric columns. The message names the row.
        ConfigError: If a hinted, label or id column is not in the header.
    """
    hints = dict(schema_hints or {})
    if not os.path.exists(path):
        raise ConfigError(f"CSV file not found: {path}")
    saved = _read_schema_sidecar(path)
    saved_features: Dict[str, FeatureSchema] = saved["features"] if saved else {}
    if saved:
        id_column = id_column or saved.get("id_column")
        label_column = label_column or saved.get("label_column")
        name = name or saved.get("name")

    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty")
        records: List[List[str]] = []
        line_numbers: List[int] = []
        for raw in reader:
            if not raw:
                continue
            if len(raw) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(raw)}", row=reader.line_num
                )
            cells = [c.strip() for c in raw]
            for column, cell in zip(header, cells):
                if cell == "":
                    raise ParseError(f"missing value in column '{column}'", row=reader.line_num)
            records.append(cells)
            line_numbers.append(reader.line_num)

    if not records:
        raise ParseError(f"{path} has a header but no data rows")
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", row=1)
    for column in [*hints, label_column, id_column]:
        if column is not None and column not in header:
            raise ConfigError(f"column '{column}' is not in the header of {path}")

    columns = {h: [r[j] for r in records] for j, h in enumerate(header)}

    ids = None
    if id_column is not None:
        ids = []
        for token, line in zip(columns[id_column], line_numbers):
            try:
                ids.append(int(token))
            except ValueError:
                raise ParseError(f"record id '{token}' is not an integer", row=line)
        if len(set(ids)) != len(ids):
            raise ParseError(f"duplicate record ids in column '{id_column}'")

    labels = label_names = None
    if label_column is not None:
        if saved and label_column == saved.get("label_column"):
            label_names = tuple(saved.get("label_names") or ())
            labels = _vocabulary_codes(columns[label_column], label_names, label_column, line_numbers)
        else:
            labels, label_names = _first_appearance_codes(columns[label_column])

    schema: List[FeatureSchema] = []
    matrix_columns: List[List[float]] = []
    for column in header:
        if column in (label_column, id_column):
            continue
        tokens = columns[column]
        known = saved_features.get(column)
        if known is not None and hints.get(column, known.kind) == known.kind:
            schema.append(known)
            if known.is_discrete:
                codes = _vocabulary_codes(tokens, known.categories, column, line_numbers)
                matrix_columns.append([float(c) for c in codes])
            else:
                matrix_columns.append(
                    [_parse_real(t, column, line) for t, line in zip(tokens, line_numbers)]
                )
            continue
        kind = hints.get(column)
        if kind is None:
            kind = "numeric" if all(_is_real(t) for t in tokens) else "categorical"
        if kind == "numeric":
            values = [_parse_real(t, column, line) for t, line in zip(tokens, line_numbers)]
            schema.append(FeatureSchema(name=column, kind="numeric"))
            matrix_columns.append(values)
        else:
            codes, categories = _first_appearance_codes(tokens)
            schema.append(
                FeatureSchema(
                    name=column,
                    kind="categorical",
                    state_count=len(categories),
                    categories=categories,
                )
            )
            matrix_columns.append([float(c) for c in codes])

    if not schema:
        raise ParseError(f"{path} has no feature columns")

    rows = np.array(matrix_columns, dtype=np.float64).T
    return Dataset(
        rows,
        schema,
        ids=ids,
        labels=labels,
        label_names=label_names,
        name=name or os.path.splitext(os.path.basename(path))[0],
    )


def standardize(d: Dataset) -> Dataset:
    """
    Z-score every raw numeric column (population standard deviation, so
    [0, 2] becomes [-1, 1]). Constant columns are only centered.
    Categorical and discretized columns are left alone.
    """
    if len(d) < 2:
        raise ParameterError("standardize needs at least 2 rows")
    numeric = [j for j, feature in enumerate(d.schema) if not feature.is_discrete]
    rows = np.array(d.rows)
    if numeric:
        rows[:, numeric] = StandardScaler().fit_transform(rows[:, numeric])
    return d.replace(rows=rows)


def share_sizes(n: int, shares: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of n rows; ties go to earlier shares."""
    raw = np.asarray(shares, dtype=float) * n
    sizes = np.floor(raw).astype(int)
    remainder = n - int(sizes.sum())
    order = sorted(range(len(shares)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:remainder]:
        sizes[i] += 1
    return [int(s) for s in sizes]


def partition(d: Dataset, shares: Sequence[float], seed: int) -> List[Dataset]:
    """
    Split a dataset into disjoint owner datasets of sizes within one row of
    n * share. Rows are assigned through a seeded permutation and keep their
    original relative order inside each part.

    Raises:
        ConfigError: If a share is not positive or the shares do not sum to 1.
    """
    if not shares or any(s <= 0 for s in shares):
        raise ConfigError("owner shares must be positive")
    if abs(sum(shares) - 1.0) > 1e-9:
        raise ConfigError(f"owner shares must sum to 1, got {sum(shares)}")

    sizes = share_sizes(len(d), shares)
    permutation = np.random.default_rng(seed).permutation(len(d))
    parts = []
    start = 0
    for size in sizes:
        indices = np.sort(permutation[start : start + size])
        parts.append(d.subset(indices))
        start += size
    return parts


def concat_datasets(datasets: Sequence[Dataset], name: Optional[str] = None) -> Dataset:
    """
    Stack datasets with one schema row-wise. Labels survive only if every
    part has them.
    """
    if not datasets:
        raise InputError("nothing to concatenate")
    first = datasets[0]
    for other in datasets[1:]:
        if other.schema != first.schema:
            raise InputError(f"schema of '{other.name}' differs from '{first.name}'")
    labelled = all(ds.labels is not None for ds in datasets)
    return Dataset(
        np.vstack([ds.rows for ds in datasets]),
        first.schema,
        ids=np.concatenate([ds.ids for ds in datasets]),
        labels=np.concatenate([ds.labels for ds in datasets]) if labelled else None,  # type: ignore[misc]
        label_names=first.label_names if labelled else None,
        name=name or first.name,
    )


def make_blobs(spec: BlobSpec) -> Dataset:
    """
    Draw isotropic Gaussian blobs. Labels are the generating cluster and
    the output only depends on the spec (seed included).
    """
    rng = np.random.default_rng(spec.seed)
    if spec.centers is not None:
        centers = np.asarray(spec.centers, dtype=float)
    else:
        centers = rng.uniform(-spec.center_box, spec.center_box, size=(spec.k_true, spec.dim))
    blocks = []
    for center, spread in zip(centers, spec.spreads()):
        noise = rng.standard_normal((spec.n_per_cluster, spec.dim))
        blocks.append(center + spread * noise)
    rows = np.vstack(blocks)
    labels = np.repeat(np.arange(spec.k_true), spec.n_per_cluster)
    schema = [FeatureSchema(name=f"x{j}", kind="numeric") for j in range(spec.dim)]
    return Dataset(rows, schema, labels=labels, name="blobs")


def load_dataset(config: DatasetConfig) -> Dataset:
    """Build the dataset an experiment configuration points at."""
    if config.type == "blobs":
        assert config.blobs is not None
        return make_blobs(config.blobs)
    assert config.path is not None
    return ingest_csv(
        config.path,
        schema_hints=config.schema_hints,
        label_column=config.label_column,
        id_column=config.id_column,
    )
