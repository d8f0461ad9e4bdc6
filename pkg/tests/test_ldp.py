import math
import os

import numpy as np
import pytest

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
from privclust.ldp import (
    NoisyDataset,
    _respond,
    discretize,
    estimate_frequencies,
    estimate_marginals,
    fit_bin_edges,
    load_noisy,
    perturb_dataset,
    perturb_value,
    rr_params,
    save_noisy,
    sidecar_path,
)


@pytest.mark.parametrize("epsilon", [0.1, 1.0, 5.0])
@pytest.mark.parametrize("m", [2, 4, 10])
def test_rr_params_ratio_is_exp_epsilon(epsilon, m):
    params = rr_params(epsilon, m)
    assert abs(params.p / params.q - math.exp(epsilon)) <= 1e-9 * math.exp(epsilon)
    assert abs(params.p + (m - 1) * params.q - 1.0) < 1e-12
    assert params.p > params.q > 0


def test_rr_params_edge_cases():
    single = rr_params(1.0, 1)
    assert (single.p, single.q) == (1.0, 0.0)

    huge = rr_params(1e6, 10)
    assert huge.p == 1.0
    assert huge.q == 0.0

    for bad in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(ParameterError):
            rr_params(bad, 4)
    with pytest.raises(ParameterError):
        rr_params(1.0, 0)


@pytest.mark.parametrize("epsilon", [0.1, 1.0, 5.0])
@pytest.mark.parametrize("m", [2, 4, 10])
def test_empirical_likelihood_ratio(epsilon, m):
    params = rr_params(epsilon, m)
    n = 1_000_000
    rng = np.random.default_rng(17)
    reports = _respond(np.zeros(n, dtype=np.int64), rng.random(n), params)
    kept = np.mean(reports == 0)
    moved = np.mean(reports == 1)
    assert abs(kept / moved / math.exp(epsilon) - 1.0) < 0.05


def test_perturb_value_domain_and_determinism():
    params = rr_params(2.0, 4)
    a = [perturb_value(1, params, np.random.default_rng(3)) for _ in range(5)]
    assert len(set(a)) == 1
    assert 0 <= a[0] < 4
    with pytest.raises(DomainError):
        perturb_value(4, params, np.random.default_rng(0))
    with pytest.raises(DomainError):
        perturb_value(-1, params, np.random.default_rng(0))


def test_perturb_value_single_state():
    params = rr_params(0.5, 1)
    assert perturb_value(0, params, np.random.default_rng(0)) == 0


def test_discretize_equal_width(small_blobs):
    discrete = discretize(small_blobs, bins=10)
    for j, feature in enumerate(discrete.schema):
        assert feature.state_count == 10
        assert len(feature.bin_edges) == 11
        column = small_blobs.rows[:, j]
        assert feature.bin_edges[0] == column.min()
        assert feature.bin_edges[-1] == column.max()
        codes = discrete.rows[:, j]
        assert codes.min() == 0 and codes.max() == 9
    decoded = discrete.decoded()
    width = np.array([f.bin_edges[1] - f.bin_edges[0] for f in discrete.schema])
    assert np.all(np.abs(decoded - small_blobs.rows) <= width / 2 + 1e-9)


def test_discretize_constant_column_collapses():
    schema = [FeatureSchema(name="c", kind="numeric"), FeatureSchema(name="x", kind="numeric")]
    data = Dataset(np.array([[2.0, 0.0], [2.0, 1.0], [2.0, 3.0]]), schema)
    discrete = discretize(data, bins=4)
    assert discrete.schema[0].state_count == 1
    assert discrete.rows[:, 0].tolist() == [0, 0, 0]
    assert discrete.rows[:, 1].tolist() == [0, 1, 3]


def test_discretize_rejects_one_bin(small_blobs):
    with pytest.raises(ParameterError):
        discretize(small_blobs, bins=1)


def test_fit_bin_edges_covers_all_owners(small_blobs):
    left = small_blobs.subset(np.arange(0, 60))
    right = small_blobs.subset(np.arange(60, 120))
    edges = fit_bin_edges([left, right], bins=5)
    for j, name in enumerate(small_blobs.feature_names):
        assert edges[name][0] == small_blobs.rows[:, j].min()
        assert edges[name][-1] == small_blobs.rows[:, j].max()
    a = discretize(left, bin_edges=edges)
    b = discretize(right, bin_edges=edges)
    assert a.schema == b.schema


def test_perturb_requires_discretized(small_blobs):
    with pytest.raises(StateError):
        perturb_dataset(small_blobs, 1.0, seed=0)


def test_perturb_dataset_drops_labels_and_records_provenance(small_blobs):
    noisy = perturb_dataset(discretize(small_blobs), 2.0, seed=0)
    assert isinstance(noisy, NoisyDataset)
    assert not hasattr(noisy, "labels")
    assert noisy.epsilon == 2.0
    assert set(noisy.provenance) == set(small_blobs.feature_names)
    assert np.array_equal(noisy.ids, small_blobs.ids)
    assert noisy.codes.min() >= 0 and noisy.codes.max() < 10


def test_perturb_is_keyed_by_record_not_row_order(small_blobs):
    discrete = discretize(small_blobs)
    noisy = perturb_dataset(discrete, 1.0, seed=9)
    order = np.random.default_rng(0).permutation(len(discrete))
    shuffled = perturb_dataset(discrete.subset(order), 1.0, seed=9)
    assert np.array_equal(shuffled.codes, noisy.codes[order])

    other_seed = perturb_dataset(discrete, 1.0, seed=10)
    assert not np.array_equal(other_seed.codes, noisy.codes)


def test_high_budget_is_identity_on_codes(small_blobs):
    discrete = discretize(small_blobs)
    noisy = perturb_dataset(discrete, 50.0, seed=0)
    assert np.array_equal(noisy.codes, discrete.rows.astype(np.int64))


def test_tiny_budget_gives_uniform_marginals():
    n, m = 100_000, 5
    schema = [FeatureSchema(name="c", kind="categorical", state_count=m)]
    data = Dataset(np.zeros((n, 1)), schema)
    noisy = perturb_dataset(data, 1e-6, seed=2)
    freq = noisy.counts("c") / n
    assert np.all(np.abs(freq - 1 / m) < 0.02)


def test_frequency_oracle_recovers_marginals():
    n = 100_000
    truth = np.array([0.7, 0.2, 0.1])
    codes = np.repeat(np.arange(3), (truth * n).astype(int))
    schema = [FeatureSchema(name="c", kind="categorical", state_count=3)]
    noisy = perturb_dataset(Dataset(codes[:, None], schema), 1.0, seed=21)

    estimate = estimate_frequencies(noisy.counts("c"), rr_params(1.0, 3))
    assert np.all(np.abs(estimate - truth) <= 0.02)
    assert abs(estimate.sum() - 1.0) < 1e-9
    assert np.allclose(estimate_marginals(noisy)["c"], estimate)


def test_frequency_oracle_error_shrinks_with_n():
    truth = np.array([0.7, 0.2, 0.1])
    params = rr_params(1.0, 3)
    schema = [FeatureSchema(name="c", kind="categorical", state_count=3)]
    errors = []
    for n in (1_000, 10_000, 100_000):
        codes = np.repeat(np.arange(3), np.round(truth * n).astype(int))
        data = Dataset(codes[:, None], schema)
        mae = [
            np.abs(estimate_frequencies(perturb_dataset(data, 1.0, seed=s).counts("c"), params) - truth).mean()
            for s in range(4)
        ]
        errors.append(float(np.mean(mae)))
    assert errors[0] > errors[1] > errors[2], errors


def test_columns_are_perturbed_independently():
    n = 100_000
    schema = [FeatureSchema(name=name, kind="categorical", state_count=3) for name in ("a", "b")]
    noisy = perturb_dataset(Dataset(np.zeros((n, 2)), schema), 1.0, seed=8)
    changed = (noisy.codes != 0).astype(float)
    r = np.corrcoef(changed[:, 0], changed[:, 1])[0, 1]
    assert abs(r) < 0.02


def test_estimate_frequencies_errors():
    params = rr_params(1.0, 3)
    with pytest.raises(EstimationError):
        estimate_frequencies([0, 0, 0], params)
    with pytest.raises(InputError):
        estimate_frequencies([1, 2], params)
    with pytest.raises(InputError):
        estimate_frequencies([1, -2, 3], params)
    with pytest.raises(EstimationError):
        estimate_frequencies([4], rr_params(1.0, 1))


def test_estimate_marginals_single_state_feature():
    schema = [FeatureSchema(name="c", kind="categorical", state_count=1)]
    noisy = perturb_dataset(Dataset(np.zeros((4, 1)), schema), 1.0, seed=0)
    assert estimate_marginals(noisy)["c"].tolist() == [1.0]


def test_noisy_dataset_validates_codes(categorical_dataset):
    noisy = perturb_dataset(categorical_dataset, 1.0, seed=0)
    with pytest.raises(DomainError):
        NoisyDataset(noisy.codes + 3, noisy.schema, noisy.ids, noisy.provenance)
    with pytest.raises(InputError):
        NoisyDataset(noisy.codes, noisy.schema, noisy.ids, {})


def test_save_and_load_noisy(tmp_path, small_blobs):
    path = str(tmp_path / "shared.csv")
    noisy = perturb_dataset(discretize(small_blobs, bins=6), 3.0, seed=1)
    save_noisy(noisy, path)

    loaded = load_noisy(path)
    assert np.array_equal(loaded.codes, noisy.codes)
    assert np.array_equal(loaded.ids, noisy.ids)
    assert loaded.schema == noisy.schema
    assert loaded.provenance == noisy.provenance
    assert np.allclose(loaded.decoded(), noisy.decoded())


def test_load_noisy_missing_sidecar(tmp_path, categorical_dataset):
    path = str(tmp_path / "shared.csv")
    save_noisy(perturb_dataset(categorical_dataset, 1.0, seed=0), path)
    os.remove(sidecar_path(path))
    with pytest.raises(ConfigError):
        load_noisy(path)


def test_load_noisy_header_mismatch(tmp_path, categorical_dataset):
    path = tmp_path / "shared.csv"
    save_noisy(perturb_dataset(categorical_dataset, 1.0, seed=0), str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[0] = "id,colour,flag"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ParseError):
        load_noisy(str(path))
