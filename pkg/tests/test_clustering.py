import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.cluster import DBSCAN, KMeans
from sklearn.metrics import adjusted_rand_score

from privclust.clustering import (
    NOISE,
    BaseAlgorithm,
    ClusterAssignment,
    DBSCANParams,
    core_points,
    dbscan,
    get_algorithm,
    get_algorithms,
    gmm,
    hierarchical,
    kmeans,
    linkage_tree,
)
from privclust.clustering.base import canonical_labels
from privclust.errors import InputError, ParameterError


def test_canonical_labels_first_appearance():
    labels, order = canonical_labels([5, 5, -1, 2, 5, 9, 2])
    assert labels.tolist() == [0, 0, -1, 1, 0, 2, 1]
    assert order.tolist() == [5, 2, 9]

    assignment = ClusterAssignment.from_labels([3, -1, 3, 1])
    assert assignment.k_effective == 2
    assert assignment.noise_fraction == 0.25
    assert assignment.sizes().tolist() == [2, 1]


def test_assignment_to_csv(tmp_path):
    assignment = ClusterAssignment.from_labels([1, 0, -1])
    path = tmp_path / "assignment.csv"
    assignment.to_csv(str(path), ids=[10, 11, 12])
    assert path.read_text(encoding="utf-8").splitlines() == ["id,cluster", "10,0", "11,1", "12,-1"]
    with pytest.raises(InputError):
        assignment.to_csv(str(path), ids=[1])


def test_kmeans_recovers_separated_blobs(small_blobs):
    result = kmeans(small_blobs.rows, 3, seed=0)
    assert adjusted_rand_score(small_blobs.labels, result.assignment.labels) == 1.0
    assert result.assignment.k_effective == 3
    assert result.centroids.shape == (3, 2)
    assert result.assignment.labels[0] == 0


def test_kmeans_wcss_trace_never_increases(seven_blobs):
    result = kmeans(seven_blobs.rows, 5, seed=3)
    trace = np.asarray(result.wcss_trace)
    assert np.all(np.diff(trace) <= 1e-9 * trace[:-1]), "Lloyd iterations must not raise WCSS"
    assert trace[-1] == pytest.approx(result.wcss)


def test_kmeans_matches_sklearn_inertia(small_blobs):
    ours = kmeans(small_blobs.rows, 3, seed=1, n_init=4)
    reference = KMeans(n_clusters=3, n_init=10, random_state=0).fit(small_blobs.rows)
    assert ours.wcss == pytest.approx(reference.inertia_, rel=1e-6)


def test_kmeans_is_deterministic(seven_blobs):
    a = kmeans(seven_blobs.rows, 7, seed=5, n_init=2)
    b = kmeans(seven_blobs.rows, 7, seed=5, n_init=2)
    assert np.array_equal(a.assignment.labels, b.assignment.labels)
    assert a.wcss == b.wcss


def test_kmeans_restarts_never_worse(seven_blobs):
    single = kmeans(seven_blobs.rows, 7, seed=2, n_init=1)
    several = kmeans(seven_blobs.rows, 7, seed=2, n_init=4)
    assert several.wcss <= single.wcss * (1 + 1e-12)


def test_kmeans_k_equals_n_has_zero_wcss():
    data = np.random.default_rng(0).normal(size=(6, 2))
    result = kmeans(data, 6)
    assert result.wcss == pytest.approx(0.0, abs=1e-12)
    assert result.assignment.k_effective == 6


def test_kmeans_bad_k_and_input():
    data = np.zeros((4, 2))
    with pytest.raises(ParameterError):
        kmeans(data, 0)
    with pytest.raises(ParameterError):
        kmeans(data, 5)
    with pytest.raises(InputError):
        kmeans(np.empty((0, 2)), 1)
    with pytest.raises(InputError):
        kmeans(np.array([[0.0, np.nan]]), 1)


@pytest.mark.parametrize("method", ["single", "complete", "average", "ward"])
def test_linkage_heights_match_scipy(method):
    data = np.random.default_rng(42).normal(size=(40, 3))
    tree = linkage_tree(data, method)
    reference = linkage(data, method=method)
    assert np.allclose(tree.heights, reference[:, 2])
    assert np.all(np.diff(tree.heights) >= 0)


@pytest.mark.parametrize("method", ["single", "complete", "average", "ward"])
@pytest.mark.parametrize("k", [2, 4, 7])
def test_hierarchical_cut_matches_scipy(method, k):
    data = np.random.default_rng(7).normal(size=(30, 2))
    ours = hierarchical(data, k, linkage=method)
    reference = fcluster(linkage(data, method=method), k, criterion="maxclust")
    assert ours.k_effective == k
    assert adjusted_rand_score(reference, ours.labels) == 1.0


def test_single_linkage_by_hand():
    points = np.array([[0.0], [1.0], [10.0]])
    assert hierarchical(points, 2, linkage="single").labels.tolist() == [0, 0, 1]
    assert linkage_tree(points, "single").heights.tolist() == [1.0, 9.0]


def test_hierarchical_edge_cases(small_blobs):
    data = small_blobs.rows
    assert hierarchical(data, 1).k_effective == 1
    everyone = hierarchical(data, len(data))
    assert everyone.k_effective == len(data)
    with pytest.raises(ParameterError):
        hierarchical(data, 3, linkage="median")
    with pytest.raises(ParameterError):
        hierarchical(data, len(data) + 1)
    assert adjusted_rand_score(small_blobs.labels, hierarchical(data, 3).labels) == 1.0


def test_gmm_recovers_blobs(small_blobs, console):
    result = gmm(small_blobs.rows, 3, seed=0, console=console)
    assert adjusted_rand_score(small_blobs.labels, result.assignment.labels) == 1.0
    assert result.weights.sum() == pytest.approx(1.0)
    assert result.covariances.shape == (3, 2, 2)
    trace = np.asarray(result.log_likelihood)
    assert np.all(np.diff(trace) >= 0), "accepted EM steps never lower the likelihood"


def test_gmm_reseeds_empty_component(console):
    data = np.array([[0.0]] * 10 + [[5.0]] * 10)
    result = gmm(data, 3, seed=0, console=console)
    assert result.reseeds >= 1
    assert "re-seeding" in console.file.getvalue()
    assert len(result.assignment) == 20


def test_gmm_rejects_bad_parameters(small_blobs):
    with pytest.raises(ParameterError):
        gmm(small_blobs.rows, 3, reg=0.0)
    with pytest.raises(ParameterError):
        gmm(small_blobs.rows, 0)


def test_dbscan_marks_isolated_point_as_noise():
    data = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1], [20.0, 20.0]])
    result = dbscan(data, DBSCANParams(eps=0.5, min_pts=3))
    assert result.labels.tolist() == [0, 0, 0, 1, 1, 1, NOISE]
    assert result.k_effective == 2


def test_dbscan_chains_density_connected_points():
    chain = np.array([[0.0], [0.5], [1.0]])
    result = dbscan(chain, DBSCANParams(eps=0.6, min_pts=2))
    assert result.labels.tolist() == [0, 0, 0]
    assert result.k_effective == 1


def test_dbscan_all_noise():
    data = np.arange(5, dtype=float).reshape(-1, 1) * 10
    result = dbscan(data, DBSCANParams(eps=1.0, min_pts=2))
    assert result.k_effective == 0
    assert result.noise_fraction == 1.0


@pytest.mark.parametrize("eps,min_pts", [(0.3, 4), (0.5, 8), (0.8, 5)])
def test_dbscan_matches_sklearn(eps, min_pts):
    data = np.random.default_rng(1).normal(size=(300, 2))
    ours = dbscan(data, DBSCANParams(eps=eps, min_pts=min_pts))
    reference = DBSCAN(eps=eps, min_samples=min_pts).fit(data)

    core = core_points(data, DBSCANParams(eps=eps, min_pts=min_pts))
    assert np.array_equal(np.flatnonzero(core), np.sort(reference.core_sample_indices_))
    assert np.array_equal(ours.noise_mask, reference.labels_ == -1)
    if core.any():
        assert adjusted_rand_score(reference.labels_[core], ours.labels[core]) == 1.0


def test_dbscan_params_validation():
    with pytest.raises(ValueError):
        DBSCANParams(eps=0.0, min_pts=3)
    with pytest.raises(ValueError):
        DBSCANParams(eps=1.0, min_pts=0)


def test_registry_resolves_builtins(console):
    algorithms = get_algorithms()
    assert set(algorithms) >= {"kmeans", "hierarchical", "gmm", "dbscan"}
    for kind, cls in algorithms.items():
        assert issubclass(cls, BaseAlgorithm)
        assert get_algorithm(kind) is cls
        assert cls.schema.__name__ == cls.__name__
        assert "properties" in cls.json_schema
    with pytest.raises(KeyError):
        get_algorithm("spectral")


def test_algorithm_parameters_are_validated(small_blobs, console):
    kmeans_cls = get_algorithm("kmeans")
    with pytest.raises(ParameterError):
        kmeans_cls({"k": 0}, console=console)
    with pytest.raises(ParameterError):
        kmeans_cls({"k": 3, "clusters": 3}, console=console)

    assignment = kmeans_cls({"k": 3}, seed=0, console=console).execute(small_blobs.rows)
    assert assignment.k_effective == 3

    dbscan_cls = get_algorithm("dbscan")
    assignment = dbscan_cls({"eps": 2.0, "min_pts": 4}, console=console).execute(small_blobs.rows)
    assert assignment.k_effective == 3
