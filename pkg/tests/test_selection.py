import numpy as np
import pytest

from privclust.errors import EpsError, ParameterError, SelectionError
from privclust.ldp import discretize, perturb_dataset
from privclust.schemas import SelectionConfig
from privclust.selection import (
    AlgorithmCandidate,
    ScoredCandidate,
    build_candidates,
    elbow_k,
    find_knee,
    k_distances,
    knn_eps,
    min_pts,
    score_candidate,
    select_best,
    select_from_scores,
    server_recommend,
    server_view,
    silhouette_k,
)


def scored(kind, silhouette, ch, k=3):
    params = {"eps": 0.5, "min_pts": 4} if kind == "dbscan" else {"k": k}
    return ScoredCandidate(
        candidate=AlgorithmCandidate(kind=kind, params=params),
        silhouette_score=silhouette,
        ch_index=ch,
    )


def oracle(candidates, alpha):
    scorable = [c for c in candidates if c.scorable]
    best_silhouette = max(c.silhouette_score for c in scorable)
    eligible = [c for c in scorable if c.silhouette_score >= best_silhouette - alpha]
    return max(eligible, key=lambda c: c.ch_index)


@pytest.mark.parametrize(
    "scores",
    [
        # first published dataset: GMM, K-Means, HC
        [("gmm", 0.34, 301.30), ("kmeans", 0.36, 318.13), ("hierarchical", 0.31, 237.61)],
        # second published dataset
        [("gmm", 0.23, 46.88), ("kmeans", 0.36, 61.92), ("hierarchical", 0.37, 51.57)],
    ],
)
def test_published_scores_select_kmeans(scores):
    candidates = [scored(kind, s, ch) for kind, s, ch in scores]
    recommendation = select_from_scores(candidates, alpha=0.1)
    assert recommendation.best_algorithm.kind == "kmeans"
    assert recommendation.best_parameters == {"k": 3}
    assert recommendation.max_silhouette == max(s for _, s, _ in scores)
    assert recommendation.silhouette_threshold == pytest.approx(recommendation.max_silhouette - 0.1)


def test_selection_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    kinds = ["kmeans", "hierarchical", "gmm", "dbscan"]
    for _ in range(1000):
        candidates = []
        for i in range(int(rng.integers(1, 7))):
            if rng.random() < 0.2:
                candidates.append(scored(kinds[i % 4], None, None, k=i + 2))
            else:
                candidates.append(
                    scored(
                        kinds[i % 4],
                        float(np.round(rng.uniform(-0.2, 1.0), 2)),
                        float(np.round(rng.uniform(0, 100), 0)),
                        k=i + 2,
                    )
                )
        alpha = float(rng.choice([0.0, 0.05, 0.1, 0.3]))
        if not any(c.scorable for c in candidates):
            with pytest.raises(SelectionError):
                select_from_scores(candidates, alpha)
            continue
        expected = oracle(candidates, alpha)
        assert select_from_scores(candidates, alpha).best_algorithm == expected.candidate


def test_selection_ties_keep_list_order():
    candidates = [scored("gmm", 0.5, 10.0), scored("kmeans", 0.5, 10.0)]
    assert select_from_scores(candidates, 0.1).best_algorithm.kind == "gmm"


def test_single_candidate_and_zero_alpha():
    assert select_from_scores([scored("hierarchical", 0.2, 3.0)], 0.1).best_algorithm.kind == "hierarchical"
    candidates = [scored("kmeans", 0.6, 10.0), scored("gmm", 0.59, 99.0)]
    assert select_from_scores(candidates, 0.0).best_algorithm.kind == "kmeans"


def test_no_scorable_candidate():
    with pytest.raises(SelectionError, match="no scorable candidate"):
        select_from_scores([scored("dbscan", None, None)], 0.1)
    with pytest.raises(ParameterError):
        select_from_scores([scored("kmeans", 0.5, 1.0)], -0.1)


def test_candidate_params_are_validated():
    with pytest.raises(ValueError):
        AlgorithmCandidate(kind="kmeans", params={"k": 0})
    with pytest.raises(ValueError):
        AlgorithmCandidate(kind="dbscan", params={"eps": 0.0, "min_pts": 4})
    assert AlgorithmCandidate(kind="dbscan", params={"eps": 0.25, "min_pts": 4}).describe() == (
        "Eps = 0.25, min_pts = 4"
    )


def test_find_knee():
    assert find_knee([1, 2, 3, 4], [10.0, 2.0, 1.0, 0.5]) == 1
    assert find_knee([0, 1, 2, 3], [3.0, 1.0, 0.0, 0.0]) == 1, "near-ties go to the smaller index"
    assert find_knee([1, 2, 3], [1.0, 1.0, 1.0]) == 1, "a flat curve takes the first interior point"
    assert find_knee([2, 3, 4, 5, 6], [0.0] * 5) == 1
    assert find_knee([1, 2, 3, 4], [4.0, 3.0, 2.0, 1.0]) == 1, "a straight line has no knee"
    assert find_knee([1, 2], [5.0, 1.0]) == 0


def test_elbow_k_finds_seven_blobs(seven_blobs):
    assert elbow_k(seven_blobs.rows, (2, 12), seed=0, n_init=2) == 7


def test_elbow_and_silhouette_ranges(small_blobs):
    with pytest.raises(ParameterError):
        elbow_k(small_blobs.rows, (2, 3))
    with pytest.raises(ParameterError):
        elbow_k(small_blobs.rows, (2, len(small_blobs) + 1))
    with pytest.raises(ParameterError):
        silhouette_k(small_blobs.rows, (1, 5))
    assert silhouette_k(small_blobs.rows, (2, 6)) == 3


def test_k_distances_and_eps():
    line = np.arange(10, dtype=float).reshape(-1, 1)
    assert k_distances(line, 1).tolist() == [1.0] * 10
    assert k_distances(line, 2).tolist()[0] == 2.0
    with pytest.raises(ParameterError):
        k_distances(line, 10)
    with pytest.raises(EpsError):
        knn_eps(np.zeros((6, 2)), 3)
    eps = knn_eps(np.vstack([np.zeros((6, 2)), [[5.0, 5.0]]]), 3)
    assert eps > 0


def test_knn_eps_sits_below_outlier_scale():
    rng = np.random.default_rng(5)
    blobs = np.vstack([rng.normal([0.0, 0.0], 0.1, (95, 2)), rng.normal([10.0, 0.0], 0.1, (95, 2))])
    angles = np.linspace(0.0, 2 * np.pi, 10, endpoint=False)
    outliers = np.column_stack([5.0 + 100.0 * np.cos(angles), 100.0 * np.sin(angles)])
    data = np.vstack([blobs, outliers])
    k = min_pts(2, len(data))

    distances = k_distances(data, k)
    eps = knn_eps(data, k)
    assert np.median(distances[:190]) <= eps <= distances[:190].max()
    assert eps < distances[190:].min()


def test_knn_eps_small_cases():
    assert knn_eps(np.array([[0.0, 0.0], [3.0, 4.0]]), 1) == 5.0
    grid = np.array([[x, y] for x in range(6) for y in range(6)], dtype=float) * 0.5
    assert knn_eps(grid, 1) == pytest.approx(0.5)


def test_min_pts():
    assert min_pts(2, 100) == 4
    assert min_pts(8, 1000) == 16
    assert min_pts(8, 5) == 4
    assert min_pts(10, 1000) == 20
    assert min_pts(1, 3) == 2
    with pytest.raises(ParameterError):
        min_pts(0, 10)


def test_score_candidate_leaves_noisy_dbscan_unscored(small_blobs):
    candidate = AlgorithmCandidate(kind="dbscan", params={"eps": 1e-3, "min_pts": 4})
    result, assignment = score_candidate(small_blobs.rows, candidate)
    assert not result.scorable
    assert assignment.noise_fraction == 1.0

    candidate = AlgorithmCandidate(kind="kmeans", params={"k": 3})
    result, _ = score_candidate(small_blobs.rows, candidate)
    assert result.scorable
    assert result.k_effective == 3


def test_select_best_on_blobs(small_blobs, console):
    candidates = [
        AlgorithmCandidate(kind="kmeans", params={"k": 3}),
        AlgorithmCandidate(kind="kmeans", params={"k": 5}),
        AlgorithmCandidate(kind="hierarchical", params={"k": 2, "linkage": "ward"}),
    ]
    recommendation = select_best(small_blobs.rows, candidates, alpha=0.1, workers=2, console=console)
    assert recommendation.best_algorithm == candidates[0]
    assert [s.candidate for s in recommendation.scored] == candidates
    with pytest.raises(SelectionError):
        select_best(small_blobs.rows, [], console=console)


def test_build_candidates(small_blobs, console):
    config = SelectionConfig(k_range=(2, 8))
    candidates = build_candidates(small_blobs.rows, config, seed=0, console=console)
    kinds = [c.kind for c in candidates]
    assert kinds == ["kmeans", "hierarchical", "gmm", "dbscan"]
    assert all(c.params["k"] == 3 for c in candidates[:3])
    assert candidates[1].params["linkage"] == "ward"
    assert candidates[3].params["min_pts"] == min_pts(2, len(small_blobs))


def test_server_recommend_only_takes_noisy_rows(small_blobs, console):
    with pytest.raises(TypeError):
        server_recommend(small_blobs, console=console)
    noisy = perturb_dataset(discretize(small_blobs), 5.0, seed=0)
    with pytest.raises(SelectionError):
        server_recommend(noisy.subset([0, 1]), console=console)


def test_server_recommend_on_clean_enough_sample(small_blobs, console):
    noisy = perturb_dataset(discretize(small_blobs), 20.0, seed=0)
    config = SelectionConfig(k_range=(2, 8), kmeans_restarts=2)
    recommendation = server_recommend(noisy, config, seed=0, console=console)
    kmeans_scores = [s for s in recommendation.scored if s.candidate.kind == "kmeans"]
    assert kmeans_scores[0].candidate.params["k"] == 3
    assert recommendation.best_algorithm.kind in config.algorithms
    assert recommendation.to_payload()["algorithm"] == recommendation.best_algorithm.kind


def test_server_view_standardizes(small_blobs):
    noisy = perturb_dataset(discretize(small_blobs), 5.0, seed=0)
    view = server_view(noisy, standardize=True)
    assert np.allclose(view.mean(axis=0), 0.0, atol=1e-12)
    assert np.array_equal(server_view(noisy), noisy.decoded())


def test_k_estimates_ignore_rigid_motion_and_scale(small_blobs):
    angle = np.pi / 6
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = 3.5 * small_blobs.rows @ rotation.T + np.array([100.0, -40.0])
    for seed in range(3):
        assert elbow_k(moved, (2, 8), seed=seed) == elbow_k(small_blobs.rows, (2, 8), seed=seed)
        assert silhouette_k(moved, (2, 8), seed=seed) == silhouette_k(small_blobs.rows, (2, 8), seed=seed)
