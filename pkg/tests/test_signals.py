from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mor.embeddings import EmbeddingIndex
from mor.errors import ContractError
from mor.signals import (
    CAP,
    Clustering,
    SignalBundle,
    choose_k,
    cluster_variance_weight,
    kmeans,
    moran_i,
    perf_norm_weights,
    rep_variance_weight,
    score_variance_weight,
    v_post,
    v_pre,
)
from oracles import best_lloyd_inertia, mean_dim_variance_oracle, moran_oracle


def make_index(vectors, space_id="sig/doc"):
    vectors = np.asarray(vectors, dtype=np.float32)
    ids = [f"d{i}" for i in range(len(vectors))]
    return EmbeddingIndex(space_id, ids, vectors)


def make_clustering(centroids, sizes, items=None):
    centroids = np.asarray(centroids, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    if items is None:
        assignment = {}
        n = 0
        for c, size in enumerate(sizes):
            for _ in range(size):
                assignment[f"i{n}"] = c
                n += 1
    else:
        assignment = items
    return Clustering("sig/doc", len(sizes), centroids, sizes, assignment,
                      seed=0, inertia=0.0, n_iter=1)


class TestChooseK:
    def test_medical_scale_corpus(self):
        assert choose_k(3633) == 8  # 3633 ** 0.25 = 7.76

    def test_small_corpus_clamps_to_three(self):
        assert choose_k(10) == 3

    def test_exact_fourth_power(self):
        assert choose_k(65536) == 16

    @pytest.mark.parametrize("n,expected", [
        (1, 3), (81, 3), (82, 4), (256, 4), (257, 5), (4096, 8), (4097, 9),
    ])
    def test_integer_exact_ceiling(self, n, expected):
        assert choose_k(n) == expected

    def test_zero_rejected(self):
        with pytest.raises(ContractError):
            choose_k(0)


class TestKmeans:
    def test_two_separated_blobs_recovered(self):
        rng = np.random.default_rng(0)
        blob_a = rng.normal(size=(20, 2)) * 0.1 + [10, 0]
        blob_b = rng.normal(size=(20, 2)) * 0.1 + [-10, 0]
        index = make_index(np.vstack([blob_a, blob_b]))
        clustering = kmeans(index, 2, seed=1)
        labels_a = {clustering.assignment[f"d{i}"] for i in range(20)}
        labels_b = {clustering.assignment[f"d{i}"] for i in range(20, 40)}
        assert len(labels_a) == 1 and len(labels_b) == 1
        assert labels_a != labels_b
        assert sorted(clustering.sizes.tolist()) == [20, 20]

    def test_fixed_seed_reproduces_centroids_exactly(self):
        rng = np.random.default_rng(3)
        index = make_index(rng.normal(size=(30, 4)))
        first = kmeans(index, 4, seed=7)
        second = kmeans(index, 4, seed=7)
        assert first.centroids.tobytes() == second.centroids.tobytes()
        assert first.assignment == second.assignment

    def test_matches_exhaustive_restart_oracle_within_5_percent(self):
        rng = np.random.default_rng(11)
        anchors = np.array([[0, 0], [6, 0], [0, 6], [6, 6]], dtype=np.float64)
        points = np.vstack([a + rng.normal(scale=0.8, size=(3, 2)) for a in anchors])
        index = make_index(points)
        clustering = kmeans(index, 4, seed=5)
        oracle = best_lloyd_inertia(points.astype(np.float64), 4)
        assert clustering.inertia <= 1.05 * oracle

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(9)
        index = make_index(rng.normal(size=(50, 5)))
        clustering = kmeans(index, 6, seed=2)
        history = clustering.inertia_history
        assert all(a >= b - 1e-9 for a, b in zip(history, history[1:]))

    def test_duplicate_points_force_reseeding_path(self):
        # more clusters than distinct points: some become empty mid-run
        points = np.array([[0.0, 0.0]] * 6 + [[5.0, 5.0]] * 6)
        index = make_index(points)
        clustering = kmeans(index, 4, seed=0)
        assert int(clustering.sizes.sum()) == 12

    def test_k_larger_than_items_rejected(self):
        index = make_index(np.eye(3))
        with pytest.raises(ContractError):
            kmeans(index, 4, seed=0)

    def test_sizes_match_assignment(self):
        rng = np.random.default_rng(4)
        index = make_index(rng.normal(size=(25, 3)))
        clustering = kmeans(index, 5, seed=8)
        counted = np.bincount([clustering.assignment[i] for i in index.ids],
                              minlength=5)
        assert counted.tolist() == clustering.sizes.tolist()


class TestVPre:
    def test_single_cluster_hand_case(self):
        # |C| = 4, K = 1, distance 2 -> (4/1) * 1/4 = 1.0
        clustering = make_clustering([[2.0, 0.0]], [4])
        assert v_pre(np.zeros(2), clustering) == pytest.approx(1.0, abs=1e-9)

    def test_symmetric_clusters_cancel_to_zero(self):
        clustering = make_clustering([[3.0, 0.0], [-3.0, 0.0]], [5, 5])
        assert v_pre(np.zeros(2), clustering) == pytest.approx(0.0, abs=1e-9)

    def test_query_on_centroid_returns_cap(self):
        clustering = make_clustering([[1.0, 1.0], [5.0, 5.0]], [3, 3])
        assert v_pre(np.array([1.0, 1.0]), clustering) == CAP

    def test_closer_query_scores_higher(self):
        clustering = make_clustering([[4.0, 0.0]], [8])
        near = v_pre(np.array([3.0, 0.0]), clustering)
        far = v_pre(np.array([0.0, 0.0]), clustering)
        assert near > far

    def test_invariant_under_cluster_relabeling(self):
        rng = np.random.default_rng(2)
        centroids = rng.normal(size=(5, 4))
        sizes = np.array([3, 1, 4, 1, 5])
        q = rng.normal(size=4)
        base = make_clustering(centroids, sizes)
        perm = rng.permutation(5)
        shuffled = make_clustering(centroids[perm], sizes[perm])
        assert v_pre(q, base) == pytest.approx(v_pre(q, shuffled), abs=1e-9)

    def test_invariant_under_joint_rotation(self):
        rng = np.random.default_rng(6)
        centroids = rng.normal(size=(4, 3))
        sizes = np.array([2, 2, 3, 3])
        q = rng.normal(size=3)
        rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        base = make_clustering(centroids, sizes)
        rotated = make_clustering(centroids @ rotation.T, sizes)
        assert v_pre(q @ rotation.T, rotated) == pytest.approx(
            v_pre(q, base), abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 6))
        clustering = make_clustering(rng.normal(size=(k, 3)),
                                     rng.integers(1, 10, size=k))
        assert v_pre(rng.normal(size=3), clustering) >= 0.0

    def test_dimension_mismatch_rejected(self):
        clustering = make_clustering([[1.0, 0.0]], [2])
        with pytest.raises(ContractError):
            v_pre(np.zeros(3), clustering)


class TestMoranI:
    def test_constant_scores_degenerate_to_zero(self):
        index = make_index(np.eye(3))
        assert moran_i(["d0", "d1", "d2"], [0.5, 0.5, 0.5], index) == 0.0

    def test_identical_embeddings_small_score_gap(self):
        vectors = np.array([[1.0, 0.0], [1.0, 0.0]])
        index = make_index(vectors)
        delta = 1e-3
        scores = [1.0, 1.0 - delta]
        expected = moran_oracle(vectors, scores)
        assert moran_i(["d0", "d1"], scores, index) == pytest.approx(
            expected, abs=1e-9)

    def test_random_five_doc_instance_matches_oracle(self):
        rng = np.random.default_rng(13)
        vectors = rng.normal(size=(5, 6))
        scores = rng.random(5).tolist()
        index = make_index(vectors)
        expected = moran_oracle(index.vectors.astype(np.float64), scores)
        assert moran_i([f"d{i}" for i in range(5)], scores, index) == \
               pytest.approx(expected, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 50))
    def test_matches_double_loop_oracle(self, seed, m):
        rng = np.random.default_rng(seed)
        vectors = rng.normal(size=(m, 4))
        scores = rng.random(m).tolist()
        index = make_index(vectors)
        expected = moran_oracle(index.vectors.astype(np.float64), scores)
        assert moran_i([f"d{i}" for i in range(m)], scores, index) == \
               pytest.approx(expected, abs=1e-9)

    def test_orthogonal_vectors_have_no_adjacency(self):
        index = make_index(np.eye(4))
        assert moran_i(["d0", "d1", "d2", "d3"], [0.9, 0.5, 0.3, 0.1], index) == 0.0

    def test_fewer_than_two_rejected(self):
        index = make_index(np.eye(2))
        with pytest.raises(ContractError):
            moran_i(["d0"], [1.0], index)


class TestVPost:
    def test_singleton_equals_v_pre_exactly(self):
        rng = np.random.default_rng(21)
        clustering = make_clustering(rng.normal(size=(3, 4)),
                                     np.array([2, 3, 4]))
        vec = rng.normal(size=4)
        assert v_post([vec], clustering) == v_pre(vec, clustering)

    def test_mean_of_three_independent_values(self):
        rng = np.random.default_rng(22)
        clustering = make_clustering(rng.normal(size=(4, 3)),
                                     np.array([1, 2, 3, 4]))
        vecs = [rng.normal(size=3) for _ in range(3)]
        expected = np.mean([v_pre(v, clustering) for v in vecs])
        assert v_post(vecs, clustering) == pytest.approx(expected, abs=1e-9)

    def test_capped_values_propagate(self):
        clustering = make_clustering([[1.0, 0.0], [0.0, 1.0]], [2, 2])
        vecs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]  # both on centroids
        assert v_post(vecs, clustering) == CAP

    def test_empty_input_rejected(self):
        clustering = make_clustering([[1.0, 0.0]], [2])
        with pytest.raises(ContractError):
            v_post([], clustering)


class TestBaselineSignals:
    def test_perf_norm_keeps_values_in_unit_interval(self):
        weights = perf_norm_weights({"slow": 0.2, "fast": 0.8})
        assert weights == {"slow": 0.2, "fast": 0.8}

    def test_perf_norm_empty_rejected(self):
        with pytest.raises(ContractError):
            perf_norm_weights({})

    def test_constant_scores_hit_reciprocal_cap(self):
        assert score_variance_weight([0.7, 0.7, 0.7]) == pytest.approx(1e10)

    def test_score_variance_matches_numpy(self):
        scores = [0.1, 0.4, 0.9, 0.3]
        assert score_variance_weight(scores) == pytest.approx(
            1.0 / np.var(scores), rel=1e-12)

    def test_rep_variance_matches_dimensionwise_oracle(self):
        rng = np.random.default_rng(31)
        vectors = [rng.normal(size=5) for _ in range(8)]
        expected = 1.0 / mean_dim_variance_oracle(vectors)
        assert rep_variance_weight(vectors) == pytest.approx(expected, abs=1e-9)

    def test_cluster_variance_weight(self):
        clustering = make_clustering([[0.0, 0.0], [2.0, 2.0]], [1, 1],
                                     items={"a": 0, "b": 1})
        # per-dim variance of centroids {0,2} is 1.0 -> weight 1.0
        assert cluster_variance_weight(clustering) == pytest.approx(1.0)


class TestSignalBundle:
    def test_rejects_negative_v_pre(self):
        with pytest.raises(Exception):
            SignalBundle(v_pre=-1.0, i_moran=0.0, v_post=0.0)

    def test_rejects_non_finite(self):
        with pytest.raises(Exception):
            SignalBundle(v_pre=float("inf"), i_moran=0.0, v_post=0.0)
