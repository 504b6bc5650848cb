import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from appl.autodiff import Tensor
from appl.exceptions import DimensionError
from appl.models import PcnParams
from appl.prototypes import (cluster_pcn_prototypes, cluster_reduce, compute_prototypes, kmeans,
                             mean_prototypes, pcn_prototypes)


def test_single_shot_mean_is_the_embedding():
    emb = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(mean_prototypes(emb, np.array([0, 1]), 2).vectors.data, emb)


def test_mean_hand_value():
    emb = np.array([[0.0, 0.0], [2.0, 2.0]])
    np.testing.assert_array_equal(mean_prototypes(emb, np.array([0, 0]), 1).vectors.data, [[1, 1]])


def test_mean_matches_loop_oracle():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((25, 16))
    y = np.repeat(np.arange(5), 5)
    ours = mean_prototypes(emb, y, 5).vectors.data
    np.testing.assert_allclose(ours, oracles.mean_prototypes(emb, y, 5), atol=1e-12)


def test_mean_empty_class():
    with pytest.raises(ValueError):
        mean_prototypes(np.ones((2, 2)), np.array([0, 0]), 2)


def test_averaging_pcn_bridge():
    rng = np.random.default_rng(1)
    emb = rng.uniform(0, 3, size=(15, 4))
    y = np.repeat(np.arange(3), 5)
    pcn = PcnParams.averaging(5, 4)
    np.testing.assert_allclose(pcn_prototypes(emb, y, 3, pcn).vectors.data,
                               mean_prototypes(emb, y, 3).vectors.data, atol=1e-12)


def test_zero_pcn_prototypes():
    pcn = PcnParams(np.zeros((8, 4)), np.zeros(4), 2)
    out = pcn_prototypes(np.ones((6, 4)), np.repeat(np.arange(3), 2), 3, pcn).vectors.data
    np.testing.assert_array_equal(out, 0.0)


def test_pcn_is_order_sensitive_and_mean_is_not():
    rng = np.random.default_rng(2)
    emb = rng.uniform(0, 1, size=(4, 3))
    y = np.array([0, 0, 1, 1])
    w = np.zeros((6, 3))
    w[:3] = np.eye(3)  # only the first shot counts
    pcn = PcnParams(w, np.zeros(3), 2)
    swapped = emb[[1, 0, 2, 3]]
    assert not np.allclose(pcn_prototypes(emb, y, 2, pcn).vectors.data,
                           pcn_prototypes(swapped, y, 2, pcn).vectors.data)
    np.testing.assert_allclose(mean_prototypes(emb, y, 2).vectors.data,
                               mean_prototypes(swapped, y, 2).vectors.data, atol=1e-15)


def test_pcn_shot_mismatch_asks_for_clustering():
    with pytest.raises(DimensionError, match="clustering"):
        pcn_prototypes(np.ones((9, 2)), np.repeat(np.arange(3), 3), 3, PcnParams.averaging(2, 2))


def test_dispatch_uses_clustering_only_for_extra_shots():
    rng = np.random.default_rng(3)
    pcn = PcnParams.averaging(2, 3)
    emb5 = rng.uniform(0, 1, size=(10, 3))
    y5 = np.repeat(np.arange(2), 5)
    assert compute_prototypes(emb5, y5, 2, use_pcn=True, pcn=pcn, clustering=True,
                              rng=rng).provenance == "cluster_pcn"
    emb2, y2 = emb5[:4], np.repeat(np.arange(2), 2)
    assert compute_prototypes(emb2, y2, 2, use_pcn=True, pcn=pcn).provenance == "pcn"
    assert compute_prototypes(emb5, y5, 2, use_pcn=False).provenance == "mean"


def test_cluster_pcn_with_averaging_weights_is_mean_of_centroids():
    rng = np.random.default_rng(4)
    emb = rng.uniform(0, 1, size=(12, 3))
    y = np.repeat(np.arange(2), 6)
    out = cluster_pcn_prototypes(Tensor(emb), y, 2, PcnParams.averaging(3, 3), rng).vectors.data
    for c in range(2):
        cents = cluster_reduce(emb[y == c], 3, np.random.default_rng(0))
        np.testing.assert_allclose(out[c], cents.mean(axis=0), atol=1e-12)


# --- cluster_reduce ---------------------------------------------------------

def test_k_equals_points_returns_sorted_points():
    pts = np.array([[3.0, 1.0], [0.0, 5.0], [1.0, 0.0]])
    np.testing.assert_array_equal(cluster_reduce(pts, 3, 0), pts[np.lexsort(pts.T[::-1])])


def test_single_cluster_is_the_mean():
    pts = np.random.default_rng(5).standard_normal((7, 3))
    np.testing.assert_allclose(cluster_reduce(pts, 1, 0), [pts.mean(axis=0)], atol=1e-12)


def test_one_dimensional_two_clusters():
    pts = np.array([[0.0], [0.1], [10.0], [10.1]])
    np.testing.assert_allclose(cluster_reduce(pts, 2, 0), [[0.05], [10.05]], atol=1e-12)
    assert oracles.best_partition_sse(pts, 2) == pytest.approx(0.01)


def test_fewer_points_than_clusters():
    with pytest.raises(ValueError, match="K >= K'"):
        cluster_reduce(np.ones((2, 3)), 3)


def test_duplicates_never_make_extra_distinct_centroids():
    pts = np.array([[1.0, 1.0]] * 3 + [[2.0, 0.0]] * 2)
    cents = cluster_reduce(pts, 4, 0)
    assert cents.shape == (4, 2)
    assert len(np.unique(cents, axis=0)) <= 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 9), st.integers(1, 4))
def test_lloyd_sse_never_increases(seed, n, k):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 2))
    _, _, history = kmeans(pts, k, rng)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_small_instances_reach_the_brute_force_optimum(seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((7, 2))
    a = cluster_reduce(pts, 3, 1)
    assert oracles.kmeans_sse(pts, a) == pytest.approx(oracles.best_partition_sse(pts, 3), abs=1e-9)
    assert (np.diff(a[:, 0]) >= 0).all()
