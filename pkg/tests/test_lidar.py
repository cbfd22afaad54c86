import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subt_beacon.lidar import (LidarDetectorConfig, LidarPoint, LidarScan, _assign, detect_lidar_clusters,
                               intensity_filter, kmeans_cluster, kmeans_pp_seeds, lloyd, select_m)


def test_intensity_filter_examples():
    scan = LidarScan.from_points(0, [LidarPoint(1, 0, 0, 80), LidarPoint(2, 0, 0, 2500)])
    np.testing.assert_array_equal(intensity_filter(scan, 1000), [[2, 0, 0, 2500]])
    assert len(intensity_filter(LidarScan.from_points(0, [LidarPoint(1, 0, 0, 80)]), 1000)) == 0
    assert len(intensity_filter(LidarScan(0), 1000)) == 0
    with pytest.raises(ValueError):
        intensity_filter(scan, 0)


def test_scan_shape_checked():
    with pytest.raises(ValueError):
        LidarScan(0, np.zeros((3, 3)))


intensities = st.lists(st.floats(0, 5000), min_size=0, max_size=50)


@given(intensities, st.floats(1, 4000), st.floats(1, 4000))
def test_intensity_filter_idempotent_and_monotone(vals, t1, t2):
    pts = np.column_stack([np.arange(len(vals)), np.zeros((len(vals), 2)), vals]) if vals else np.zeros((0, 4))
    scan = LidarScan(0, pts)
    once = intensity_filter(scan, t1)
    np.testing.assert_array_equal(intensity_filter(LidarScan(0, once), t1), once)
    lo, hi = min(t1, t2), max(t1, t2)
    high_ids = set(intensity_filter(scan, hi)[:, 0])
    assert high_ids <= set(intensity_filter(scan, lo)[:, 0])
    # order preserved
    assert list(once[:, 0]) == sorted(once[:, 0])


def test_select_m():
    assert [select_m(n) for n in (0, 1, 4)] == [1, 2, 5]
    with pytest.raises(ValueError):
        select_m(-1)


def test_kmeans_single_cluster_is_mean():
    pts = np.random.default_rng(0).normal(size=(20, 4))
    (c,) = kmeans_cluster(pts, 1, 0)
    np.testing.assert_allclose(c.centroid, pts[:, :3].mean(axis=0), atol=1e-12)
    assert c.size == 20


def test_kmeans_two_blobs_recover_sample_means():
    rng = np.random.default_rng(7)
    a = rng.normal([3, 1, 0.3], 0.05, size=(50, 3))
    b = rng.normal([3, -4, 0.3], 0.05, size=(50, 3))
    pts = np.vstack([a, b])
    clusters = kmeans_cluster(pts, 2, 11)
    got = sorted(c.centroid for c in clusters)
    want = sorted(tuple(x.mean(axis=0)) for x in (a, b))
    np.testing.assert_allclose(got, want, atol=0.05)
    np.testing.assert_allclose(got, want, atol=1e-12)  # exact partition


def test_kmeans_degenerate_inputs():
    two = kmeans_cluster(np.array([[1.0, 0, 0, 2000], [0, 1.0, 0, 2000]]), 5, 0, min_cluster_pts=1)
    assert len(two) == 2 and all(c.size == 1 for c in two)
    assert kmeans_cluster(np.array([[1.0, 0, 0, 2000], [0, 1.0, 0, 2000]]), 5, 0) == []  # below 3 points
    assert kmeans_cluster(np.zeros((0, 4)), 3, 0) == []
    with pytest.raises(ValueError):
        kmeans_cluster(np.zeros((3, 4)), 0, 0)


def test_kmeans_carries_extra_columns():
    pts = np.column_stack([np.random.default_rng(1).normal(size=(10, 3)), np.full(10, 2000.0), np.arange(10.0)])
    (c,) = kmeans_cluster(pts, 1, 0)
    assert c.points.shape == (10, 5)
    assert sorted(c.points[:, 4]) == list(range(10))


clouds = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).normal(size=(int(s % 40) + 3, 3)) *
                                    np.random.default_rng(s).uniform(0.1, 5))


@given(clouds, st.integers(1, 6), st.integers(0, 2**31))
def test_kmeans_fixed_point_and_mean_properties(x, m, seed):
    clusters = kmeans_cluster(x, m, seed, min_cluster_pts=1)
    assert sum(c.size for c in clusters) == len(x)
    cents = np.array([c.centroid for c in clusters])
    for c in clusters:
        np.testing.assert_allclose(c.centroid, c.points[:, :3].mean(axis=0), atol=1e-9)
        # every member is (up to ties) nearest its own centroid
        d_own = np.linalg.norm(c.points[:, :3] - np.array(c.centroid), axis=1)
        d_all = np.linalg.norm(c.points[:, None, :3] - cents[None], axis=2).min(axis=1)
        assert np.all(d_own <= d_all + 1e-9)
    again = kmeans_cluster(x, m, seed, min_cluster_pts=1)
    assert [c.centroid for c in again] == [c.centroid for c in clusters]


@given(clouds, st.integers(1, 6), st.integers(0, 2**31))
def test_lloyd_sse_never_increases(x, m, seed):
    k = min(m, len(x))
    seeds = kmeans_pp_seeds(x, k, np.random.default_rng(seed))
    history = [float(((x - seeds[_assign(x, seeds)]) ** 2).sum())]
    lloyd(x, seeds, history=history)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_detect_lidar_clusters_uses_n_plus_one():
    rng = np.random.default_rng(3)
    blobs = [rng.normal(c, 0.03, size=(30, 3)) for c in ([4, 0, 0.3], [4, 3, 0.3], [-2, 2, 0.5])]
    pts = np.column_stack([np.vstack(blobs), np.full(90, 2500.0)])
    wall = np.column_stack([rng.normal(size=(200, 3)) * 5, np.full(200, 80.0)])
    scan = LidarScan(0, np.vstack([pts, wall]))
    clusters = detect_lidar_clusters(scan, 2, LidarDetectorConfig(), np.random.default_rng(0))
    assert len(clusters) == 3
    assert all(np.all(c.points[:, 3] >= 1000) for c in clusters)
