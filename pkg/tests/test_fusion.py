import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_assignment
from subt_beacon.core import CameraIntrinsics
from subt_beacon.fusion import (DetectionFrame, PairedDetection, TrackAssociator, angle_cost_matrix, hungarian,
                                pair_clusters, select_target, solve_assignment)

INTR = CameraIntrinsics.from_hfov(640, 480, 70.0)


def pix(theta, v=240.0):
    return (INTR.cx - INTR.fx * math.tan(theta), v)


def pt(theta, r=4.0, z=0.3):
    return (r * math.cos(theta), r * math.sin(theta), z)


def test_solve_assignment_examples():
    assert list(solve_assignment([[0.7]])) == [0]
    assert list(solve_assignment([[0, 1], [1, 0]])) == [0, 1]
    assert list(solve_assignment([[1, 0], [0, 1]])) == [1, 0]
    assert list(solve_assignment(np.zeros((0, 3)))) == []
    with pytest.raises(ValueError):
        solve_assignment(np.ones((3, 2)))
    with pytest.raises(ValueError):
        solve_assignment([[-1.0]])
    with pytest.raises(ValueError):
        solve_assignment([[math.inf]])


def test_hungarian_square():
    c = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]], dtype=float)
    a = hungarian(c)
    assert c[np.arange(3), a].sum() == 5.0
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))


matrices = st.integers(1, 5).flatmap(
    lambda n: st.integers(n, 6).flatmap(
        lambda m: st.lists(st.floats(0, 3.2), min_size=n * m, max_size=n * m).map(
            lambda v: np.array(v).reshape(n, m))))


@given(matrices)
def test_assignment_optimal(cost):
    cols = solve_assignment(cost)
    assert len(set(cols.tolist())) == len(cols)
    best, _ = brute_force_assignment(cost)
    assert cost[np.arange(len(cols)), cols].sum() == pytest.approx(best, abs=1e-9)


@given(matrices, st.randoms(use_true_random=False))
def test_assignment_permutation_invariant_cost(cost, rnd):
    rows, cols = list(range(cost.shape[0])), list(range(cost.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    perm = cost[np.ix_(rows, cols)]
    a, b = solve_assignment(cost), solve_assignment(perm)
    assert cost[np.arange(len(a)), a].sum() == pytest.approx(perm[np.arange(len(b)), b].sum(), abs=1e-9)


def test_pair_clusters_nearest_example():
    frame = pair_clusters([pix(0.10)], INTR, [pt(0.12), pt(0.50)], 0.15, t=7)
    assert frame.t == 7 and len(frame.pairs) == 1
    p = frame.pairs[0]
    assert p.theta_n == pytest.approx(0.10) and p.theta_m == pytest.approx(0.12)
    assert p.pair_cost == pytest.approx(0.02)
    assert frame.unpaired_lidar_centroids == [pt(0.50)]
    assert frame.unpaired_event_centroids == []


def test_pair_clusters_identity():
    thetas = [-0.4, -0.1, 0.2, 0.5]
    frame = pair_clusters([pix(t) for t in thetas], INTR, [pt(t) for t in thetas], 0.15)
    assert sum(p.pair_cost for p in frame.pairs) == pytest.approx(0.0, abs=1e-12)
    assert [p.theta_m for p in frame.pairs] == pytest.approx(thetas)


def test_pair_clusters_gate_and_empty():
    frame = pair_clusters([pix(0.0)], INTR, [pt(math.pi)], 0.15)
    assert frame.pairs == [] and len(frame.unpaired_event_centroids) == 1
    assert len(frame.unpaired_lidar_centroids) == 1
    empty = pair_clusters([], INTR, [], 0.15)
    assert empty.pairs == [] and empty.unpaired_lidar_centroids == []
    only_lidar = pair_clusters([], INTR, [pt(0.1)], 0.15)
    assert only_lidar.unpaired_lidar_centroids == [pt(0.1)]


def test_pair_clusters_more_events_than_lidar():
    frame = pair_clusters([pix(-0.3), pix(0.0), pix(0.3)], INTR, [pt(0.01), pt(0.29)], 0.15)
    assert sorted(round(p.theta_n, 6) for p in frame.pairs) == [0.0, 0.3]
    assert frame.unpaired_event_centroids == [pix(-0.3)]


def test_wrapped_difference_at_seam():
    c = angle_cost_matrix([math.pi - 0.01], [-math.pi + 0.01])
    assert c[0, 0] == pytest.approx(0.02)


bearings = st.lists(st.floats(-0.6, 0.6), min_size=0, max_size=5)


@given(bearings, bearings)
def test_frame_accounts_for_every_centroid_and_gates(tn, tm):
    ev, li = [pix(t) for t in tn], [pt(t) for t in tm]
    frame = pair_clusters(ev, INTR, li, 0.15)
    assert all(p.pair_cost <= 0.15 for p in frame.pairs)
    assert len(frame.pairs) + len(frame.unpaired_event_centroids) == len(ev)
    assert len(frame.pairs) + len(frame.unpaired_lidar_centroids) == len(li)
    paired_ev = [p.image_centroid for p in frame.pairs]
    assert sorted(paired_ev + frame.unpaired_event_centroids) == sorted(ev)


@given(bearings, bearings, st.floats(2.0, 3.1))
def test_far_spurious_lidar_centroid_changes_nothing(tn, tm, far):
    ev, li = [pix(t) for t in tn], [pt(t) for t in tm]
    if len(ev) > len(li):
        return
    before = pair_clusters(ev, INTR, li, 0.15)
    after = pair_clusters(ev, INTR, li + [pt(far)], 0.15)
    key = lambda f: sorted((p.image_centroid, p.point_lidar) for p in f.pairs)
    assert key(before) == key(after)


separated = st.lists(st.floats(-0.6, 0.6), min_size=1, max_size=5).filter(
    lambda ts: all(abs(a - b) > 0.05 for i, a in enumerate(ts) for b in ts[i + 1:]))


@given(separated, st.randoms(use_true_random=False))
def test_pairing_set_invariant_under_input_order(tn, rnd):
    # bearings far apart relative to the offset, so the optimum is unique
    ev, li = [pix(t) for t in tn], [pt(t + 0.01) for t in tn] + [pt(2.5)]
    a = pair_clusters(ev, INTR, li, 0.15)
    rnd.shuffle(ev)
    rnd.shuffle(li)
    b = pair_clusters(ev, INTR, li, 0.15)
    assert {(p.image_centroid, p.point_lidar) for p in a.pairs} == {(p.image_centroid, p.point_lidar) for p in b.pairs}


def test_select_target_prefers_reference_bearing_then_range():
    pairs = [PairedDetection(pix(0.3), pt(0.3, 6), 0.3, 0.3, 0.0), PairedDetection(pix(-0.2), pt(-0.2), -0.2, -0.2, 0.0)]
    frame = DetectionFrame(0, pairs)
    assert select_target(frame, INTR, 0.0).bearing == pytest.approx(-0.2)
    assert select_target(frame, INTR, 0.25).bearing == pytest.approx(0.3)
    tie = DetectionFrame(0, [PairedDetection(pix(0.1), pt(0.1, 6), 0.1, 0.1, 0.0),
                             PairedDetection(pix(-0.1), pt(-0.1, 3), -0.1, -0.1, 0.0)])
    assert select_target(tie, INTR, 0.0).point_lidar == pt(-0.1, 3)
    assert select_target(DetectionFrame(0), INTR) is None
    ev_only = DetectionFrame(0, unpaired_event_centroids=[pix(0.2)])
    assert select_target(ev_only, INTR).kind == "event"
    lidar_only = DetectionFrame(0, unpaired_lidar_centroids=[pt(0.4)])
    t = select_target(lidar_only, INTR)
    assert t.kind == "lidar" and t.bearing == pytest.approx(0.4)


def test_track_associator_compensates_robot_rotation():
    assoc = TrackAssociator()
    first = DetectionFrame(0, [PairedDetection(pix(0.3), pt(0.3), 0.3, 0.3, 0.0)])
    assoc.associate(first, INTR, robot_yaw=0.0)
    # the robot turned left by 0.3: the same person is now straight ahead, a decoy sits at +0.3
    frame = DetectionFrame(1, [PairedDetection(pix(0.0), pt(0.0), 0.0, 0.0, 0.0),
                               PairedDetection(pix(0.3), pt(0.3), 0.3, 0.3, 0.0)])
    assert assoc.associate(frame, INTR, robot_yaw=0.3).bearing == pytest.approx(0.0)
