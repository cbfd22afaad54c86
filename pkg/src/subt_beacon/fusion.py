"""Pairing event-cluster centroids with LiDAR-cluster centroids by bearing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CameraIntrinsics, lidar_bearing, pixel_bearing, wrap_angle


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix; returns the column of each row.

    Shortest augmenting path form of Kuhn-Munkres with row/column potentials, O(n^3).
    """
    c = np.asarray(cost, dtype=float)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j]: 1-based row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assignment = np.empty(n, dtype=np.int64)
    assignment[owner[1:] - 1] = np.arange(n)
    return assignment


def solve_assignment(cost_matrix) -> np.ndarray:
    """Optimal injection of rows into columns (|rows| <= |cols|).

    Rectangular problems are padded with zero-cost dummy rows. Returns the
    column chosen for each row.
    """
    c = np.asarray(cost_matrix, dtype=float)
    if c.size == 0:
        return np.zeros(c.shape[0] if c.ndim == 2 else 0, dtype=np.int64)
    n, m = c.shape
    if n > m:
        raise ValueError(f"cannot assign {n} rows injectively into {m} columns")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("costs must be finite and non-negative")
    square = np.zeros((m, m))
    square[:n] = c
    return hungarian(square)[:n]


@dataclass(frozen=True)
class PairedDetection:
    image_centroid: tuple[float, float]
    point_lidar: tuple[float, float, float]
    theta_n: float
    theta_m: float
    pair_cost: float

    @property
    def range_xy(self) -> float:
        return math.hypot(self.point_lidar[0], self.point_lidar[1])


@dataclass
class DetectionFrame:
    t: int
    pairs: list[PairedDetection] = field(default_factory=list)
    unpaired_event_centroids: list[tuple[float, float]] = field(default_factory=list)
    unpaired_lidar_centroids: list[tuple[float, float, float]] = field(default_factory=list)


def angle_cost_matrix(theta_n, theta_m) -> np.ndarray:
    tn = np.asarray(theta_n, dtype=float)
    tm = np.asarray(theta_m, dtype=float)
    return np.abs(wrap_angle(tn[:, None] - tm[None, :]))


def pair_clusters(event_centroids, intr: CameraIntrinsics, lidar_centroids,
                  theta_gate: float = 0.15, t: int = 0) -> DetectionFrame:
    """Bearing-matched pairing minimising the summed absolute bearing differences.

    Pairs whose cost exceeds ``theta_gate`` are returned to the unpaired lists.
    """
    n_pts = [tuple(map(float, c)) for c in event_centroids]
    m_pts = [tuple(map(float, c)) for c in lidar_centroids]
    theta_n = [pixel_bearing(u, v, intr).theta for u, v in n_pts]
    theta_m = [lidar_bearing(p[0], p[1]).theta for p in m_pts]
    frame = DetectionFrame(t)
    if not n_pts or not m_pts:
        frame.unpaired_event_centroids = n_pts
        frame.unpaired_lidar_centroids = m_pts
        return frame
    cost = angle_cost_matrix(theta_n, theta_m)
    if len(n_pts) <= len(m_pts):
        cols = solve_assignment(cost)
        matches = [(i, int(j)) for i, j in enumerate(cols)]
    else:
        rows = solve_assignment(cost.T)
        matches = sorted((int(i), j) for j, i in enumerate(rows))
    used_n, used_m = set(), set()
    for i, j in matches:
        if cost[i, j] <= theta_gate:
            frame.pairs.append(PairedDetection(n_pts[i], m_pts[j], theta_n[i], theta_m[j], float(cost[i, j])))
            used_n.add(i)
            used_m.add(j)
    frame.unpaired_event_centroids = [c for i, c in enumerate(n_pts) if i not in used_n]
    frame.unpaired_lidar_centroids = [c for j, c in enumerate(m_pts) if j not in used_m]
    return frame


@dataclass(frozen=True)
class TrackedTarget:
    """The single detection chosen for tracking on one tick."""

    kind: str  # "pair", "event" or "lidar"
    bearing: float
    point_lidar: tuple[float, float, float] | None = None
    pair: PairedDetection | None = None
    image_centroid: tuple[float, float] | None = None


def _nearest(items, bearings, ranges, ref):
    best = None
    for idx, (b, r) in enumerate(zip(bearings, ranges)):
        key = (abs(wrap_angle(b - ref)), r)
        if best is None or key < best[0]:
            best = (key, idx)
    return items[best[1]]


def select_target(frame: DetectionFrame, intr: CameraIntrinsics, ref_bearing: float = 0.0) -> TrackedTarget | None:
    """Nearest-in-bearing association to ``ref_bearing`` (robot frame); ties go to the closer one."""
    if frame.pairs:
        p = _nearest(frame.pairs, [q.theta_m for q in frame.pairs], [q.range_xy for q in frame.pairs], ref_bearing)
        return TrackedTarget("pair", p.theta_m, p.point_lidar, p, p.image_centroid)
    if frame.unpaired_event_centroids:
        cs = frame.unpaired_event_centroids
        th = [pixel_bearing(u, v, intr).theta for u, v in cs]
        c = _nearest(list(zip(cs, th)), th, [0.0] * len(cs), ref_bearing)
        return TrackedTarget("event", c[1], image_centroid=c[0])
    if frame.unpaired_lidar_centroids:
        cs = frame.unpaired_lidar_centroids
        th = [math.atan2(c[1], c[0]) for c in cs]
        c = _nearest(cs, th, [math.hypot(c[0], c[1]) for c in cs], ref_bearing)
        return TrackedTarget("lidar", math.atan2(c[1], c[0]), point_lidar=c)
    return None


class TrackAssociator:
    """Keeps the tracked bearing in the world frame so robot rotation between ticks is compensated."""

    def __init__(self):
        self.world_bearing: float | None = None

    def associate(self, frame: DetectionFrame, intr: CameraIntrinsics, robot_yaw: float) -> TrackedTarget | None:
        ref = 0.0 if self.world_bearing is None else wrap_angle(self.world_bearing - robot_yaw)
        target = select_target(frame, intr, ref)
        if target is not None:
            self.world_bearing = wrap_angle(robot_yaw + target.bearing)
        return target
