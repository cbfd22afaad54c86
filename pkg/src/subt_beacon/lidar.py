"""Intensity filtering and K-means clustering of LiDAR returns."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class LidarPoint(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float


@dataclass
class LidarScan:
    """One revolution; ``points`` is an (N, 4) array of x, y, z, intensity."""

    t: int
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError("scan points must be (N, 4)")
        self.points = pts

    @classmethod
    def from_points(cls, t: int, points: list[LidarPoint]) -> "LidarScan":
        return cls(t, np.array([tuple(p) for p in points], dtype=float).reshape(-1, 4))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class LidarCluster:
    points: np.ndarray  # (k, 4+): x, y, z, intensity, extra columns
    centroid: tuple[float, float, float]

    @property
    def size(self) -> int:
        return len(self.points)


def intensity_filter(scan: LidarScan, tau: float) -> np.ndarray:
    """Points with intensity >= tau, in scan order."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    pts = scan.points
    return pts[pts[:, 3] >= tau]


def select_m(n: int) -> int:
    """LiDAR cluster count: one more than the number of event clusters."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return n + 1


def kmeans_pp_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _assign(x, centers):
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def lloyd(x: np.ndarray, centers: np.ndarray, tol: float = 1e-4, max_iter: int = 100,
          history: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from ``centers``; stops once labels are stable and the shift < tol.

    An emptied cluster keeps its previous center. If ``history`` is given the
    within-cluster sum of squares is appended after every update.
    """
    centers = centers.copy()
    labels = _assign(x, centers)
    for _ in range(max_iter):
        new = centers.copy()
        for j in range(len(centers)):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        new_labels = _assign(x, centers)
        if history is not None:
            history.append(float(((x - centers[new_labels]) ** 2).sum()))
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable and shift < tol:
            break
    return centers, labels


def kmeans_cluster(points, m: int, seed, min_cluster_pts: int = 3) -> list[LidarCluster]:
    """K-means on x, y, z with k = min(m, |points|) and k-means++ seeding.

    Clusters with fewer than ``min_cluster_pts`` members are dropped. Output is
    sorted by centroid azimuth, then range. Columns after x, y, z (intensity,
    a row index, ...) are carried along in the member points.
    """
    if m <= 0:
        raise ValueError("m must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return []
    pts = pts.reshape(len(pts), -1)
    if pts.shape[1] == 3:
        pts = np.hstack([pts, np.zeros((len(pts), 1))])
    x = pts[:, :3]
    k = min(m, len(x))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centers, labels = lloyd(x, kmeans_pp_seeds(x, k, rng))
    clusters = []
    for j in range(k):
        members = pts[labels == j]
        if len(members) < max(min_cluster_pts, 1):
            continue
        c = members[:, :3].mean(axis=0)
        clusters.append(LidarCluster(members, (float(c[0]), float(c[1]), float(c[2]))))
    clusters.sort(key=lambda c: (np.arctan2(c.centroid[1], c.centroid[0]), np.hypot(c.centroid[0], c.centroid[1])))
    return clusters


@dataclass
class LidarDetectorConfig:
    tau: float = 1000.0
    min_cluster_pts: int = 3


def detect_lidar_clusters(scan: LidarScan, n_event_clusters: int, cfg: LidarDetectorConfig,
                          rng) -> list[LidarCluster]:
    bright = intensity_filter(scan, cfg.tau)
    return kmeans_cluster(bright, select_m(n_event_clusters), rng, cfg.min_cluster_pts)
