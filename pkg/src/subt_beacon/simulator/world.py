"""2.5D tunnel world: walls with height, vertical sign markers and a walking target."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# surface classes of a LiDAR return
MISS, WALL, FLOOR, CEILING, BODY, SIGN, STRIPE = range(7)
REFLECTIVE = (SIGN, STRIPE)


@dataclass(frozen=True)
class SignMarker:
    """Vertical retroreflective rectangle facing along ``normal_yaw``."""

    x: float
    y: float
    z: float  # center height above the floor
    width: float
    height: float
    normal_yaw: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("marker extents must be positive")

    def segment(self) -> np.ndarray:
        tx, ty = -math.sin(self.normal_yaw), math.cos(self.normal_yaw)
        h = self.width / 2.0
        return np.array([self.x - h * tx, self.y - h * ty, self.x + h * tx, self.y + h * ty])


@dataclass
class World:
    walls: list[list[tuple[float, float]]] = field(default_factory=list)  # polylines
    wall_height: float = 3.0
    ceiling: bool = True
    markers: list[SignMarker] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        segs = []
        for line in self.walls:
            pts = np.asarray(line, dtype=float)
            for a, b in zip(pts[:-1], pts[1:]):
                segs.append([a[0], a[1], b[0], b[1]])
        self._segments = np.array(segs, dtype=float).reshape(-1, 4)

    @property
    def segments(self) -> np.ndarray:
        return self._segments

    @property
    def is_empty(self) -> bool:
        return len(self._segments) == 0 and not self.markers

    def clearance(self, x: float, y: float) -> float:
        """Distance from a point to the nearest wall segment (inf without walls)."""
        if len(self._segments) == 0:
            return math.inf
        a = self._segments[:, :2]
        d = self._segments[:, 2:] - a
        p = np.array([x, y])
        tt = np.clip(np.einsum("ij,ij->i", p - a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-12), 0, 1)
        closest = a + tt[:, None] * d
        return float(np.min(np.linalg.norm(closest - p, axis=1)))


@dataclass
class TargetModel:
    """Person walking a waypoint polyline at constant speed, then standing still."""

    waypoints: list[tuple[float, float]]
    speed: float = 0.0
    start_delay: float = 0.0
    body_radius: float = 0.35
    body_height: float = 1.8
    stripe_heights: tuple[float, ...] = (1.0, 1.3)
    stripe_thickness: float = 0.05

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("target speed must be non-negative")
        if not self.waypoints:
            raise ValueError("target needs at least one waypoint")
        top = max(h + self.stripe_thickness / 2 for h in self.stripe_heights)
        if top > self.body_height or min(self.stripe_heights) - self.stripe_thickness / 2 < 0:
            raise ValueError("stripes must lie within the body height")
        pts = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        self._pts = pts
        self._cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])

    def position(self, t: float) -> tuple[float, float]:
        s = max(t - self.start_delay, 0.0) * self.speed
        pts, cum = self._pts, self._cum
        if len(pts) == 1 or s >= cum[-1]:
            return float(pts[-1, 0]), float(pts[-1, 1])
        i = int(np.searchsorted(cum, s, side="right")) - 1
        f = (s - cum[i]) / (cum[i + 1] - cum[i])
        p = pts[i] + f * (pts[i + 1] - pts[i])
        return float(p[0]), float(p[1])

    def stripe_bands(self) -> np.ndarray:
        h = self.stripe_thickness / 2
        return np.array([[z - h, z + h] for z in self.stripe_heights])

    def visible_stripe_centroid(self, viewer_xy, target_xy, samples: int = 721) -> np.ndarray:
        """Ground-truth vest point: mean of the body surface seen from ``viewer_xy``
        under uniform angular sampling, at the mean stripe height (world frame, 3D)."""
        vx, vy = viewer_xy
        cx, cy = target_xy
        dx, dy = cx - vx, cy - vy
        dist = math.hypot(dx, dy)
        r = self.body_radius
        z = float(np.mean(self.stripe_heights))
        if dist <= r:
            return np.array([cx, cy, z])
        half = math.asin(r / dist)
        base = math.atan2(dy, dx)
        phi = np.linspace(-half, half, samples)[1:-1]
        along = dist * np.cos(phi) - np.sqrt(np.maximum(r * r - (dist * np.sin(phi)) ** 2, 0.0))
        x = vx + along * np.cos(base + phi)
        y = vy + along * np.sin(base + phi)
        return np.array([x.mean(), y.mean(), z])


def _ray_segments(ox, oy, dirs, segs):
    """Horizontal distance along each ray to each segment; inf where missed. (n_rays, n_segs)"""
    if len(segs) == 0:
        return np.full((len(dirs), 0), np.inf)
    ax, ay = segs[:, 0], segs[:, 1]
    ex, ey = segs[:, 2] - ax, segs[:, 3] - ay
    dx, dy = dirs[:, 0:1], dirs[:, 1:2]
    denom = dx * ey - dy * ex
    wx, wy = ax - ox, ay - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        u = (wx * dy - wy * dx) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0) & (u <= 1)
    return np.where(ok, t, np.inf)


def _ray_circle(ox, oy, dirs, cx, cy, r):
    wx, wy = cx - ox, cy - oy
    b = dirs[:, 0] * wx + dirs[:, 1] * wy
    c = wx * wx + wy * wy - r * r
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = b - np.sqrt(disc)
    return np.where((disc >= 0) & (t > 1e-9), t, np.inf)


@dataclass
class RaycastResult:
    """Per-beam returns; arrays are (n_rings, n_az)."""

    horiz: np.ndarray  # horizontal distance, inf for misses
    surface: np.ndarray  # surface class
    obj: np.ndarray  # marker index for SIGN, stripe index for STRIPE, else -1


def raycast(world: World, target: TargetModel | None, target_xy, origin, yaw: float,
            az: np.ndarray, elev: np.ndarray, half_div: float, max_range: float) -> RaycastResult:
    """Nearest surface for every (ring, azimuth) beam of a LiDAR at ``origin`` (x, y, z) with heading ``yaw``.

    Retroreflectors return whenever any part of the beam's vertical footprint
    (+/- ``half_div`` about the nominal elevation) overlaps them; other
    surfaces only when the nominal ray meets them.
    """
    ox, oy, oz = origin
    ang = yaw + az
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    tan_e = np.tan(elev)
    tan_lo = np.tan(elev - half_div)[:, None]
    tan_hi = np.tan(elev + half_div)[:, None]
    n_r, n_a = len(elev), len(az)

    t_wall = _ray_segments(ox, oy, dirs, world.segments).min(axis=1, initial=np.inf)
    if len(world.segments):
        # floor and ceiling only exist inside a walled world
        with np.errstate(divide="ignore"):
            t_floor = np.where(elev < 0, oz / np.where(elev < 0, -tan_e, 1.0), np.inf)
            t_ceil = np.where((elev > 0) & world.ceiling,
                              (world.wall_height - oz) / np.where(elev > 0, tan_e, 1.0), np.inf)
    else:
        t_floor = t_ceil = np.full(n_r, np.inf)
    with np.errstate(invalid="ignore"):  # inf * 0 for a level ring that misses every wall
        z_wall = oz + t_wall[None, :] * tan_e[:, None]
    wall_ok = (z_wall >= 0) & (z_wall <= world.wall_height)
    t_w = np.where(wall_ok, t_wall[None, :], np.inf)
    t_fc = np.minimum(t_floor, t_ceil)[:, None]
    best = np.minimum(t_w, t_fc)
    surface = np.where(t_w <= t_fc, WALL, np.where(t_floor[:, None] <= t_ceil[:, None], FLOOR, CEILING)).astype(np.int8)
    surface[~np.isfinite(best)] = MISS
    obj = np.full((n_r, n_a), -1, dtype=np.int16)

    def overlap(t, z_lo, z_hi):
        # beam footprint [elev - d, elev + d] meets the band [z_lo, z_hi] at horizontal distance t
        return (oz + t * tan_lo <= z_hi) & (oz + t * tan_hi >= z_lo)

    if world.markers:
        msegs = np.array([m.segment() for m in world.markers])
        t_m = _ray_segments(ox, oy, dirs, msegs)
        for k, m in enumerate(world.markers):
            cols = np.nonzero(np.isfinite(t_m[:, k]))[0]
            if len(cols) == 0:
                continue
            t = np.broadcast_to(t_m[cols, k][None, :], (n_r, len(cols)))
            ok = overlap(t, m.z - m.height / 2, m.z + m.height / 2) & (t < best[:, cols])
            sub_best, sub_surf, sub_obj = best[:, cols], surface[:, cols], obj[:, cols]
            sub_best[ok], sub_surf[ok], sub_obj[ok] = t[ok], SIGN, k
            best[:, cols], surface[:, cols], obj[:, cols] = sub_best, sub_surf, sub_obj

    if target is not None and target_xy is not None:
        t_circle = _ray_circle(ox, oy, dirs, target_xy[0], target_xy[1], target.body_radius)
        cols = np.nonzero(np.isfinite(t_circle))[0]
        if len(cols):
            t = np.broadcast_to(t_circle[cols][None, :], (n_r, len(cols)))
            z = oz + t * tan_e[:, None]
            body = (z >= 0) & (z <= target.body_height)
            stripe = np.zeros(t.shape, dtype=bool)
            stripe_id = np.full(t.shape, -1, dtype=np.int16)
            for k, (lo, hi) in enumerate(target.stripe_bands()):
                ok = overlap(t, lo, hi) & ~stripe
                stripe_id[ok] = k
                stripe |= ok
            sub_best, sub_surf, sub_obj = best[:, cols], surface[:, cols], obj[:, cols]
            closer = t <= sub_best
            sel = closer & stripe
            sub_best[sel], sub_surf[sel], sub_obj[sel] = t[sel], STRIPE, stripe_id[sel]
            sel = closer & body & ~stripe & (t < sub_best)
            sub_best[sel], sub_surf[sel], sub_obj[sel] = t[sel], BODY, -1
            best[:, cols], surface[:, cols], obj[:, cols] = sub_best, sub_surf, sub_obj

    far = ~(best / np.cos(elev)[:, None] <= max_range)
    best[far] = np.inf
    surface[far] = MISS
    obj[far] = -1
    return RaycastResult(best, surface, obj)
