"""LiDAR returns with intensity and the events they induce in a co-located event camera."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import CameraIntrinsics, Extrinsics, Pose2D
from ..events import EVENT_DTYPE
from ..lidar import LidarScan
from .world import MISS, REFLECTIVE, SIGN, STRIPE, TargetModel, World, raycast


@dataclass
class LidarConfig:
    n_rings: int = 32
    vfov_deg: float = 90.0
    n_az: int = 512
    rate_hz: float = 10.0
    max_range: float = 15.0
    range_sigma: float = 0.02
    # vertical half-footprint of a beam; defaults to half the ring spacing
    half_divergence_deg: float | None = None
    marker_intensity: tuple[float, float] = (2500.0, 100.0)
    wall_intensity: tuple[float, float] = (80.0, 40.0)

    def __post_init__(self):
        if self.rate_hz <= 0 or self.n_rings < 1 or self.n_az < 1:
            raise ValueError("scan rate must be > 0 and n_rings, n_az >= 1")

    @property
    def period_us(self) -> int:
        return int(round(1e6 / self.rate_hz))

    def elevations(self) -> np.ndarray:
        half = math.radians(self.vfov_deg) / 2.0
        if self.n_rings == 1:
            return np.zeros(1)
        return np.linspace(-half, half, self.n_rings)

    def azimuths(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_az) / self.n_az

    def half_divergence(self) -> float:
        if self.half_divergence_deg is not None:
            return math.radians(self.half_divergence_deg)
        if self.n_rings == 1:
            return 0.0
        return math.radians(self.vfov_deg) / (self.n_rings - 1) / 2.0

    def half_width(self) -> float:
        """Horizontal half-footprint of a beam: half an azimuth bin."""
        return math.pi / self.n_az

    def fire_offsets_us(self) -> np.ndarray:
        return np.rint(np.arange(self.n_az) * (1e6 / self.rate_hz) / self.n_az).astype(np.int64)


@dataclass
class CameraConfig:
    width: int = 640
    height: int = 480
    hfov_deg: float = 70.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_hfov(self.width, self.height, self.hfov_deg)


@dataclass
class LampConfig:
    """Blinding light: a disc of pixels emitting events.

    ``rate_hz`` is the total event rate of the disc. An aperiodic lamp draws
    uniform arrival times; a periodic one makes every disc pixel fire at ``freq_hz``.
    """

    center: tuple[float, float] = (540.0, 110.0)
    radius: float = 70.0
    rate_hz: float = 1000.0
    periodic: bool = False
    freq_hz: float = 10.0

    def pixels(self, intr: CameraIntrinsics) -> np.ndarray:
        ys, xs = np.mgrid[0:intr.height, 0:intr.width]
        inside = (xs - self.center[0]) ** 2 + (ys - self.center[1]) ** 2 <= self.radius ** 2
        return np.stack([xs[inside], ys[inside]], axis=1)


@dataclass
class EventNoiseConfig:
    background_rate_hz: float = 0.02  # per pixel
    pulse_width_us: int = 1000
    lamp: LampConfig | None = None


@dataclass
class ForeignLidar:
    """Another robot's LiDAR whose reflections our camera also sees."""

    x: float
    y: float
    yaw: float = 0.0
    z: float = 0.7
    rate_hz: float = 20.0
    phase_us: int = 0


@dataclass
class SensorSim:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    extrinsics: Extrinsics = field(default_factory=Extrinsics)
    noise: EventNoiseConfig = field(default_factory=EventNoiseConfig)
    foreign_lidars: list[ForeignLidar] = field(default_factory=list)


@dataclass
class ScanTruth:
    """Noise-free geometry of every return in a scan, row-aligned with the scan points."""

    points: np.ndarray  # (K, 3) LiDAR frame
    surface: np.ndarray
    obj: np.ndarray
    fire_t: np.ndarray  # firing time of the beam (us)
    z_span: np.ndarray  # (K, 2) LiDAR-frame heights of the reflector patch inside the beam footprint, nan elsewhere

    @property
    def reflective(self) -> np.ndarray:
        return np.isin(self.surface, REFLECTIVE)


_TRIG_CACHE: dict = {}


def reflector_spans(world: World, target: TargetModel | None, surface: np.ndarray, obj: np.ndarray,
                    horiz: np.ndarray, elev: np.ndarray, half_div: float, oz: float) -> np.ndarray:
    """World-height interval of the reflector inside each beam's vertical footprint.

    ``elev`` is the nominal elevation of each hit and ``oz`` the emitter height.
    Rows that are not reflector hits are nan.
    """
    span = np.full((len(surface), 2), np.nan)
    band = np.full((len(surface), 2), np.nan)
    sign = surface == SIGN
    if sign.any() and world.markers:
        mz = np.array([[m.z - m.height / 2, m.z + m.height / 2] for m in world.markers])
        band[sign] = mz[obj[sign]]
    stripe = surface == STRIPE
    if stripe.any() and target is not None:
        band[stripe] = target.stripe_bands()[obj[stripe]]
    refl = sign | stripe
    lo = oz + horiz[refl] * np.tan(elev[refl] - half_div)
    hi = oz + horiz[refl] * np.tan(elev[refl] + half_div)
    span[refl, 0] = np.maximum(band[refl, 0], lo)
    span[refl, 1] = np.minimum(band[refl, 1], hi)
    return span


def _trig_tables(cfg: LidarConfig) -> dict:
    key = (cfg.n_rings, cfg.vfov_deg, cfg.n_az, cfg.rate_hz)
    if key not in _TRIG_CACHE:
        a, e = cfg.azimuths(), cfg.elevations()
        _TRIG_CACHE[key] = {"cos_a": np.cos(a), "sin_a": np.sin(a), "tan_e": np.tan(e),
                            "sec_e": 1.0 / np.cos(e), "elev": e, "fire": cfg.fire_offsets_us()}
    return _TRIG_CACHE[key]


def _lidar_origin(robot: Pose2D, ext: Extrinsics):
    # the simulator supports yaw-only LiDAR mounts
    c, s = math.cos(robot.yaw), math.sin(robot.yaw)
    tx, ty, tz = ext.lidar_trans
    yaw = robot.yaw + math.atan2(ext.lidar_rot[1, 0], ext.lidar_rot[0, 0])
    return (robot.x + c * tx - s * ty, robot.y + s * tx + c * ty, tz), yaw


def simulate_scan(world: World, target: TargetModel | None, target_xy, robot: Pose2D, sim: SensorSim,
                  t_start: int, rng: np.random.Generator) -> tuple[LidarScan, ScanTruth]:
    """One revolution starting at ``t_start`` (us); the scan is stamped at completion."""
    cfg = sim.lidar
    origin, yaw = _lidar_origin(robot, sim.extrinsics)
    az, elev = cfg.azimuths(), cfg.elevations()
    hits = raycast(world, target, target_xy, origin, yaw, az, elev, cfg.half_divergence(), cfg.max_range)
    flat = np.flatnonzero(hits.surface != MISS)
    ring, col = np.divmod(flat, cfg.n_az)
    horiz = hits.horiz.ravel()[flat]
    trig = _trig_tables(cfg)
    true_pts = np.empty((len(flat), 3))
    true_pts[:, 0] = horiz * trig["cos_a"][col]
    true_pts[:, 1] = horiz * trig["sin_a"][col]
    true_pts[:, 2] = horiz * trig["tan_e"][ring]
    surface = hits.surface.ravel()[flat]
    obj = hits.obj.ravel()[flat]
    out = np.empty((len(flat), 4))
    if cfg.range_sigma > 0:
        rel = rng.standard_normal(len(flat), dtype=np.float32) * cfg.range_sigma / (horiz * trig["sec_e"][ring])
        out[:, :3] = true_pts * (1.0 + rel)[:, None]
    else:
        out[:, :3] = true_pts
    refl = (surface == SIGN) | (surface == STRIPE)
    mu = np.where(refl, cfg.marker_intensity[0], cfg.wall_intensity[0])
    sd = np.where(refl, cfg.marker_intensity[1], cfg.wall_intensity[1])
    out[:, 3] = np.maximum(mu + sd * rng.standard_normal(len(flat), dtype=np.float32), 0.0)
    fire_t = t_start + trig["fire"][col]
    z_span = reflector_spans(world, target, surface, obj, horiz, trig["elev"][ring], cfg.half_divergence(),
                             origin[2]) - origin[2]
    scan = LidarScan(t_start + cfg.period_us, out)
    return scan, ScanTruth(true_pts, surface, obj, fire_t, z_span)


def project_to_pixels(pts_lidar: np.ndarray, intr: CameraIntrinsics, ext: Extrinsics):
    """Nearest-pixel projection; returns (u, v, visible mask)."""
    pc = ext.lidar_to_camera(pts_lidar)
    z = pc[:, 2]
    front = z > 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.rint(intr.fx * pc[:, 0] / z + intr.cx)
        v = np.rint(intr.fy * pc[:, 1] / z + intr.cy)
    vis = front & np.isfinite(u) & np.isfinite(v) & intr.contains(u, v)
    u = np.where(vis, u, -1).astype(np.int64)
    v = np.where(vis, v, -1).astype(np.int64)
    return u, v, vis


def _expand_ranges(first: np.ndarray, count: np.ndarray):
    """Owner index and value of every integer in the ranges [first, first + count)."""
    count = np.maximum(count, 0)
    owner = np.repeat(np.arange(len(first)), count)
    offs = np.arange(int(count.sum())) - np.repeat(np.cumsum(count) - count, count)
    return owner, first[owner] + offs


def lit_pixels(pts_lidar: np.ndarray, fire_t: np.ndarray, intr: CameraIntrinsics, ext: Extrinsics,
               half_width: float = 0.0, pivot=(0.0, 0.0), z_span: np.ndarray | None = None):
    """Pixels lit by reflector hits in one revolution and the first firing time at each.

    A hit lights the image of the reflector patch inside its beam footprint:
    columns covering +/- ``half_width`` rad of azimuth about the vertical axis
    through ``pivot`` (the emitting LiDAR's x, y in our LiDAR frame) and rows
    covering the height interval ``z_span[i]`` (LiDAR frame) at the hit. Pixel
    centres on a shared boundary belong to one side only, and a patch thinner
    than a pixel still lights its nearest pixel. Without a footprint a hit
    lights the single pixel it projects to. Several hits on the same pixel
    within one revolution merge into the earliest pulse. Returns (x, y, t).
    """
    pts = np.asarray(pts_lidar, dtype=float).reshape(-1, 3)
    fire_t = np.asarray(fire_t, dtype=np.int64)
    pc = ext.lidar_to_camera(pts)
    front = pc[:, 2] > 1e-6
    empty = np.zeros(0, dtype=np.int64)
    pts, fire_t, pc = pts[front], fire_t[front], pc[front]
    if z_span is not None:
        z_span = np.asarray(z_span, dtype=float).reshape(-1, 2)[front]
    if len(pts) == 0:
        return empty, empty, empty

    def project(q):
        qc = ext.lidar_to_camera(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = qc[:, 2] > 1e-6
            return (np.where(ok, intr.fx * qc[:, 0] / qc[:, 2] + intr.cx, np.nan),
                    np.where(ok, intr.fy * qc[:, 1] / qc[:, 2] + intr.cy, np.nan))

    u_c = intr.fx * pc[:, 0] / pc[:, 2] + intr.cx
    v_c = intr.fy * pc[:, 1] / pc[:, 2] + intr.cy
    if half_width > 0:
        c, s = math.cos(half_width), math.sin(half_width)
        ends = []
        for sgn in (1.0, -1.0):
            rel_x, rel_y = pts[:, 0] - pivot[0], pts[:, 1] - pivot[1]
            rot = pts.copy()
            rot[:, 0] = pivot[0] + c * rel_x - sgn * s * rel_y
            rot[:, 1] = pivot[1] + sgn * s * rel_x + c * rel_y
            ends.append(project(rot)[0])
        # larger azimuth maps to smaller u
        u_first = np.ceil(ends[0])
        u_count = np.ceil(ends[1]) - u_first
    else:
        u_first, u_count = np.rint(u_c), np.ones(len(pts))
    if z_span is not None:
        top, bottom = pts.copy(), pts.copy()
        top[:, 2], bottom[:, 2] = z_span[:, 1], z_span[:, 0]
        v_first = np.ceil(project(top)[1])
        v_count = np.ceil(project(bottom)[1]) - v_first
    else:
        v_first, v_count = np.rint(v_c), np.ones(len(pts))
    ok = np.isfinite(u_first) & np.isfinite(u_count) & np.isfinite(v_first) & np.isfinite(v_count)
    u_first = np.where(ok, u_first, 0).astype(np.int64)
    v_first = np.where(ok, v_first, 0).astype(np.int64)
    u_count = np.where(ok, u_count, 0).astype(np.int64)
    v_count = np.where(ok, v_count, 0).astype(np.int64)
    # sub-pixel patches light the pixel under the hit
    thin_u = ok & (u_count <= 0)
    u_first[thin_u], u_count[thin_u] = np.rint(u_c[thin_u]).astype(np.int64), 1
    thin_v = ok & (v_count <= 0)
    v_first[thin_v], v_count[thin_v] = np.rint(v_c[thin_v]).astype(np.int64), 1
    # clip to the sensor
    u_last = np.minimum(u_first + u_count, intr.width)
    v_last = np.minimum(v_first + v_count, intr.height)
    u_first, v_first = np.maximum(u_first, 0), np.maximum(v_first, 0)
    u_count, v_count = u_last - u_first, v_last - v_first
    u_count[v_count <= 0] = 0
    owner, u = _expand_ranges(u_first, u_count)
    owner2, v = _expand_ranges(v_first[owner], v_count[owner])
    u, owner = u[owner2], owner[owner2]
    if len(u) == 0:
        return empty, empty, empty
    t = fire_t[owner]
    lin = v * intr.width + u
    order = np.lexsort((t, lin))
    lin, t = lin[order], t[order]
    first = np.ones(len(lin), dtype=bool)
    first[1:] = lin[1:] != lin[:-1]
    lin, t = lin[first], t[first]
    return lin % intr.width, lin // intr.width, t


def synthesize_events(pts_lidar: np.ndarray, fire_t: np.ndarray, intr: CameraIntrinsics, ext: Extrinsics,
                      pulse_width_us: int = 1000, half_width: float = 0.0, pivot=(0.0, 0.0),
                      z_span: np.ndarray | None = None) -> np.ndarray:
    """A positive event at the first firing on each lit pixel and a negative one ``pulse_width_us`` later."""
    x, y, t = lit_pixels(pts_lidar, fire_t, intr, ext, half_width, pivot, z_span)
    ev = np.empty(2 * len(x), dtype=EVENT_DTYPE)
    ev["x"] = np.tile(x, 2)
    ev["y"] = np.tile(y, 2)
    ev["t"] = np.concatenate([t, t + pulse_width_us])
    ev["p"] = np.repeat([1, 0], len(x))
    return ev


def background_events(intr: CameraIntrinsics, t0: int, t1: int, rate_hz: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Uniform per-pixel Poisson noise over [t0, t1) with random polarity."""
    n_px = intr.width * intr.height
    count = rng.poisson(rate_hz * n_px * (t1 - t0) * 1e-6) if rate_hz > 0 else 0
    ev = np.empty(count, dtype=EVENT_DTYPE)
    ev["t"] = rng.integers(t0, t1, count)
    ev["x"] = rng.integers(0, intr.width, count)
    ev["y"] = rng.integers(0, intr.height, count)
    ev["p"] = rng.integers(0, 2, count)
    return ev


def lamp_events(lamp: LampConfig, intr: CameraIntrinsics, t0: int, t1: int, rng: np.random.Generator,
                pulse_width_us: int = 1000) -> np.ndarray:
    px = lamp.pixels(intr)
    if len(px) == 0:
        return np.empty(0, dtype=EVENT_DTYPE)
    if lamp.periodic:
        period = int(round(1e6 / lamp.freq_hz))
        starts = np.arange(-(-t0 // period) * period, t1, period)
        n = len(starts) * len(px)
        ev = np.empty(2 * n, dtype=EVENT_DTYPE)
        t = np.repeat(starts, len(px))
        ev["t"] = np.concatenate([t, t + pulse_width_us])
        ev["x"] = np.tile(px[:, 0], 2 * len(starts))
        ev["y"] = np.tile(px[:, 1], 2 * len(starts))
        ev["p"] = np.repeat([1, 0], n)
        return ev
    count = rng.poisson(lamp.rate_hz * (t1 - t0) * 1e-6)
    pick = rng.integers(0, len(px), count)
    ev = np.empty(count, dtype=EVENT_DTYPE)
    ev["t"] = rng.integers(t0, t1, count)
    ev["x"] = px[pick, 0]
    ev["y"] = px[pick, 1]
    ev["p"] = rng.integers(0, 2, count)
    return ev


def foreign_lidar_hits(world: World, target: TargetModel | None, target_xy, fl: ForeignLidar,
                       lidar: LidarConfig, robot: Pose2D, ext: Extrinsics, t0: int, t1: int):
    """Reflector hits of a foreign LiDAR in our LiDAR frame.

    Returns the foreign sensor's x, y in our LiDAR frame and one (points, fire
    times, height spans) triple per foreign revolution starting in [t0, t1).
    """
    period = int(round(1e6 / fl.rate_hz))
    first = -(-(t0 - fl.phase_us) // period) * period + fl.phase_us
    az, elev = lidar.azimuths(), lidar.elevations()
    offsets = np.rint(np.arange(lidar.n_az) * period / lidar.n_az).astype(np.int64)
    hits = raycast(world, target, target_xy, (fl.x, fl.y, fl.z), fl.yaw, az, elev,
                   lidar.half_divergence(), lidar.max_range)
    ring, col = np.nonzero(np.isin(hits.surface, REFLECTIVE))
    horiz = hits.horiz[ring, col]
    ang = fl.yaw + az[col]
    wx = fl.x + horiz * np.cos(ang)
    wy = fl.y + horiz * np.sin(ang)
    wz = fl.z + horiz * np.tan(elev[ring])
    origin, yaw = _lidar_origin(robot, ext)
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = wx - origin[0], wy - origin[1]
    pts = np.stack([c * dx + s * dy, -s * dx + c * dy, wz - origin[2]], axis=1)
    z_span = reflector_spans(world, target, hits.surface[ring, col], hits.obj[ring, col], horiz, elev[ring],
                             lidar.half_divergence(), fl.z) - origin[2]
    fdx, fdy = fl.x - origin[0], fl.y - origin[1]
    pivot = (c * fdx + s * fdy, -s * fdx + c * fdy)
    return pivot, [(pts, start + offsets[col], z_span) for start in range(first, t1, period)]
