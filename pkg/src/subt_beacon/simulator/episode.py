"""Closed-loop episodes: simulate sensors, run the detection pipeline, track with the NMPC."""
from __future__ import annotations

import math
import zlib
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np

from ..core import CameraIntrinsics, Extrinsics, Pose2D, wrap_angle
from ..events import EVENT_DTYPE, EventDetector, EventDetectorConfig, cluster_centroids, sort_events
from ..fusion import DetectionFrame, TrackAssociator, TrackedTarget, pair_clusters
from ..lidar import LidarCluster, LidarDetectorConfig, kmeans_cluster, select_m
from ..tracker import NmpcConfig, NmpcController, ScenarioMode, classify_scenario, make_reference
from .sensors import SensorSim, background_events, foreign_lidar_hits, lamp_events, lit_pixels, simulate_scan, \
    synthesize_events
from .world import STRIPE, TargetModel, World


def step_robot(pose: Pose2D, control, dt: float) -> Pose2D:
    """Euler step of the unicycle model (same model the NMPC predicts with)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v, psi = control
    return Pose2D(pose.x + dt * v * math.cos(pose.yaw), pose.y + dt * v * math.sin(pose.yaw), pose.yaw + dt * psi)


def quantize(x):
    """Round to 9 significant digits, the precision of every float written to the logs."""
    if np.ndim(x) == 0:
        return float(f"{float(x):.9g}")
    a = np.asarray(x, dtype=float)
    return np.array([float(f"{v:.9g}") for v in a.ravel()]).reshape(a.shape)


def fmt(x) -> str:
    return f"{x:.9g}"


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named, independent random stream derived from the episode seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), *extra]))


def kmeans_rng(seed: int, t_us: int) -> np.random.Generator:
    return substream(seed, "kmeans", t_us)


@dataclass
class PipelineConfig:
    event: EventDetectorConfig = field(default_factory=EventDetectorConfig)
    lidar: LidarDetectorConfig = field(default_factory=LidarDetectorConfig)
    theta_gate: float = 0.15


@dataclass
class RobotConfig:
    start: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))
    radius: float = 0.3
    hold: bool = False  # observation only: the controller runs but the robot does not move
    odom_sigma_xy: float = 0.0  # random-walk drift per tick (m)
    odom_sigma_yaw: float = 0.0  # rad per tick
    actuation_sigma_v: float = 0.0
    actuation_sigma_psi: float = 0.0


@dataclass
class EpisodeConfig:
    world: World
    target: TargetModel | None = None
    sensors: SensorSim = field(default_factory=SensorSim)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    robot: RobotConfig = field(default_factory=RobotConfig)
    duration_s: float = 10.0
    cloud_min_intensity: float = 500.0  # cloud log keeps points at or above this
    full_cloud: bool = False
    loc_max_range: float = 10.0

    def __post_init__(self):
        if not self.full_cloud and self.pipeline.lidar.tau < self.cloud_min_intensity:
            raise ValueError("tau below the cloud logging threshold would make replay diverge")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration_s * self.sensors.lidar.rate_hz))


class DetectionPipeline:
    """Event and LiDAR detection plus fusion and track association, shared by live runs and replay."""

    def __init__(self, intr: CameraIntrinsics, cfg: PipelineConfig, seed: int):
        self.intr = intr
        self.cfg = cfg
        self.seed = seed
        self.events = EventDetector(intr.width, intr.height, cfg.event)
        self.associator = TrackAssociator()

    def ingest(self, events: np.ndarray) -> None:
        self.events.ingest(events)

    def detect(self, t_us: int, cloud: np.ndarray, robot_yaw: float):
        """Detection tick at ``t_us`` on a cloud of rows x, y, z, intensity[, extra columns]."""
        clusters = self.events.detect(t_us)
        centroids = cluster_centroids(clusters)
        cloud = np.asarray(cloud, dtype=float)
        bright = cloud[cloud[:, 3] >= self.cfg.lidar.tau] if len(cloud) else cloud.reshape(0, 4)
        if len(bright):
            lidar_clusters = kmeans_cluster(bright, select_m(len(centroids)), kmeans_rng(self.seed, t_us),
                                            self.cfg.lidar.min_cluster_pts)
        else:
            lidar_clusters = []
        frame = pair_clusters(centroids, self.intr, [c.centroid for c in lidar_clusters], self.cfg.theta_gate, t_us)
        mode = classify_scenario(frame)
        target = self.associator.associate(frame, self.intr, robot_yaw)
        return frame, mode, target, clusters, lidar_clusters


DETECTIONS_HEADER = "t_us,mode,x_l,y_l,z_l,theta_n,theta_m,pair_cost"
CONTROL_HEADER = "t_us,mode,v,psi,x,y,yaw,x_ref,y_ref,dist_to_target"
EVENTS_HEADER = "t_us,x,y,p"
CLOUD_HEADER = "scan_id,t_us,x,y,z,intensity"
POSE_HEADER = "t_us,x,y,yaw"
METRICS_HEADER = "episode,median_loc_err_m,p95_loc_err_m,min_dist_m,detect_rate,max_loss_s,collided"


def detection_row(t_us: int, mode: ScenarioMode, target: TrackedTarget | None) -> str:
    x = y = z = tn = tm = cost = ""
    if target is not None:
        if target.point_lidar is not None:
            x, y, z = (fmt(v) for v in target.point_lidar)
        if target.pair is not None:
            tn, tm, cost = fmt(target.pair.theta_n), fmt(target.pair.theta_m), fmt(target.pair.pair_cost)
        elif target.kind == "event":
            tn = fmt(target.bearing)
        else:
            tm = fmt(target.bearing)
    return ",".join([str(t_us), mode.value, x, y, z, tn, tm, cost])


def format_events(ev: np.ndarray) -> list[str]:
    return [f"{t},{x},{y},{p}" for t, x, y, p in zip(ev["t"].tolist(), ev["x"].tolist(), ev["y"].tolist(),
                                                      ev["p"].tolist())]


class EpisodeLogs:
    """CSV logs of one episode. The bulky sensor logs stream to ``out_dir`` (when
    given); detections and control are also kept in memory."""

    SENSOR_FILES = (("events.csv", EVENTS_HEADER), ("cloud.csv", CLOUD_HEADER), ("pose.csv", POSE_HEADER))

    def __init__(self, out_dir: str | Path | None):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.files = {}
        self.detections = [DETECTIONS_HEADER]
        self.control = [CONTROL_HEADER]
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name, header in self.SENSOR_FILES:
                f = open(self.out_dir / name, "w", newline="")
                f.write(header + "\n")
                self.files[name] = f

    def write(self, name: str, lines: list[str]):
        if name in self.files and lines:
            self.files[name].write("\n".join(lines) + "\n")

    def close(self, collision: str | None = None) -> dict[str, str]:
        for f in self.files.values():
            f.close()
        texts = {"detections.csv": "\n".join(self.detections) + "\n",
                 "control.csv": "\n".join(self.control) + "\n"}
        if collision is not None:
            texts["collision.csv"] = "t_us,x,y,clearance\n" + collision + "\n"
        if self.out_dir is not None:
            for name, text in texts.items():
                (self.out_dir / name).write_text(text)
        return texts


@dataclass
class TickRecord:
    """Everything a test may want to inspect about one tick."""

    t_us: int
    pose: Pose2D  # true pose during the revolution
    odom: Pose2D
    target_xy: tuple[float, float] | None
    mode: ScenarioMode
    frame: DetectionFrame
    tracked: TrackedTarget | None
    event_clusters: list
    lidar_clusters: list[LidarCluster]
    control: tuple[float, float]
    dist_to_target: float | None
    loc_error: float | None  # fused point vs vest ground truth, LiDAR frame
    hit_error: float | None  # fused point vs true positions of the paired cluster's hits
    paired_all_stripe: bool | None
    lit_own: np.ndarray | None = None  # linear pixel indices lit by our LiDAR
    lit_foreign: np.ndarray | None = None


@dataclass
class EpisodeMetrics:
    median_loc_err_m: float
    p95_loc_err_m: float
    min_dist_m: float
    detect_rate: float
    max_loss_s: float
    collided: bool

    def row(self, name: str) -> str:
        vals = [self.median_loc_err_m, self.p95_loc_err_m, self.min_dist_m, self.detect_rate, self.max_loss_s]
        return ",".join([name] + [fmt(v) for v in vals] + [str(int(self.collided))])


@dataclass
class EpisodeResult:
    seed: int
    metrics: EpisodeMetrics
    ticks: list[TickRecord]
    logs: dict[str, str]  # detections.csv and control.csv text
    collided: bool = False
    collision_t_us: int | None = None
    log_dir: Path | None = None

    @property
    def modes(self) -> list[ScenarioMode]:
        return [r.mode for r in self.ticks]


def _to_lidar_frame(p_world, robot: Pose2D, ext: Extrinsics) -> np.ndarray:
    """World point (x, y, z) to the LiDAR frame of a robot at ``robot`` (yaw-only mounts)."""
    ox, oy, oz = ext.lidar_trans
    c, s = math.cos(robot.yaw), math.sin(robot.yaw)
    lx, ly = robot.x + c * ox - s * oy, robot.y + s * ox + c * oy
    dx, dy = p_world[0] - lx, p_world[1] - ly
    body = np.array([c * dx + s * dy, -s * dx + c * dy, p_world[2] - oz])
    return ext.lidar_rot.T @ body


def compute_metrics(ticks: list[TickRecord], dt: float, collided: bool) -> EpisodeMetrics:
    errs = np.array([r.loc_error for r in ticks if r.loc_error is not None])
    dists = [r.dist_to_target for r in ticks if r.dist_to_target is not None]
    both = np.array([r.mode is ScenarioMode.BOTH for r in ticks], dtype=bool)
    longest = run = 0
    for b in both:
        run = 0 if b else run + 1
        longest = max(longest, run)
    return EpisodeMetrics(
        median_loc_err_m=float(np.median(errs)) if len(errs) else math.nan,
        p95_loc_err_m=float(np.percentile(errs, 95)) if len(errs) else math.nan,
        min_dist_m=float(min(dists)) if dists else math.nan,
        detect_rate=float(both.mean()) if len(both) else 0.0,
        max_loss_s=longest * dt,
        collided=collided,
    )


def run_episode(cfg: EpisodeConfig, seed: int, log_dir: str | Path | None = None, keep_lit: bool = False,
                on_tick=None, name: str | None = None) -> EpisodeResult:
    """Fixed-step loop at the detection tick.

    Tick k covers the LiDAR revolution [kT, (k+1)T); its scan and detection
    tick are stamped at (k+1)T. Events up to the tick time are ingested before
    detection; later ones (negative edges of the last pulses) carry over.
    With ``log_dir`` all CSV logs are written there, including a one-row
    metrics.csv whose episode column is ``name`` (default ``seed_<seed>``).
    ``on_tick(record, pipeline)`` is called after every detection tick.
    """
    sim = cfg.sensors
    lidar_cfg = sim.lidar
    intr = sim.camera.intrinsics()
    ext = sim.extrinsics
    period = lidar_cfg.period_us
    dt = period * 1e-6
    rng_lidar = substream(seed, "lidar-noise")
    rng_events = substream(seed, "event-noise")
    rng_odom = substream(seed, "odom")
    rng_act = substream(seed, "actuation")
    pipeline = DetectionPipeline(intr, cfg.pipeline, seed)
    controller = NmpcController(cfg.nmpc)
    pose = cfg.robot.start
    drift = np.zeros(3)
    carry = np.empty(0, dtype=EVENT_DTYPE)
    ticks: list[TickRecord] = []
    logs = EpisodeLogs(log_dir)
    collision = None
    collided = False
    collision_t = None
    half_w = lidar_cfg.half_width()

    for k in range(cfg.n_ticks):
        t0, t1 = k * period, (k + 1) * period
        target_xy = cfg.target.position(t0 * 1e-6) if cfg.target is not None else None
        scan, truth = simulate_scan(cfg.world, cfg.target, target_xy, pose, sim, t0, rng_lidar)

        refl = truth.reflective
        batches = [carry, synthesize_events(truth.points[refl], truth.fire_t[refl], intr, ext,
                                            sim.noise.pulse_width_us, half_w, z_span=truth.z_span[refl])]
        lit_own = lit_foreign = None
        if keep_lit:
            lx, ly, _ = lit_pixels(truth.points[refl], truth.fire_t[refl], intr, ext, half_w,
                                   z_span=truth.z_span[refl])
            lit_own = ly * intr.width + lx
            lit_foreign = np.empty(0, dtype=np.int64)
        for fl in sim.foreign_lidars:
            pivot, revs = foreign_lidar_hits(cfg.world, cfg.target, target_xy, fl, lidar_cfg, pose, ext, t0, t1)
            for pts, fire, span in revs:
                batches.append(synthesize_events(pts, fire, intr, ext, sim.noise.pulse_width_us, half_w, pivot,
                                                 span))
                if keep_lit:
                    fx, fy, _ = lit_pixels(pts, fire, intr, ext, half_w, pivot, span)
                    lit_foreign = np.union1d(lit_foreign, fy * intr.width + fx)
        batches.append(background_events(intr, t0, t1, sim.noise.background_rate_hz, rng_events))
        if sim.noise.lamp is not None:
            batches.append(lamp_events(sim.noise.lamp, intr, t0, t1, rng_events, sim.noise.pulse_width_us))
        ev = sort_events(np.concatenate(batches))
        split = int(np.searchsorted(ev["t"], t1, side="left"))
        now_ev, carry = ev[:split], ev[split:]
        pipeline.ingest(now_ev)

        # odometry seen by the tracker, rounded to log precision so replay sees the same numbers
        if cfg.robot.odom_sigma_xy > 0 or cfg.robot.odom_sigma_yaw > 0:
            drift += rng_odom.standard_normal(3) * [cfg.robot.odom_sigma_xy, cfg.robot.odom_sigma_xy,
                                                    cfg.robot.odom_sigma_yaw]
        odom = Pose2D(quantize(pose.x + drift[0]), quantize(pose.y + drift[1]),
                      quantize(wrap_angle(pose.yaw + drift[2])))

        pts = scan.points
        keep = np.ones(len(pts), dtype=bool) if cfg.full_cloud else pts[:, 3] >= cfg.cloud_min_intensity
        rows = np.flatnonzero(keep)
        logged = quantize(pts[rows]) if len(rows) else np.zeros((0, 4))
        cloud = np.hstack([logged, rows[:, None].astype(float)])
        frame, mode, tracked, ev_clusters, l_clusters = pipeline.detect(t1, cloud, odom.yaw)

        ref = make_reference(mode, frame, odom, cfg.nmpc, intr, ext, tracked)
        v, psi = controller(odom, ref)

        dist = loc_err = hit_err = None
        all_stripe = None
        if cfg.target is not None:
            origin_xy = (pose.x + ext.lidar_trans[0] * math.cos(pose.yaw) - ext.lidar_trans[1] * math.sin(pose.yaw),
                         pose.y + ext.lidar_trans[0] * math.sin(pose.yaw) + ext.lidar_trans[1] * math.cos(pose.yaw))
            vest = cfg.target.visible_stripe_centroid(origin_xy, target_xy)
            dist = math.hypot(vest[0] - pose.x, vest[1] - pose.y)
            if mode is ScenarioMode.BOTH and tracked is not None and tracked.pair is not None:
                vest_l = _to_lidar_frame(vest, pose, ext)
                if math.hypot(vest_l[0], vest_l[1]) <= cfg.loc_max_range:
                    loc_err = float(np.linalg.norm(np.asarray(tracked.point_lidar) - vest_l))
                cluster = next(c for c in l_clusters if c.centroid == tracked.point_lidar)
                idx = cluster.points[:, 4].astype(np.int64)
                hit_err = float(np.linalg.norm(truth.points[idx].mean(axis=0) - np.asarray(tracked.point_lidar)))
                all_stripe = bool(np.all(truth.surface[idx] == STRIPE))

        ticks.append(TickRecord(t1, pose, odom, target_xy, mode, frame, tracked, ev_clusters, l_clusters,
                                (v, psi), dist, loc_err, hit_err, all_stripe, lit_own, lit_foreign))
        if on_tick is not None:
            on_tick(ticks[-1], pipeline)

        if logs.files:
            logs.write("events.csv", format_events(now_ev))
            logs.write("cloud.csv", [f"{k},{t1},{fmt(r[0])},{fmt(r[1])},{fmt(r[2])},{fmt(r[3])}" for r in logged])
            logs.write("pose.csv", [f"{t1},{fmt(odom.x)},{fmt(odom.y)},{fmt(odom.yaw)}"])
        logs.detections.append(detection_row(t1, mode, tracked))
        dist_s = "" if dist is None else fmt(dist)
        logs.control.append(",".join([str(t1), mode.value, fmt(v), fmt(psi), fmt(pose.x), fmt(pose.y),
                                             fmt(pose.yaw), fmt(ref.x_ref), fmt(ref.y_ref), dist_s]))

        if not cfg.robot.hold:
            if cfg.robot.actuation_sigma_v > 0 or cfg.robot.actuation_sigma_psi > 0:
                nv, npsi = rng_act.standard_normal(2)
                v, psi = v + cfg.robot.actuation_sigma_v * nv, psi + cfg.robot.actuation_sigma_psi * npsi
            pose = step_robot(pose, (v, psi), dt)
            clearance = cfg.world.clearance(pose.x, pose.y)
            if clearance < cfg.robot.radius:
                collided = True
                collision_t = t1
                collision = f"{t1},{fmt(pose.x)},{fmt(pose.y)},{fmt(clearance)}"
                break

    metrics = compute_metrics(ticks, dt, collided)
    texts = logs.close(collision)
    if logs.out_dir is not None:
        row = metrics.row(name if name is not None else f"seed_{seed}")
        (logs.out_dir / "metrics.csv").write_text(f"{METRICS_HEADER}\n{row}\n")
    return EpisodeResult(seed, metrics, ticks, texts, collided, collision_t, logs.out_dir)
