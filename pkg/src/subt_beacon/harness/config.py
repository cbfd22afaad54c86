"""Scenario and world files: TOML text merged over the bundled defaults."""
from __future__ import annotations

import copy
import dataclasses
import math
import re
import sys
import types
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from ..core import Extrinsics, Pose2D
from ..events import EventDetectorConfig
from ..lidar import LidarDetectorConfig
from ..simulator.episode import EpisodeConfig, PipelineConfig, RobotConfig
from ..simulator.sensors import CameraConfig, EventNoiseConfig, ForeignLidar, LampConfig, LidarConfig, SensorSim
from ..simulator.world import SignMarker, TargetModel, World
from ..tracker import NmpcConfig


class ConfigError(ValueError):
    """A configuration problem anchored to a file and line."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.message = message
        self.path = str(path) if path is not None else "<config>"
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}" if line else f"{self.path}: {message}")


@dataclass
class RobotSpec:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    radius: float = 0.3
    hold: bool = False
    odom_sigma_xy: float = 0.0
    odom_sigma_yaw: float = 0.0
    actuation_sigma_v: float = 0.0
    actuation_sigma_psi: float = 0.0


@dataclass
class TargetSpec:
    present: bool = True
    waypoints: list[tuple[float, float]] = field(default_factory=lambda: [(5.0, 0.0)])
    speed: float = 0.0
    start_delay: float = 0.0
    body_radius: float = 0.35
    body_height: float = 1.8
    stripe_heights: tuple[float, ...] = (1.0, 1.3)
    stripe_thickness: float = 0.05


@dataclass
class ExtrinsicsSpec:
    cam_trans: tuple[float, float, float] = (0.0, 0.0, -0.08)
    lidar_trans: tuple[float, float, float] = (0.0, 0.0, 0.7)


@dataclass
class NoiseSpec:
    background_rate_hz: float = 0.02
    pulse_width_us: int = 1000


@dataclass
class LampSpec:
    enabled: bool = False
    center: tuple[float, float] = (540.0, 110.0)
    radius: float = 70.0
    rate_hz: float = 1000.0
    periodic: bool = False
    freq_hz: float = 10.0


@dataclass
class PipelineSpec:
    f_lo: float = 8.0
    f_hi: float = 12.0
    eps_f: float = 2.0
    min_cluster_px: int = 3
    staleness_factor: float = 2.5
    freq_ema_alpha: float = 0.0  # 0 disables smoothing
    tau: float = 1000.0
    min_cluster_pts: int = 3
    theta_gate: float = 0.15


@dataclass
class LoggingSpec:
    cloud_min_intensity: float = 500.0
    full_cloud: bool = False


@dataclass
class MetricsSpec:
    loc_max_range: float = 10.0


_SECTIONS = {
    "robot": RobotSpec, "target": TargetSpec, "lidar": LidarConfig, "camera": CameraConfig,
    "extrinsics": ExtrinsicsSpec, "noise": NoiseSpec, "lamp": LampSpec, "pipeline": PipelineSpec,
    "nmpc": NmpcConfig, "logging": LoggingSpec, "metrics": MetricsSpec,
}


@dataclass
class ScenarioSpec:
    name: str
    world: str
    duration_s: float = 10.0
    seeds: list[int] = field(default_factory=lambda: [1])
    robot: RobotSpec = field(default_factory=RobotSpec)
    target: TargetSpec = field(default_factory=TargetSpec)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    extrinsics: ExtrinsicsSpec = field(default_factory=ExtrinsicsSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    lamp: LampSpec = field(default_factory=LampSpec)
    foreign_lidar: list[ForeignLidar] = field(default_factory=list)
    pipeline: PipelineSpec = field(default_factory=PipelineSpec)
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    logging: LoggingSpec = field(default_factory=LoggingSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def world_path(self) -> Path:
        p = Path(self.world)
        return p if p.is_absolute() else self.base_dir / p

    def sensor_sim(self) -> SensorSim:
        ext = Extrinsics(cam_trans=np.array(self.extrinsics.cam_trans), lidar_trans=np.array(self.extrinsics.lidar_trans))
        lamp = None
        if self.lamp.enabled:
            lamp = LampConfig(self.lamp.center, self.lamp.radius, self.lamp.rate_hz, self.lamp.periodic,
                              self.lamp.freq_hz)
        noise = EventNoiseConfig(self.noise.background_rate_hz, self.noise.pulse_width_us, lamp)
        return SensorSim(copy.deepcopy(self.lidar), copy.deepcopy(self.camera), ext, noise,
                         copy.deepcopy(self.foreign_lidar))

    def pipeline_config(self) -> PipelineConfig:
        p = self.pipeline
        ev = EventDetectorConfig(p.f_lo, p.f_hi, p.eps_f, p.min_cluster_px, p.staleness_factor,
                                 p.freq_ema_alpha if p.freq_ema_alpha > 0 else None)
        return PipelineConfig(ev, LidarDetectorConfig(p.tau, p.min_cluster_pts), p.theta_gate)

    def target_model(self) -> TargetModel | None:
        t = self.target
        if not t.present:
            return None
        return TargetModel(list(t.waypoints), t.speed, t.start_delay, t.body_radius, t.body_height,
                           tuple(t.stripe_heights), t.stripe_thickness)

    def episode_config(self, world: World | None = None) -> EpisodeConfig:
        world = world if world is not None else load_world(self.world_path())
        r = self.robot
        robot = RobotConfig(Pose2D(r.x, r.y, r.yaw), r.radius, r.hold, r.odom_sigma_xy, r.odom_sigma_yaw,
                            r.actuation_sigma_v, r.actuation_sigma_psi)
        return EpisodeConfig(world, self.target_model(), self.sensor_sim(), self.pipeline_config(),
                             copy.deepcopy(self.nmpc), robot, self.duration_s, self.logging.cloud_min_intensity,
                             self.logging.full_cloud, self.metrics.loc_max_range)


# ---------------------------------------------------------------- parsing

def _find_line(text: str, section: str | None, key: str | None, index: int = 0) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or the ``index``-th ``[[section]]``)."""
    current, seen = None, -1
    header_line = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?", line)
        if m:
            current = m.group(1)
            if current == section:
                seen += 1
                if seen == index:
                    header_line = no
            continue
        in_section = (section is None and current is None) or (current == section and seen == index)
        if in_section and key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return header_line


def _decode_error_line(err: Exception) -> int | None:
    m = re.search(r"line (\d+)", str(err))
    return int(m.group(1)) if m else None


def read_toml(path: str | Path, text: str | None = None) -> tuple[dict, str]:
    path = Path(path)
    if text is None:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read file: {exc.strerror}", path) from None
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}", path, _decode_error_line(exc)) from None


def _convert(value, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], where)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{where}: expected true or false, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ValueError(f"{where}: expected a string, got {value!r}")
        return value
    if origin in (list, tuple):
        if not isinstance(value, list):
            raise ValueError(f"{where}: expected an array, got {value!r}")
        if origin is tuple and not (len(args) == 2 and args[1] is Ellipsis):
            if len(value) != len(args):
                raise ValueError(f"{where}: expected {len(args)} elements, got {len(value)}")
            return tuple(_convert(v, a, where) for v, a in zip(value, args))
        item = args[0]
        items = [_convert(v, item, where) for v in value]
        return tuple(items) if origin is tuple else items
    raise TypeError(f"unsupported field type {hint}")


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ValueError(f"{where}: expected a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(table) - names)
    if unknown:
        raise KeyError((unknown[0], f"{where}: unknown key '{unknown[0]}'"))
    kwargs = {k: _convert(v, hints[k], f"{where}.{k}") for k, v in table.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("subt_beacon").joinpath("data", *parts)))


def defaults_table() -> dict:
    return read_toml(data_path("defaults.toml"))[0]


def spec_from_table(table: dict, path: str | Path = "<config>", text: str = "", base_dir: Path | None = None,
                    defaults: dict | None = None) -> ScenarioSpec:
    """Validate a scenario table (merged over ``defaults``) into a ScenarioSpec."""
    merged = _merge(defaults if defaults is not None else defaults_table(), table)
    section, index = None, 0
    try:
        kwargs = {}
        for key in ("name", "world"):
            if key not in merged:
                raise ValueError(f"missing required key '{key}'")
            kwargs[key] = _convert(merged[key], str, key)
        for key, val in merged.items():
            section, index = key, 0
            if key in ("name", "world"):
                continue
            if key == "duration_s":
                kwargs[key] = _convert(val, float, key)
            elif key == "seeds":
                kwargs[key] = _convert(val, list[int], key)
            elif key == "foreign_lidar":
                if not isinstance(val, list):
                    raise ValueError("foreign_lidar: expected an array of tables")
                lst = []
                for index, item in enumerate(val):
                    lst.append(_build(ForeignLidar, item, f"foreign_lidar[{index}]"))
                kwargs[key] = lst
            elif key in _SECTIONS:
                kwargs[key] = _build(_SECTIONS[key], val, key)
            else:
                raise KeyError((key, f"unknown key '{key}'"))
        section = None
        spec = ScenarioSpec(**kwargs, base_dir=base_dir if base_dir is not None else Path("."))
        _validate(spec)
        return spec
    except KeyError as exc:
        bad, msg = exc.args[0]
        if section in ("name", "world", "duration_s", "seeds") or section == bad:
            line = _find_line(text, None, bad)
        else:
            line = _find_line(text, section, bad, index)
        if line is None:  # an unknown [table] rather than a key
            line = _find_line(text, bad, None)
        raise ConfigError(msg, path, line) from None
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        m = re.match(r"^([A-Za-z_]+)(?:\[(\d+)\])?\.([A-Za-z_]+)", msg)
        if m:
            line = _find_line(text, m.group(1), m.group(3), int(m.group(2) or 0))
        else:
            m = re.match(r"^([A-Za-z_]+)", msg)
            line = _find_line(text, None, m.group(1)) if m else None
            if line is None and section is not None:
                line = _find_line(text, section, None)
        raise ConfigError(msg, path, line) from None


def _validate(spec: ScenarioSpec):
    if not spec.seeds:
        raise ValueError("seeds: list must be nonempty")
    if not spec.duration_s > 0:
        raise ValueError("duration_s: must be positive")
    p = spec.pipeline
    if not 0 < p.f_lo < p.f_hi:
        raise ValueError("pipeline.f_lo: band must satisfy 0 < f_lo < f_hi")
    if not p.tau > 0:
        raise ValueError("pipeline.tau: must be positive")
    if not spec.logging.full_cloud and p.tau < spec.logging.cloud_min_intensity:
        raise ValueError("pipeline.tau: must not be below logging.cloud_min_intensity")
    if spec.target.present and not spec.target.waypoints:
        raise ValueError("target.waypoints: need at least one waypoint")
    for name in ("duration_s",):
        if not math.isfinite(getattr(spec, name)):
            raise ValueError(f"{name}: must be finite")


def parse_scenario(path: str | Path, text: str | None = None, check_world: bool = True) -> ScenarioSpec:
    path = Path(path)
    table, text = read_toml(path, text)
    spec = spec_from_table(table, path, text, path.parent)
    # building the runtime objects runs their own validation
    try:
        spec.sensor_sim()
        spec.target_model()
        spec.pipeline_config()
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    if check_world:
        wp = spec.world_path()
        if not wp.is_file():
            raise ConfigError(f"world file not found: {wp}", path, _find_line(text, None, "world"))
        load_world(wp)
    return spec


def _to_table(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if not f.init or not f.compare:
            continue
        v = getattr(obj, f.name)
        if v is None:
            continue
        if dataclasses.is_dataclass(v):
            v = _to_table(v)
        elif isinstance(v, list) and v and dataclasses.is_dataclass(v[0]):
            v = [_to_table(x) for x in v]
        elif isinstance(v, (list, tuple)):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


def serialize_scenario(spec: ScenarioSpec) -> str:
    """Full TOML text of a spec (every field, not just overrides)."""
    return tomli_w.dumps(_to_table(spec))


def resolve_scenario(name_or_path: str) -> Path:
    """A scenario file path, or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    stem = p.name[:-5] if p.name.endswith(".toml") else p.name
    bundled = data_path("scenarios", f"{stem}.toml")
    if bundled.is_file():
        return bundled
    return p


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in data_path("scenarios").iterdir() if p.suffix == ".toml")


# ---------------------------------------------------------------- worlds

def load_world(path: str | Path) -> World:
    path = Path(path)
    table, text = read_toml(path)
    known = {"name", "wall_height", "ceiling", "walls", "marker"}
    for key in table:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'", path, _find_line(text, None, key))
    try:
        walls = _convert(table.get("walls", []), list[list[tuple[float, float]]], "walls")
        for i, line in enumerate(walls):
            if len(line) < 2:
                raise ValueError(f"walls: polyline {i} needs at least two points")
        markers = []
        for i, m in enumerate(table.get("marker", [])):
            try:
                markers.append(_build(SignMarker, m, f"marker[{i}]"))
            except KeyError as exc:
                bad, msg = exc.args[0]
                raise ConfigError(msg, path, _find_line(text, "marker", bad, i)) from None
        return World(walls, _convert(table.get("wall_height", 3.0), float, "wall_height"),
                     _convert(table.get("ceiling", True), bool, "ceiling"), markers,
                     _convert(table.get("name", path.stem), str, "name"))
    except ValueError as exc:
        msg = str(exc)
        m = re.match(r"^([A-Za-z_]+)(?:\[(\d+)\])?(?:\.([A-Za-z_]+))?", msg)
        line = None
        if m and m.group(3):
            line = _find_line(text, m.group(1), m.group(3), int(m.group(2) or 0))
        elif m:
            line = _find_line(text, None, m.group(1))
        raise ConfigError(msg, path, line) from None


def _num(x: float) -> str:
    return repr(float(x))


def world_to_toml(world: World) -> str:
    lines = [f"name = {tomli_w.dumps({'n': world.name})[4:].strip()}",
             f"wall_height = {_num(world.wall_height)}",
             f"ceiling = {'true' if world.ceiling else 'false'}",
             "walls = ["]
    for line in world.walls:
        lines.append("    [" + ", ".join(f"[{_num(x)}, {_num(y)}]" for x, y in line) + "],")
    lines.append("]")
    for m in world.markers:
        lines += ["", "[[marker]]"] + [f"{f.name} = {_num(getattr(m, f.name))}" for f in dataclasses.fields(m)]
    return "\n".join(lines) + "\n"
