"""Offline replay: run logged events and clouds back through the detection pipeline."""
from __future__ import annotations

import logging
import warnings
from pathlib import Path

import numpy as np

from ..events import EVENT_DTYPE
from ..simulator.episode import (CLOUD_HEADER, DETECTIONS_HEADER, EVENTS_HEADER, POSE_HEADER, DetectionPipeline,
                                 detection_row)
from .config import ScenarioSpec, spec_from_table

log = logging.getLogger(__name__)

EVENTS_DTYPE = np.dtype([("t_us", np.int64), ("x", np.int64), ("y", np.int64), ("p", np.int64)])
CLOUD_DTYPE = np.dtype([("scan_id", np.int64), ("t_us", np.int64), ("x", float), ("y", float), ("z", float),
                        ("intensity", float)])
POSE_DTYPE = np.dtype([("t_us", np.int64), ("x", float), ("y", float), ("yaw", float)])


class ReplayError(ValueError):
    """Malformed replay input, anchored to a file and line."""

    def __init__(self, message: str, path: str | Path, line: int | None = None):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")


def _locate_bad_row(path: Path, dtype: np.dtype) -> tuple[int, str] | None:
    """Slow scan for the first row that does not parse, as (line number, reason)."""
    casts = [int if np.issubdtype(dtype[i], np.integer) else float for i in range(len(dtype))]
    with open(path) as f:
        next(f, None)
        for lineno, raw in enumerate(f, start=2):
            line = raw.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != len(casts):
                return lineno, f"expected {len(casts)} fields, got {len(fields)}"
            for name, cast, val in zip(dtype.names, casts, fields):
                try:
                    cast(val)
                except ValueError:
                    return lineno, f"bad value {val!r} for {name}"
    return None


def read_log(path: str | Path, header: str, dtype: np.dtype) -> np.ndarray:
    """Structured array from a CSV log with the given header."""
    path = Path(path)
    try:
        with open(path) as f:
            first = f.readline().strip()
    except OSError as exc:
        raise ReplayError(exc.strerror or str(exc), path) from None
    if first != header:
        raise ReplayError(f"expected header '{header}'", path, 1)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # header-only files
            data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=dtype, ndmin=1)
    except ValueError as exc:
        bad = _locate_bad_row(path, dtype)
        if bad is None:
            raise ReplayError(str(exc), path) from None
        raise ReplayError(bad[1], path, bad[0]) from None
    return data


def _check_nondecreasing(t: np.ndarray, path: Path, what: str):
    back = np.flatnonzero(np.diff(t) < 0)
    if len(back):
        raise ReplayError(f"{what} timestamps go backwards", path, int(back[0]) + 3)


def replay(events_path, cloud_path, pose_path, spec: ScenarioSpec | None = None, seed: int | None = None) -> str:
    """Detections CSV text for logged events, clouds and poses.

    Pose rows define the detection ticks. Before the tick at t, all events with
    timestamps below t are ingested; the cloud rows stamped t form that tick's scan.
    """
    spec = spec if spec is not None else spec_from_table({"name": "replay", "world": ""})
    seed = spec.seeds[0] if seed is None else seed
    intr = spec.camera.intrinsics()
    events_path, cloud_path, pose_path = Path(events_path), Path(cloud_path), Path(pose_path)

    ev = read_log(events_path, EVENTS_HEADER, EVENTS_DTYPE)
    cloud = read_log(cloud_path, CLOUD_HEADER, CLOUD_DTYPE)
    pose = read_log(pose_path, POSE_HEADER, POSE_DTYPE)
    _check_nondecreasing(ev["t_us"], events_path, "event")
    _check_nondecreasing(cloud["t_us"], cloud_path, "cloud")
    _check_nondecreasing(pose["t_us"], pose_path, "pose")
    bad = np.flatnonzero((ev["p"] < 0) | (ev["p"] > 1) | (ev["x"] < 0) | (ev["x"] >= intr.width) | (ev["y"] < 0)
                         | (ev["y"] >= intr.height))
    if len(bad):
        raise ReplayError("event outside the sensor or polarity not 0/1", events_path, int(bad[0]) + 2)
    log.info("replay: %d events, %d cloud rows, %d ticks", len(ev), len(cloud), len(pose))

    events = np.empty(len(ev), dtype=EVENT_DTYPE)
    events["t"], events["x"], events["y"], events["p"] = ev["t_us"], ev["x"], ev["y"], ev["p"]
    xyzi = np.column_stack([cloud["x"], cloud["y"], cloud["z"], cloud["intensity"]])

    pipeline = DetectionPipeline(intr, spec.pipeline_config(), seed)
    rows = [DETECTIONS_HEADER]
    ev_at = c_lo = 0
    for t_us, yaw in zip(pose["t_us"].tolist(), pose["yaw"].tolist()):
        ev_to = int(np.searchsorted(events["t"], t_us, side="left"))
        pipeline.ingest(events[ev_at:ev_to])
        ev_at = ev_to
        c_lo = int(np.searchsorted(cloud["t_us"], t_us, side="left"))
        c_hi = int(np.searchsorted(cloud["t_us"], t_us, side="right"))
        frame, mode, target, _, _ = pipeline.detect(t_us, xyzi[c_lo:c_hi], yaw)
        rows.append(detection_row(t_us, mode, target))
    return "\n".join(rows) + "\n"
