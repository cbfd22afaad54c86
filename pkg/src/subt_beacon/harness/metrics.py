"""Aggregate per-episode metrics.csv files and gate them against thresholds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..simulator.episode import METRICS_HEADER, fmt

FIELDS = METRICS_HEADER.split(",")[1:]
AGGREGATE_HEADER = "scenario,episodes," + ",".join(FIELDS)


class MetricsError(ValueError):
    def __init__(self, message: str, path: str | Path, line: int | None = None):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")


@dataclass
class EpisodeRow:
    episode: str
    median_loc_err_m: float
    p95_loc_err_m: float
    min_dist_m: float
    detect_rate: float
    max_loss_s: float
    collided: bool

    @property
    def scenario(self) -> str:
        """Episodes are named ``scenario/seed_N``; the prefix groups them."""
        return self.episode.split("/")[0]


def _nanmean(xs: list[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return sum(xs) / len(xs) if xs else math.nan


def _nanmin(xs: list[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return min(xs) if xs else math.nan


@dataclass
class Aggregate:
    """Mean localization errors and detection rate, worst-case distance, loss and collision count."""

    scenario: str
    episodes: int
    median_loc_err_m: float
    p95_loc_err_m: float
    min_dist_m: float
    detect_rate: float
    max_loss_s: float
    collided: int

    @classmethod
    def of(cls, scenario: str, rows: list[EpisodeRow]) -> Aggregate:
        return cls(scenario, len(rows),
                   _nanmean([r.median_loc_err_m for r in rows]),
                   _nanmean([r.p95_loc_err_m for r in rows]),
                   _nanmin([r.min_dist_m for r in rows]),
                   _nanmean([r.detect_rate for r in rows]),
                   max(r.max_loss_s for r in rows),
                   sum(r.collided for r in rows))

    def row(self) -> str:
        vals = [self.median_loc_err_m, self.p95_loc_err_m, self.min_dist_m, self.detect_rate, self.max_loss_s]
        return ",".join([self.scenario, str(self.episodes)] + [fmt(v) for v in vals] + [str(self.collided)])


@dataclass
class MetricsReport:
    rows: list[EpisodeRow] = field(default_factory=list)

    @property
    def aggregates(self) -> list[Aggregate]:
        groups: dict[str, list[EpisodeRow]] = {}
        for r in self.rows:
            groups.setdefault(r.scenario, []).append(r)
        return [Aggregate.of(name, rows) for name, rows in groups.items()]

    def text(self) -> str:
        return "\n".join([AGGREGATE_HEADER] + [a.row() for a in self.aggregates]) + "\n"

    def gate(self, min_detect_rate: float | None = None, max_p95_err: float | None = None) -> list[str]:
        """Per-episode threshold failures (empty when everything passes)."""
        failures = []
        for r in self.rows:
            if min_detect_rate is not None and not r.detect_rate >= min_detect_rate:
                failures.append(f"{r.episode}: detect_rate {fmt(r.detect_rate)} < {fmt(min_detect_rate)}")
            if max_p95_err is not None and not r.p95_loc_err_m <= max_p95_err:
                failures.append(f"{r.episode}: p95_loc_err_m {fmt(r.p95_loc_err_m)} > {fmt(max_p95_err)}")
        return failures


def read_metrics(path: str | Path) -> list[EpisodeRow]:
    path = Path(path)
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise MetricsError(exc.strerror or str(exc), path) from None
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != METRICS_HEADER.split(","):
            raise MetricsError(f"expected header '{METRICS_HEADER}'", path, 1)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise MetricsError(f"expected {len(header)} fields, got {len(rec)}", path, lineno)
            try:
                vals = [float(v) for v in rec[1:6]]
                collided = int(rec[6])
            except ValueError as exc:
                raise MetricsError(str(exc), path, lineno) from None
            if collided not in (0, 1):
                raise MetricsError("collided must be 0 or 1", path, lineno)
            rows.append(EpisodeRow(rec[0], *vals, bool(collided)))
    return rows


def collect(dirs: list[str | Path]) -> MetricsReport:
    report = MetricsReport()
    for d in dirs:
        report.rows.extend(read_metrics(Path(d) / "metrics.csv"))
    return report
