"""Per-pixel event frequency estimation, band filtering and 8-connected clustering."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

EVENT_DTYPE = np.dtype([("t", np.int64), ("x", np.int32), ("y", np.int32), ("p", np.int8)])

# forward half of the 8-neighbourhood; the other half is covered by symmetry
_HALF_NEIGHBOURS = ((1, 0), (-1, 1), (0, 1), (1, 1))


class Event(NamedTuple):
    t: int  # microseconds
    x: int
    y: int
    p: int  # 1 positive, 0 negative


def as_event_array(events) -> np.ndarray:
    """Coerce an iterable of ``Event`` tuples (or a structured array) to EVENT_DTYPE."""
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    return np.array([tuple(e) for e in events], dtype=EVENT_DTYPE)


def sort_events(ev: np.ndarray) -> np.ndarray:
    """Time order with a fixed tie-break so equal inputs give equal streams."""
    order = np.lexsort((ev["p"], ev["x"], ev["y"], ev["t"]))
    return ev[order]


@dataclass(frozen=True)
class PassingPixels:
    x: np.ndarray
    y: np.ndarray
    freq: np.ndarray

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_iterable(cls, items: Iterable[tuple[tuple[int, int], float]]) -> "PassingPixels":
        items = list(items)
        if not items:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        xs = np.array([p[0][0] for p in items], dtype=np.int64)
        ys = np.array([p[0][1] for p in items], dtype=np.int64)
        fs = np.array([p[1] for p in items], dtype=float)
        return cls(xs, ys, fs)

    def as_set(self) -> set[tuple[tuple[int, int], float]]:
        return {((int(x), int(y)), float(f)) for x, y, f in zip(self.x, self.y, self.freq)}


class PixelFrequencyMap:
    """Dense per-pixel state: last positive-event time, frequency and staleness deadline.

    Frequencies are measured between consecutive positive events at a pixel.
    A single writer feeds events; ``snapshot`` gives readers a consistent copy.
    """

    def __init__(self, width: int, height: int, staleness_us: int, ema_alpha: float | None = None):
        self.width = int(width)
        self.height = int(height)
        self.staleness_us = int(staleness_us)
        self.ema_alpha = ema_alpha
        self.last_t = np.full((height, width), -1, dtype=np.int64)
        self.freq = np.zeros((height, width))
        self.deadline = np.full((height, width), -1, dtype=np.int64)
        self.t_latest = -1
        self._lock = threading.Lock()

    def snapshot(self) -> "PixelFrequencyMap":
        with self._lock:
            snap = PixelFrequencyMap.__new__(PixelFrequencyMap)
            snap.__dict__.update(self.__dict__)
            snap.last_t = self.last_t.copy()
            snap.freq = self.freq.copy()
            snap.deadline = self.deadline.copy()
            snap._lock = threading.Lock()
            return snap

    def frequency_at(self, x: int, y: int) -> float:
        return float(self.freq[y, x])

    def update(self, e: Event) -> None:
        """Single-event update (see ``update_frequency``)."""
        if e.t < self.t_latest:
            raise ValueError(f"event at t={e.t} precedes stream time {self.t_latest}")
        if not (0 <= e.x < self.width and 0 <= e.y < self.height):
            raise ValueError(f"event pixel ({e.x}, {e.y}) outside sensor")
        with self._lock:
            self.t_latest = e.t
            if e.p != 1:
                return
            prev = self.last_t[e.y, e.x]
            if prev == e.t:
                return
            if prev >= 0:
                f = 1e6 / (e.t - prev)
                if self.ema_alpha and self.freq[e.y, e.x] > 0:
                    f = self.ema_alpha * f + (1.0 - self.ema_alpha) * self.freq[e.y, e.x]
                self.freq[e.y, e.x] = f
            self.last_t[e.y, e.x] = e.t
            self.deadline[e.y, e.x] = e.t + self.staleness_us

    def ingest(self, events: np.ndarray) -> None:
        """Apply a time-ordered batch; result equals applying ``update`` event by event."""
        ev = as_event_array(events)
        if len(ev) == 0:
            return
        t = ev["t"]
        if t[0] < self.t_latest or np.any(np.diff(t) < 0):
            raise ValueError("event batch is not time-ordered")
        if (ev["x"].min() < 0 or ev["x"].max() >= self.width
                or ev["y"].min() < 0 or ev["y"].max() >= self.height):
            raise ValueError("event pixel outside sensor")
        if self.ema_alpha:
            for e in ev:
                self.update(Event(int(e["t"]), int(e["x"]), int(e["y"]), int(e["p"])))
            return
        with self._lock:
            self._ingest_last_interval(ev)
            self.t_latest = int(t[-1])

    def _ingest_last_interval(self, ev: np.ndarray) -> None:
        pos = ev[ev["p"] == 1]
        if len(pos) == 0:
            return
        lin = pos["y"].astype(np.int64) * self.width + pos["x"]
        t = pos["t"]
        order = np.argsort(lin, kind="stable")
        lin, t = lin[order], t[order]
        flat_last = self.last_t.reshape(-1)
        # zero-interval repeats are dropped, whether against the stored state or in-batch
        first = np.ones(len(lin), dtype=bool)
        first[1:] = lin[1:] != lin[:-1]
        prev_t = np.where(first, flat_last[lin], np.r_[-1, t[:-1]])
        keep = prev_t != t
        lin, t, prev_t = lin[keep], t[keep], prev_t[keep]
        if len(lin) == 0:
            return
        last = np.ones(len(lin), dtype=bool)
        last[:-1] = lin[:-1] != lin[1:]
        # previous timestamp within the kept sequence (stored state for a group's first)
        first = np.ones(len(lin), dtype=bool)
        first[1:] = lin[1:] != lin[:-1]
        prev_seq = np.where(first, flat_last[lin], np.r_[-1, t[:-1]])
        sel_lin, sel_t, sel_prev = lin[last], t[last], prev_seq[last]
        has_prev = sel_prev >= 0
        flat_freq = self.freq.reshape(-1)
        flat_freq[sel_lin[has_prev]] = 1e6 / (sel_t[has_prev] - sel_prev[has_prev])
        flat_last[sel_lin] = sel_t
        self.deadline.reshape(-1)[sel_lin] = sel_t + self.staleness_us


def update_frequency(fmap: PixelFrequencyMap, e: Event) -> PixelFrequencyMap:
    fmap.update(e)
    return fmap


def band_filter(fmap: PixelFrequencyMap, f_lo: float, f_hi: float, now: int) -> PassingPixels:
    """Non-stale pixels whose frequency lies in [f_lo, f_hi]."""
    if not (0 < f_lo < f_hi):
        raise ValueError("band must satisfy 0 < f_lo < f_hi")
    mask = (fmap.freq >= f_lo) & (fmap.freq <= f_hi) & (fmap.deadline >= now)
    ys, xs = np.nonzero(mask)
    return PassingPixels(xs.astype(np.int64), ys.astype(np.int64), fmap.freq[ys, xs])


@dataclass(frozen=True)
class EventCluster:
    pixels: np.ndarray  # (j, 2) integer (x, y)
    centroid: tuple[float, float]
    mean_frequency: float

    @property
    def size(self) -> int:
        return len(self.pixels)


def _components(x, y, f, eps_f):
    n = len(x)
    if n == 0:
        return 0, np.zeros(0, dtype=np.int64)
    w = int(x.max()) + 2
    h = int(y.max()) + 2
    index = np.full((h + 1, w + 1), -1, dtype=np.int64)
    index[y, x] = np.arange(n)
    rows, cols = [], []
    for dx, dy in _HALF_NEIGHBOURS:
        nx, ny = x + dx, y + dy
        ok = nx >= 0
        j = np.full(n, -1, dtype=np.int64)
        j[ok] = index[ny[ok], nx[ok]]
        ok &= j >= 0
        i = np.nonzero(ok)[0]
        j = j[ok]
        similar = np.abs(f[i] - f[j]) <= eps_f
        rows.append(i[similar])
        cols.append(j[similar])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    return connected_components(graph, directed=False)


def cluster_pixels(passing, eps_f: float, min_cluster_px: int = 3) -> list[EventCluster]:
    """Maximal 8-connected groups whose joining pixels differ by at most ``eps_f`` Hz.

    Clusters smaller than ``min_cluster_px`` are dropped; output is sorted by
    the (min y, min x) corner of each pixel set.
    """
    if not isinstance(passing, PassingPixels):
        passing = PassingPixels.from_iterable(passing)
    x = np.asarray(passing.x, dtype=np.int64)
    y = np.asarray(passing.y, dtype=np.int64)
    f = np.asarray(passing.freq, dtype=float)
    n_comp, labels = _components(x, y, f, eps_f)
    if n_comp == 0:
        return []
    order = np.argsort(labels, kind="stable")
    bounds = np.r_[0, np.cumsum(np.bincount(labels, minlength=n_comp))]
    clusters = []
    for c in range(n_comp):
        idx = order[bounds[c]:bounds[c + 1]]
        if len(idx) < min_cluster_px:
            continue
        px = np.stack([x[idx], y[idx]], axis=1)
        px = px[np.lexsort((px[:, 0], px[:, 1]))]
        cx, cy = px.mean(axis=0)
        clusters.append(EventCluster(px, (float(cx), float(cy)), float(f[idx].mean())))
    clusters.sort(key=lambda c: (int(c.pixels[:, 1].min()), int(c.pixels[:, 0].min())))
    return clusters


def cluster_centroids(clusters: list[EventCluster]) -> list[tuple[float, float]]:
    out = []
    for c in clusters:
        if c.size == 0:
            raise ValueError("empty cluster")
        cx, cy = np.asarray(c.pixels, dtype=float).mean(axis=0)
        out.append((float(cx), float(cy)))
    return out


@dataclass
class EventDetectorConfig:
    f_lo: float = 8.0
    f_hi: float = 12.0
    eps_f: float = 2.0
    min_cluster_px: int = 3
    staleness_factor: float = 2.5
    freq_ema_alpha: float | None = None

    @property
    def staleness_us(self) -> int:
        return int(round(self.staleness_factor * 1e6 / self.f_lo))


class EventDetector:
    """Streaming front end: ingest events, then detect clusters at a tick time."""

    def __init__(self, width: int, height: int, cfg: EventDetectorConfig):
        self.cfg = cfg
        self.fmap = PixelFrequencyMap(width, height, cfg.staleness_us, cfg.freq_ema_alpha)

    def ingest(self, events: np.ndarray) -> None:
        self.fmap.ingest(events)

    def detect(self, now: int) -> list[EventCluster]:
        passing = band_filter(self.fmap, self.cfg.f_lo, self.cfg.f_hi, now)
        return cluster_pixels(passing, self.cfg.eps_f, self.cfg.min_cluster_px)
