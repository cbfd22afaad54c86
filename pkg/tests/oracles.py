"""Slow, obviously-correct reference implementations used as test oracles."""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def flood_fill_components(mask: np.ndarray) -> list[frozenset[tuple[int, int]]]:
    """8-connected components of a boolean (H, W) mask as sets of (x, y)."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or seen[y0, x0]:
                continue
            comp = set()
            queue = deque([(x0, y0)])
            seen[y0, x0] = True
            while queue:
                x, y = queue.popleft()
                comp.add((x, y))
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        nx, ny = x + dx, y + dy
                        if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((nx, ny))
            comps.append(frozenset(comp))
    return comps


def brute_force_assignment(cost: np.ndarray) -> tuple[float, list[tuple[int, ...]]]:
    """Minimum total cost over all injections rows -> columns, and every injection attaining it within 1e-12."""
    n, m = cost.shape
    best, arg = np.inf, []
    for cols in itertools.permutations(range(m), n):
        c = float(sum(cost[i, j] for i, j in enumerate(cols)))
        if c < best - 1e-12:
            best, arg = c, [cols]
        elif abs(c - best) <= 1e-12:
            arg.append(cols)
    return best, arg


def sorted_injection_costs(cost: np.ndarray) -> list[float]:
    n, m = cost.shape
    return sorted(float(sum(cost[i, j] for i, j in enumerate(cols))) for cols in itertools.permutations(range(m), n))


def central_difference(f, u: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(u)
    for idx in np.ndindex(u.shape):
        up, dn = u.copy(), u.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (f(up) - f(dn)) / (2 * h)
    return g


def naive_frequencies(events, width: int, height: int):
    """Per-pixel last-interval frequency over positive events, by direct replay."""
    last, freq = {}, {}
    for t, x, y, p in events:
        if p != 1:
            continue
        prev = last.get((x, y))
        if prev == t:
            continue
        if prev is not None:
            freq[(x, y)] = 1e6 / (t - prev)
        last[(x, y)] = t
    return last, freq
