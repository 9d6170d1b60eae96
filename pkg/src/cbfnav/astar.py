"""Grid A* over boolean traversability masks (8-connected, octile heuristic)."""

from __future__ import annotations

import heapq

import numpy as np

_SQRT2 = float(np.sqrt(2.0))
_MOVES = (
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, _SQRT2),
    (1, -1, _SQRT2),
    (-1, 1, _SQRT2),
    (-1, -1, _SQRT2),
)


def _octile(ax: int, ay: int, bx: int, by: int) -> float:
    dx = abs(ax - bx)
    dy = abs(ay - by)
    return (dx + dy) + (_SQRT2 - 2.0) * min(dx, dy)


def nearest_traversable(
    traversable: np.ndarray, ix: int, iy: int, max_radius: int = 8
) -> tuple[int, int] | None:
    """Closest traversable cell to (ix, iy) within a square search radius."""
    h, w = traversable.shape
    ix = int(np.clip(ix, 0, w - 1))
    iy = int(np.clip(iy, 0, h - 1))
    if traversable[iy, ix]:
        return ix, iy
    best = None
    best_d2 = None
    for r in range(1, max_radius + 1):
        x0, x1 = max(0, ix - r), min(w - 1, ix + r)
        y0, y1 = max(0, iy - r), min(h - 1, iy + r)
        sub = traversable[y0 : y1 + 1, x0 : x1 + 1]
        ys, xs = np.nonzero(sub)
        if xs.size:
            d2 = (xs + x0 - ix) ** 2 + (ys + y0 - iy) ** 2
            k = int(np.argmin(d2))
            if best is None or d2[k] < best_d2:
                best = (int(xs[k] + x0), int(ys[k] + y0))
                best_d2 = int(d2[k])
            return best
    return best


def find_path(
    traversable: np.ndarray,
    start: tuple[int, int],
    goal: tuple[int, int],
) -> list[tuple[int, int]] | None:
    """Shortest 8-connected path of (ix, iy) cells, or None if unreachable.

    Start and goal must be traversable; diagonal moves are allowed only when
    both adjacent orthogonal cells are traversable (no corner cutting).
    """
    h, w = traversable.shape
    sx, sy = start
    gx, gy = goal
    if not (0 <= sx < w and 0 <= sy < h and 0 <= gx < w and 0 <= gy < h):
        return None
    if not (traversable[sy, sx] and traversable[gy, gx]):
        return None
    if start == goal:
        return [start]

    g_cost = np.full((h, w), np.inf)
    g_cost[sy, sx] = 0.0
    parent = {}
    open_heap = [(_octile(sx, sy, gx, gy), 0.0, sx, sy)]
    closed = np.zeros((h, w), dtype=bool)

    while open_heap:
        _, g_here, cx, cy = heapq.heappop(open_heap)
        if closed[cy, cx]:
            continue
        closed[cy, cx] = True
        if (cx, cy) == (gx, gy):
            path = [(cx, cy)]
            while (cx, cy) != (sx, sy):
                cx, cy = parent[(cx, cy)]
                path.append((cx, cy))
            path.reverse()
            return path
        for dx, dy, step in _MOVES:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < w and 0 <= ny < h) or not traversable[ny, nx]:
                continue
            if dx != 0 and dy != 0:
                if not (traversable[cy, nx] and traversable[ny, cx]):
                    continue
            ng = g_here + step
            if ng < g_cost[ny, nx]:
                g_cost[ny, nx] = ng
                parent[(nx, ny)] = (cx, cy)
                heapq.heappush(open_heap, (ng + _octile(nx, ny, gx, gy), ng, nx, ny))
    return None


def path_exists(traversable: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> bool:
    return find_path(traversable, start, goal) is not None
