from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest

from cbfnav.esdf import FieldSample
from cbfnav.grid import OccupancyGrid
from cbfnav.world import Box, WorldSpec, rasterize


@dataclass
class AnalyticField:
    """Field protocol backed by exact callables, for hand-checkable oracles.

    d_fn(x, y) -> value; grad_fn -> (gx, gy); hess_fn -> (hxx, hxy, hyy).
    """

    d_fn: callable
    grad_fn: callable
    hess_fn: callable

    def query_batch(self, x, y) -> FieldSample:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        d = self.d_fn(x, y)
        gx, gy = self.grad_fn(x, y)
        hxx, hxy, hyy = self.hess_fn(x, y)
        z = np.zeros_like(x)
        return FieldSample(d, gx + z, gy + z, hxx + z, hxy + z, hyy + z, np.zeros_like(x, dtype=bool))

    def query(self, x, y) -> FieldSample:
        s = self.query_batch(np.array([x]), np.array([y]))
        return FieldSample(
            float(s.d[0]), float(s.gx[0]), float(s.gy[0]),
            float(s.hxx[0]), float(s.hxy[0]), float(s.hyy[0]), False,
        )


@pytest.fixture
def wall_field():
    """Analytic field with d(x, y) = x: a flat wall along the y-axis."""
    return AnalyticField(
        d_fn=lambda x, y: x * 1.0,
        grad_fn=lambda x, y: (np.ones_like(x), np.zeros_like(x)),
        hess_fn=lambda x, y: (np.zeros_like(x),) * 3,
    )


def smooth_random_field(rng: np.random.Generator) -> AnalyticField:
    """Random smooth positive field: affine + mild sinusoidal ripple, with
    exact analytic gradient and Hessian."""
    c0 = rng.uniform(1.5, 3.0)
    a1, a2 = rng.uniform(-0.5, 0.5, size=2)
    amp = rng.uniform(0.05, 0.2)
    kx, ky = rng.uniform(0.3, 1.2, size=2)
    px, py = rng.uniform(0, 2 * math.pi, size=2)

    def d_fn(x, y):
        return c0 + a1 * x + a2 * y + amp * np.sin(kx * x + px) * np.cos(ky * y + py)

    def grad_fn(x, y):
        gx = a1 + amp * kx * np.cos(kx * x + px) * np.cos(ky * y + py)
        gy = a2 - amp * ky * np.sin(kx * x + px) * np.sin(ky * y + py)
        return gx, gy

    def hess_fn(x, y):
        hxx = -amp * kx * kx * np.sin(kx * x + px) * np.cos(ky * y + py)
        hxy = -amp * kx * ky * np.cos(kx * x + px) * np.sin(ky * y + py)
        hyy = -amp * ky * ky * np.sin(kx * x + px) * np.cos(ky * y + py)
        return hxx, hxy, hyy

    return AnalyticField(d_fn, grad_fn, hess_fn)


def wall_world(resolution: float = 0.05) -> WorldSpec:
    """World whose only obstacle fills the half-plane x <= 0."""
    return WorldSpec(
        seed=0,
        bounds=(-1.0, -2.0, 3.0, 2.0),
        resolution=resolution,
        obstacles=(Box(center=(-0.5, 0.0), size=(1.0, 4.0)),),
        start=(1.0, 0.0, 0.0),
        goal=(2.5, 0.0),
    )


def random_grid(rng: np.random.Generator, h: int = 50, w: int = 50, p: float = 0.08) -> OccupancyGrid:
    occ = rng.uniform(size=(h, w)) < p
    return OccupancyGrid(0.05, (0.025, 0.025), occ)


def brute_force_signed_distance(grid: OccupancyGrid) -> np.ndarray:
    """O(n^2) oracle: per cell, exact min center-to-center distance to the
    opposite occupancy class, signed and capped at the grid diagonal."""
    res = grid.resolution
    h, w = grid.occupied.shape
    diag = math.hypot(w * res, h * res)
    cells = np.argwhere(np.ones((h, w), dtype=bool)).astype(np.float64)  # (h*w, 2) as (iy, ix)

    def min_dist_to(points: np.ndarray) -> np.ndarray:
        if points.size == 0:
            return np.full(h * w, diag)
        d2 = ((cells[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        return np.minimum(np.sqrt(d2.min(axis=1)) * res, diag)

    d_occ = min_dist_to(np.argwhere(grid.occupied).astype(np.float64)).reshape(h, w)
    d_free = min_dist_to(np.argwhere(~grid.occupied).astype(np.float64)).reshape(h, w)
    return np.where(grid.occupied, -d_free, d_occ)
