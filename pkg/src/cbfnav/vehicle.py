"""Second-order unicycle simulation, lidar-style raycast sensing, and the
monotone known-obstacle map it feeds.

State is (x, y, theta, v); inputs are linear acceleration a and angular rate
omega. Physics integrates with RK4 under zero-order-hold inputs; collision is
adjudicated against the ground-truth distance field while control sees only
the sensed map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .esdf import DistanceField
from .grid import OccupancyGrid
from .world import Box, Disc, WorldSpec


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(theta, 2.0 * math.pi)
    if w <= -math.pi:
        w = math.pi
    return w


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=np.float64)


@dataclass(frozen=True)
class ControlInput:
    a: float  # m/s^2
    omega: float  # rad/s

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.omega], dtype=np.float64)


@dataclass(frozen=True)
class SensorParams:
    fov: float = math.radians(270.0)
    range: float = 2.5
    beam_count: int = 61


@dataclass(frozen=True)
class VehicleParams:
    r_v: float = 0.25  # circumscribing radius
    v_max: float = 2.0
    a_max: float = 2.0
    omega_max: float = 2.0
    d_1: float = 0.4  # barrier speed-sensitivity, needs v_max * d_1 in (0, 1)
    sensor: SensorParams = SensorParams()

    def __post_init__(self):
        if self.r_v <= 0 or self.d_1 <= 0:
            raise ValueError("r_v and d_1 must be positive")
        if not (0.0 < self.v_max * self.d_1 < 1.0):
            raise ValueError(f"v_max * d_1 = {self.v_max * self.d_1} must lie in (0, 1)")

    def saturate(self, u: ControlInput) -> ControlInput:
        return ControlInput(
            float(np.clip(u.a, -self.a_max, self.a_max)),
            float(np.clip(u.omega, -self.omega_max, self.omega_max)),
        )


def _deriv(s: np.ndarray, a: float, omega: float) -> np.ndarray:
    return np.array([s[3] * math.cos(s[2]), s[3] * math.sin(s[2]), omega, a])


def step_dynamics(state: VehicleState, u: ControlInput, dt: float, params: VehicleParams) -> VehicleState:
    """One RK4 step of the unicycle under zero-order-hold input.

    Inputs are saturated before integration; speed is clamped and heading
    wrapped after the step. Non-finite state or input is rejected.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vals = (state.x, state.y, state.theta, state.v, u.a, u.omega)
    if not all(math.isfinite(val) for val in vals):
        raise ValueError(f"non-finite state or input: state={state}, u={u}")
    u = params.saturate(u)
    s = state.as_array()
    k1 = _deriv(s, u.a, u.omega)
    k2 = _deriv(s + 0.5 * dt * k1, u.a, u.omega)
    k3 = _deriv(s + 0.5 * dt * k2, u.a, u.omega)
    k4 = _deriv(s + dt * k3, u.a, u.omega)
    s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return VehicleState(
        float(s[0]),
        float(s[1]),
        wrap_angle(float(s[2])),
        float(np.clip(s[3], -params.v_max, params.v_max)),
    )


def _ray_disc(ox: float, oy: float, dx: np.ndarray, dy: np.ndarray, disc: Disc) -> np.ndarray:
    """First positive hit parameter per ray (inf on miss)."""
    cx = ox - disc.center[0]
    cy = oy - disc.center[1]
    b = cx * dx + cy * dy
    c = cx * cx + cy * cy - disc.radius**2
    disc_q = b * b - c
    t = np.full_like(dx, np.inf)
    ok = disc_q >= 0.0
    sq = np.sqrt(np.where(ok, disc_q, 0.0))
    t1 = -b - sq
    t2 = -b + sq
    # Nearest non-negative root (ray origin inside the disc hits at t2).
    cand = np.where(t1 >= 0.0, t1, t2)
    valid = ok & (cand >= 0.0)
    t[valid] = cand[valid]
    return t


def _ray_box(ox: float, oy: float, dx: np.ndarray, dy: np.ndarray, box: Box) -> np.ndarray:
    hx, hy = box.size[0] / 2.0, box.size[1] / 2.0
    lo_x, hi_x = box.center[0] - hx, box.center[0] + hx
    lo_y, hi_y = box.center[1] - hy, box.center[1] + hy
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (lo_x - ox) / dx
        tx2 = (hi_x - ox) / dx
        ty1 = (lo_y - oy) / dy
        ty2 = (hi_y - oy) / dy
    txmin = np.minimum(tx1, tx2)
    txmax = np.maximum(tx1, tx2)
    tymin = np.minimum(ty1, ty2)
    tymax = np.maximum(ty1, ty2)
    # Parallel rays: ignore the degenerate axis if the origin is inside its slab.
    txmin = np.where(np.isnan(txmin), -np.inf, txmin)
    txmax = np.where(np.isnan(txmax), np.inf, txmax)
    tymin = np.where(np.isnan(tymin), -np.inf, tymin)
    tymax = np.where(np.isnan(tymax), np.inf, tymax)
    tmin = np.maximum(txmin, tymin)
    tmax = np.minimum(txmax, tymax)
    hit = (tmax >= tmin) & (tmax >= 0.0)
    entry = np.where(tmin >= 0.0, tmin, tmax)
    return np.where(hit, entry, np.inf)


def sense(truth: WorldSpec, state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Raycast over the sensor arc; returns hit points, shape (n_hits, 2).

    Beams span the field of view centered on the heading; each beam reports
    its first obstacle intersection within range, misses are dropped. Hit
    points are pushed one grid resolution past the surface along the beam so
    the cell containing each hit is genuinely inside the obstacle (assumes
    obstacle features thicker than two cells).
    """
    sp = params.sensor
    angles = state.theta + np.linspace(-sp.fov / 2.0, sp.fov / 2.0, sp.beam_count)
    dx = np.cos(angles)
    dy = np.sin(angles)
    t = np.full(sp.beam_count, np.inf)
    which = np.full(sp.beam_count, -1)
    for k, ob in enumerate(truth.obstacles):
        if isinstance(ob, Disc):
            tk = _ray_disc(state.x, state.y, dx, dy, ob)
        else:
            tk = _ray_box(state.x, state.y, dx, dy, ob)
        closer = tk < t
        t[closer] = tk[closer]
        which[closer] = k
    hit = np.nonzero(t <= sp.range)[0]
    depth = truth.resolution
    pts = np.empty((hit.size, 2))
    for row, i in enumerate(hit):
        px = state.x + t[i] * dx[i]
        py = state.y + t[i] * dy[i]
        pts[row] = truth.obstacles[which[i]].point_inside(px, py, depth)
    return pts


def integrate_known_map(known: OccupancyGrid, hits: np.ndarray) -> tuple[OccupancyGrid, int]:
    """Mark the cells containing hit points occupied; monotone by construction.

    Returns the updated grid and the number of newly occupied cells (a
    nonzero count signals the distance field must be recomputed).
    """
    if hits.size == 0:
        return known, 0
    ix = np.floor((hits[:, 0] - known.origin[0]) / known.resolution + 0.5).astype(int)
    iy = np.floor((hits[:, 1] - known.origin[1]) / known.resolution + 0.5).astype(int)
    ok = (ix >= 0) & (ix < known.width) & (iy >= 0) & (iy < known.height)
    ix, iy = ix[ok], iy[ok]
    fresh = ~known.occupied[iy, ix]
    if not fresh.any():
        return known, 0
    occ = known.occupied.copy()
    occ[iy[fresh], ix[fresh]] = True
    new_count = int(occ.sum() - known.occupied.sum())
    return OccupancyGrid(known.resolution, known.origin, occ), new_count


def check_collision(state: VehicleState, truth_field: DistanceField, r_v: float) -> bool:
    """True iff the ground-truth clearance at the center is <= the
    circumscribing radius."""
    return float(truth_field.value_at(state.x, state.y)) <= r_v
