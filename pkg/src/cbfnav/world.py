"""Cluttered benchmark worlds: obstacle primitives, seeded generation,
rasterization, and the world JSON format.

Generated worlds are guaranteed feasible: start and goal keep a clearance
margin from every obstacle and a grid path between them exists on the
inflated occupancy grid (checked with A* at generation time).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import astar
from .esdf import compute_esdf
from .grid import OccupancyGrid


class WorldGenerationError(RuntimeError):
    """Raised when no feasible obstacle layout is found within the retry budget."""


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 <= self.radius**2

    def clearance(self, x: float, y: float) -> float:
        """Distance from (x, y) to the obstacle surface (negative inside)."""
        return float(np.hypot(x - self.center[0], y - self.center[1]) - self.radius)

    def point_inside(self, x: float, y: float, depth: float) -> tuple[float, float]:
        """Nearest point at least `depth` inside the surface (normal direction)."""
        depth = min(depth, self.radius)
        dx = x - self.center[0]
        dy = y - self.center[1]
        n = float(np.hypot(dx, dy))
        if n < 1e-12:
            return self.center
        s = (self.radius - depth) / n
        return (self.center[0] + dx * s, self.center[1] + dy * s)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and full side lengths."""

    center: tuple[float, float]
    size: tuple[float, float]

    def contains(self, x, y):
        hx, hy = self.size[0] / 2.0, self.size[1] / 2.0
        return (np.abs(x - self.center[0]) <= hx) & (np.abs(y - self.center[1]) <= hy)

    def clearance(self, x: float, y: float) -> float:
        hx, hy = self.size[0] / 2.0, self.size[1] / 2.0
        qx = abs(x - self.center[0]) - hx
        qy = abs(y - self.center[1]) - hy
        outside = float(np.hypot(max(qx, 0.0), max(qy, 0.0)))
        inside = min(max(qx, qy), 0.0)
        return outside + inside

    def point_inside(self, x: float, y: float, depth: float) -> tuple[float, float]:
        """Nearest point at least `depth` inside the surface: clamp into the
        box shrunk by depth on every side."""
        hx = max(self.size[0] / 2.0 - depth, 0.0)
        hy = max(self.size[1] / 2.0 - depth, 0.0)
        px = float(np.clip(x, self.center[0] - hx, self.center[0] + hx))
        py = float(np.clip(y, self.center[1] - hy, self.center[1] + hy))
        return (px, py)


Obstacle = Disc | Box


@dataclass(frozen=True)
class WorldSpec:
    seed: int
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    resolution: float
    obstacles: tuple[Obstacle, ...]
    start: tuple[float, float, float]  # x, y, theta
    goal: tuple[float, float]

    def clearance(self, x: float, y: float) -> float:
        """Exact distance to the nearest obstacle surface (inf if no obstacles)."""
        if not self.obstacles:
            return float("inf")
        return min(ob.clearance(x, y) for ob in self.obstacles)

    def to_json(self) -> str:
        obs = []
        for ob in self.obstacles:
            if isinstance(ob, Disc):
                obs.append({"type": "disc", "center": list(ob.center), "radius": ob.radius})
            else:
                obs.append({"type": "box", "center": list(ob.center), "size": list(ob.size)})
        doc = {
            "seed": self.seed,
            "bounds": list(self.bounds),
            "resolution": self.resolution,
            "obstacles": obs,
            "start": list(self.start),
            "goal": list(self.goal),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WorldSpec":
        doc = json.loads(text)
        obstacles = []
        for ob in doc["obstacles"]:
            if ob["type"] == "disc":
                obstacles.append(Disc(tuple(ob["center"]), float(ob["radius"])))
            elif ob["type"] == "box":
                obstacles.append(Box(tuple(ob["center"]), tuple(ob["size"])))
            else:
                raise ValueError(f"unknown obstacle type {ob['type']!r}")
        return cls(
            seed=int(doc["seed"]),
            bounds=tuple(doc["bounds"]),
            resolution=float(doc["resolution"]),
            obstacles=tuple(obstacles),
            start=tuple(doc["start"]),
            goal=tuple(doc["goal"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def load(cls, path) -> "WorldSpec":
        with open(path) as f:
            return cls.from_json(f.read())


def rasterize(spec: WorldSpec) -> OccupancyGrid:
    """Occupancy grid over the world bounds: a cell is occupied iff its
    center lies inside some obstacle."""
    if spec.resolution <= 0:
        raise ValueError("resolution must be positive")
    xmin, ymin, xmax, ymax = spec.bounds
    res = spec.resolution
    width = max(1, int(round((xmax - xmin) / res)))
    height = max(1, int(round((ymax - ymin) / res)))
    origin = (xmin + res / 2.0, ymin + res / 2.0)
    xs = origin[0] + np.arange(width) * res
    ys = origin[1] + np.arange(height) * res
    gx, gy = np.meshgrid(xs, ys)
    occ = np.zeros((height, width), dtype=bool)
    for ob in spec.obstacles:
        occ |= ob.contains(gx, gy)
    return OccupancyGrid(res, origin, occ)


@dataclass(frozen=True)
class WorldGenParams:
    """Knobs for seeded clutter generation (all lengths in meters)."""

    bounds: tuple[float, float, float, float] = (0.0, 0.0, 6.0, 6.0)
    resolution: float = 0.05
    density: float = 0.5  # obstacles per square meter
    disc_radius: tuple[float, float] = (0.12, 0.35)
    box_size: tuple[float, float] = (0.25, 0.7)
    disc_fraction: float = 0.6
    start: tuple[float, float, float] = (0.8, 0.8, 0.785398163397448)
    goal: tuple[float, float] = (5.2, 5.2)
    robot_radius: float = 0.25
    keepout: float = 0.55  # clearance kept around start and goal
    inflation_margin: float = 0.1  # extra inflation for the feasibility check
    max_retries: int = 60

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if self.density < 0 or self.resolution <= 0:
            raise ValueError("density and resolution must be non-negative / positive")
        if xmax - xmin <= 4 * self.robot_radius or ymax - ymin <= 4 * self.robot_radius:
            raise ValueError("bounds too small relative to robot radius")


def _feasible(spec: WorldSpec, params: WorldGenParams) -> bool:
    """A* reachability start -> goal on the grid inflated by robot radius + margin."""
    grid = rasterize(spec)
    f = compute_esdf(grid)
    traversable = f.d > (params.robot_radius + params.inflation_margin)
    s = grid.world_to_cell(spec.start[0], spec.start[1])
    g = grid.world_to_cell(spec.goal[0], spec.goal[1])
    if not (grid.in_range(*s) and grid.in_range(*g)):
        return False
    if not (traversable[s[1], s[0]] and traversable[g[1], g[0]]):
        return False
    return astar.path_exists(traversable, s, g)


def generate_world(seed: int, params: WorldGenParams | None = None) -> WorldSpec:
    """Seeded cluttered world with a guaranteed-feasible start-to-goal corridor.

    Deterministic for fixed (seed, params). Obstacle layouts are rejection
    sampled until the A* feasibility check passes; raises WorldGenerationError
    after max_retries (a sign the density/size parameters are too aggressive).
    """
    params = params or WorldGenParams()
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = params.bounds
    area = (xmax - xmin) * (ymax - ymin)
    count = int(round(params.density * area))
    sx, sy, _ = params.start
    gx_, gy_ = params.goal

    for _ in range(params.max_retries):
        obstacles: list[Obstacle] = []
        for _ in range(count):
            cx = rng.uniform(xmin, xmax)
            cy = rng.uniform(ymin, ymax)
            if rng.uniform() < params.disc_fraction:
                r = rng.uniform(*params.disc_radius)
                ob: Obstacle = Disc((cx, cy), r)
            else:
                w = rng.uniform(*params.box_size)
                h = rng.uniform(*params.box_size)
                ob = Box((cx, cy), (w, h))
            if ob.clearance(sx, sy) < params.keepout or ob.clearance(gx_, gy_) < params.keepout:
                continue
            obstacles.append(ob)
        spec = WorldSpec(
            seed=seed,
            bounds=params.bounds,
            resolution=params.resolution,
            obstacles=tuple(obstacles),
            start=params.start,
            goal=params.goal,
        )
        if count == 0 or _feasible(spec, params):
            return spec
    raise WorldGenerationError(
        f"no feasible world after {params.max_retries} retries (seed={seed}, density={params.density})"
    )


def generate_corridor_world(
    seed: int,
    width_range: tuple[float, float] = (1.2, 1.7),
    neck_range: tuple[float, float] = (0.9, 1.2),
    length: float = 7.0,
    resolution: float = 0.05,
    wall_thickness: float = 0.3,
) -> WorldSpec:
    """Straight walled channel with a narrowed neck partway along.

    The side walls span the full world height, so the channel is the only
    route from the bottom start to the top goal. Neck position and widths are
    seeded; the neck always stays wide enough for the inflated robot.
    """
    rng = np.random.default_rng(seed)
    w_main = float(rng.uniform(*width_range))
    w_neck = float(rng.uniform(*neck_range))
    neck_lo = float(rng.uniform(2.2, length - 3.0))
    neck_hi = neck_lo + float(rng.uniform(0.8, 1.4))
    cx = 2.0
    t = wall_thickness
    bounds = (0.0, 0.0, 4.0, length)

    obstacles: list[Obstacle] = [
        Box((cx - w_main / 2.0 - t / 2.0, length / 2.0), (t, length)),
        Box((cx + w_main / 2.0 + t / 2.0, length / 2.0), (t, length)),
    ]
    bump = (w_main - w_neck) / 2.0
    if bump > resolution:
        yc = (neck_lo + neck_hi) / 2.0
        h = neck_hi - neck_lo
        obstacles.append(Box((cx - w_main / 2.0 + bump / 2.0, yc), (bump, h)))
        obstacles.append(Box((cx + w_main / 2.0 - bump / 2.0, yc), (bump, h)))
    start = (cx, 0.7, np.pi / 2.0)
    goal = (cx, length - 0.7)
    return WorldSpec(
        seed=seed,
        bounds=bounds,
        resolution=resolution,
        obstacles=tuple(obstacles),
        start=start,
        goal=goal,
    )
