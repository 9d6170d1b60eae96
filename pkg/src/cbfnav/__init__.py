"""Safety-filtered 2D navigation: cluttered-world simulation, barrier-based
input filtering, tracking controllers, and an actor-critic adapter that tunes
the barrier constraint at runtime."""

from .esdf import DistanceField, compute_esdf, heading_to_obstacle
from .grid import OccupancyGrid
from .vehicle import ControlInput, VehicleParams, VehicleState
from .world import (
    Box,
    Disc,
    WorldGenParams,
    WorldSpec,
    generate_corridor_world,
    generate_world,
    rasterize,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ControlInput",
    "Disc",
    "DistanceField",
    "OccupancyGrid",
    "VehicleParams",
    "VehicleState",
    "WorldGenParams",
    "WorldSpec",
    "compute_esdf",
    "generate_corridor_world",
    "generate_world",
    "heading_to_obstacle",
    "rasterize",
]
