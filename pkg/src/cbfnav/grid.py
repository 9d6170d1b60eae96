"""Occupancy grid primitives shared by the world model, sensing, and planning.

Coordinate convention:
- World coordinates (x, y) in meters, x right, y up.
- Grid arrays are indexed [iy, ix] (row-major, row = y).
- `origin` is the world position of the *center* of cell (ix=0, iy=0);
  cell (ix, iy) is centered at origin + (ix, iy) * resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean occupancy raster. Immutable once constructed."""

    resolution: float
    origin: tuple[float, float]
    occupied: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        occ = np.asarray(self.occupied, dtype=bool)
        if occ.ndim != 2 or occ.size == 0:
            raise ValueError(f"occupancy array must be non-empty 2D, got shape {occ.shape}")
        object.__setattr__(self, "occupied", occ)
        self.occupied.setflags(write=False)

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.origin[0] + ix * self.resolution, self.origin[1] + iy * self.resolution)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        """Cell containing (x, y). Not clamped; may be out of range."""
        ix = int(np.floor((x - self.origin[0]) / self.resolution + 0.5))
        iy = int(np.floor((y - self.origin[1]) / self.resolution + 0.5))
        return ix, iy

    def in_range(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def with_cells_occupied(self, cells: list[tuple[int, int]]) -> "OccupancyGrid":
        """New grid with the given (ix, iy) cells additionally marked occupied."""
        occ = self.occupied.copy()
        for ix, iy in cells:
            if self.in_range(ix, iy):
                occ[iy, ix] = True
        return OccupancyGrid(self.resolution, self.origin, occ)


def empty_like(grid: OccupancyGrid) -> OccupancyGrid:
    """All-free grid with the same geometry."""
    return OccupancyGrid(grid.resolution, grid.origin, np.zeros_like(grid.occupied))
