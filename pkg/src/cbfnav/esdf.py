"""Exact Euclidean signed distance fields over occupancy grids.

The transform is the separable two-phase squared-distance algorithm: phase one
scans each column for the nearest occupied cell along that column, phase two
takes per-row lower envelopes of the resulting parabolas. Distances are exact
(to the nearest occupied *cell center*), which is what the brute-force oracle
in the tests checks against.

Sign convention: d > 0 in free space, d < 0 inside obstacles, computed as
(distance to nearest occupied cell) - (distance to nearest free cell).
Values are capped at the grid diagonal so an empty grid yields a finite field.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import OccupancyGrid

_MAGIC = b"ESDF"

# Rows per block in the phase-two envelope sweep; bounds peak memory at
# roughly _BLOCK_CELLS doubles.
_BLOCK_CELLS = 4_000_000


@dataclass
class FieldSample:
    """Interpolated field values at query points.

    d is bilinear; grad and hess are central finite differences of the
    interpolated surface with step = one cell. All arrays share the query
    shape; scalars for single-point queries.
    """

    d: np.ndarray | float
    gx: np.ndarray | float
    gy: np.ndarray | float
    hxx: np.ndarray | float
    hxy: np.ndarray | float
    hyy: np.ndarray | float
    out_of_bounds: np.ndarray | bool

    @property
    def grad_norm(self):
        return np.hypot(self.gx, self.gy)


def _snap(c: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Snap continuous cell coordinates to exact integers when within eps,
    so cell-center queries reproduce stored values bit-exactly despite
    floating-point noise in the world-to-grid transform."""
    r = np.round(c)
    return np.where(np.abs(c - r) < eps, r, c)


def _nearest_true_sq_cells(mask: np.ndarray) -> np.ndarray:
    """Exact squared distance (cell units) from every cell to the nearest True cell."""
    h, w = mask.shape
    sentinel = float(h + w)

    col = np.full((h, w), sentinel, dtype=np.float64)
    col[mask] = 0.0
    for i in range(1, h):
        np.minimum(col[i], col[i - 1] + 1.0, out=col[i])
    for i in range(h - 2, -1, -1):
        np.minimum(col[i], col[i + 1] + 1.0, out=col[i])
    g = col * col

    j = np.arange(w, dtype=np.float64)
    shift_sq = (j[None, :] - j[:, None]) ** 2  # [k, j]
    out = np.empty((h, w), dtype=np.float64)
    block = max(1, _BLOCK_CELLS // max(1, w * w))
    for r0 in range(0, h, block):
        blk = g[r0 : r0 + block]
        out[r0 : r0 + block] = (blk[:, :, None] + shift_sq[None, :, :]).min(axis=1)
    return out


@dataclass(frozen=True)
class DistanceField:
    """Signed distance raster with interpolated value/gradient/Hessian queries.

    Immutable; safe to share across threads and to keep as a snapshot while a
    newer field is being built.
    """

    resolution: float
    origin: tuple[float, float]
    d: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.d, dtype=np.float64)
        object.__setattr__(self, "d", arr)
        self.d.setflags(write=False)

    @property
    def height(self) -> int:
        return self.d.shape[0]

    @property
    def width(self) -> int:
        return self.d.shape[1]

    def _interp(self, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at continuous cell coordinates."""
        ix = np.clip(np.floor(cx), 0, self.width - 2).astype(np.intp)
        iy = np.clip(np.floor(cy), 0, self.height - 2).astype(np.intp)
        fx = cx - ix
        fy = cy - iy
        d = self.d
        return (
            d[iy, ix] * (1.0 - fx) * (1.0 - fy)
            + d[iy, ix + 1] * fx * (1.0 - fy)
            + d[iy + 1, ix] * (1.0 - fx) * fy
            + d[iy + 1, ix + 1] * fx * fy
        )

    # 9-point stencil offsets: center, +-x, +-y, four corners
    _STENCIL = np.array(
        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        dtype=np.float64,
    )

    def query_batch(self, x: np.ndarray, y: np.ndarray) -> FieldSample:
        """Vectorized value + gradient + Hessian query at world points.

        Points outside the finite-difference-safe interior (one cell inside the
        interpolation border) are clamped to it and flagged out_of_bounds. The
        whole stencil goes through one fused interpolation pass.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cx = _snap((x - self.origin[0]) / self.resolution)
        cy = _snap((y - self.origin[1]) / self.resolution)
        lox, hix = 1.0, float(self.width - 2)
        loy, hiy = 1.0, float(self.height - 2)
        oob = (cx < lox) | (cx > hix) | (cy < loy) | (cy > hiy)
        cx = np.clip(cx, lox, hix)
        cy = np.clip(cy, loy, hiy)

        sx = cx[None, ...] + self._STENCIL[:, 0].reshape((9,) + (1,) * cx.ndim)
        sy = cy[None, ...] + self._STENCIL[:, 1].reshape((9,) + (1,) * cy.ndim)
        vals = self._interp(sx, sy)
        d0, dpx, dmx, dpy, dmy, dpp, dpm, dmp, dmm = vals
        s = self.resolution
        gx = (dpx - dmx) / (2.0 * s)
        gy = (dpy - dmy) / (2.0 * s)
        hxx = (dpx - 2.0 * d0 + dmx) / (s * s)
        hyy = (dpy - 2.0 * d0 + dmy) / (s * s)
        hxy = (dpp - dpm - dmp + dmm) / (4.0 * s * s)
        return FieldSample(d0, gx, gy, hxx, hxy, hyy, oob)

    def query(self, x: float, y: float) -> FieldSample:
        """Single-point query; same code path as query_batch."""
        s = self.query_batch(np.array([x]), np.array([y]))
        return FieldSample(
            float(s.d[0]),
            float(s.gx[0]),
            float(s.gy[0]),
            float(s.hxx[0]),
            float(s.hxy[0]),
            float(s.hyy[0]),
            bool(s.out_of_bounds[0]),
        )

    def value_at(self, x, y) -> np.ndarray:
        """Interpolated distance only (no derivatives); cheap batched form."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cx = np.clip(_snap((x - self.origin[0]) / self.resolution), 0.0, self.width - 1.0)
        cy = np.clip(_snap((y - self.origin[1]) / self.resolution), 0.0, self.height - 1.0)
        return self._interp(cx, cy)

    def save(self, path) -> None:
        """Binary cache: little-endian header (magic, u32 w, u32 h, f64 res,
        f64 origin_x, f64 origin_y) followed by row-major f64 distances."""
        header = _MAGIC + struct.pack(
            "<IIddd", self.width, self.height, self.resolution, self.origin[0], self.origin[1]
        )
        with open(path, "wb") as f:
            f.write(header)
            f.write(self.d.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "DistanceField":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _MAGIC:
                raise ValueError(f"bad field cache magic {magic!r}")
            w, h, res, ox, oy = struct.unpack("<IIddd", f.read(8 + 24))
            data = np.frombuffer(f.read(w * h * 8), dtype="<f8").reshape(h, w)
        return cls(res, (ox, oy), data)


def compute_esdf(grid: OccupancyGrid) -> DistanceField:
    """Exact signed Euclidean distance field of an occupancy grid.

    Free cells get the exact distance to the nearest occupied cell center;
    occupied cells get minus the distance to the nearest free cell center.
    Magnitudes are capped at the grid diagonal.
    """
    occ = grid.occupied
    res = grid.resolution
    diag = float(np.hypot(grid.width * res, grid.height * res))
    if occ.any():
        d_occ = np.sqrt(_nearest_true_sq_cells(occ)) * res
    else:
        d_occ = np.full(occ.shape, diag, dtype=np.float64)
    if (~occ).any():
        d_free = np.sqrt(_nearest_true_sq_cells(~occ)) * res
    else:
        d_free = np.full(occ.shape, diag, dtype=np.float64)
    d = np.clip(d_occ - d_free, -diag, diag)
    return DistanceField(res, grid.origin, d)


def heading_to_obstacle(
    field: DistanceField, x: float, y: float, prev: float | None = None
) -> tuple[float, bool]:
    """Bearing of the distance gradient, atan2(dd/dy, dd/dx), in (-pi, pi].

    The gradient points away from the nearest obstacle. On a degenerate ridge
    (gradient magnitude below 1e-9, equidistant between obstacles) the previous
    heading is carried if given, else 0, and the degenerate flag is set.
    """
    s = field.query(x, y)
    if np.hypot(s.gx, s.gy) < 1e-9:
        return (prev if prev is not None else 0.0), True
    gamma = float(np.arctan2(s.gy, s.gx))
    if gamma <= -np.pi:
        gamma = np.pi
    return gamma, False
