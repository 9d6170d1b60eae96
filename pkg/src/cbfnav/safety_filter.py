"""Minimal-perturbation input filter: project a desired input onto the set
satisfying one linear barrier constraint inside the input box.

The feasible set is the box clipped by the halfspace g . u + c >= 0, a convex
polygon with at most five vertices. The exact minimizer of ||u_des - u||^2 is
either u_des itself or the nearest point on one of the polygon edges, so the
solver clips the polygon and projects onto each edge: branch-free microseconds
per call, no iterative QP machinery.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .barrier import ConstraintRow
from .vehicle import ControlInput, VehicleParams

STATUS_UNMODIFIED = "unmodified"
STATUS_PROJECTED = "projected"
STATUS_CLAMPED = "clamped"
STATUS_INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class InputBox:
    a_lo: float
    a_hi: float
    w_lo: float
    w_hi: float

    @classmethod
    def from_params(cls, p: VehicleParams) -> "InputBox":
        return cls(-p.a_max, p.a_max, -p.omega_max, p.omega_max)

    def clamp(self, a: float, w: float) -> tuple[float, float]:
        return (min(max(a, self.a_lo), self.a_hi), min(max(w, self.w_lo), self.w_hi))

    def contains(self, a: float, w: float, tol: float = 1e-12) -> bool:
        return self.a_lo - tol <= a <= self.a_hi + tol and self.w_lo - tol <= w <= self.w_hi + tol


@dataclass
class FilterResult:
    u: ControlInput
    status: str

    @property
    def feasible(self) -> bool:
        return self.status != STATUS_INFEASIBLE


def _clip_box_by_halfspace(box: InputBox, ga: float, gw: float, c: float) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of the box polygon against g.u + c >= 0."""
    poly = [
        (box.a_lo, box.w_lo),
        (box.a_hi, box.w_lo),
        (box.a_hi, box.w_hi),
        (box.a_lo, box.w_hi),
    ]
    out: list[tuple[float, float]] = []
    n = len(poly)
    for i in range(n):
        p = poly[i]
        q = poly[(i + 1) % n]
        fp = ga * p[0] + gw * p[1] + c
        fq = ga * q[0] + gw * q[1] + c
        if fp >= 0.0:
            out.append(p)
            if fq < 0.0:
                t = fp / (fp - fq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif fq >= 0.0:
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def filter_input(u_des: ControlInput, row: ConstraintRow, box: InputBox) -> FilterResult:
    """Exact minimizer of ||u_des - u||^2 over {g.u + c >= 0} within the box.

    Infeasible constraint (empty clipped polygon): returns the box point with
    the smallest constraint violation and status "infeasible"; callers treat
    that as an emergency (hold maximum deceleration).
    """
    ga = float(row.g[0])
    gw = float(row.g[1])
    c = float(row.c)
    ua, uw = float(u_des.a), float(u_des.omega)

    if abs(ga) < 1e-12 and abs(gw) < 1e-12:
        ca, cw = box.clamp(ua, uw)
        if c >= 0.0:
            if ca == ua and cw == uw:
                return FilterResult(ControlInput(ua, uw), STATUS_UNMODIFIED)
            return FilterResult(ControlInput(ca, cw), STATUS_CLAMPED)
        return FilterResult(ControlInput(ca, cw), STATUS_INFEASIBLE)

    if box.contains(ua, uw) and ga * ua + gw * uw + c >= 0.0:
        return FilterResult(ControlInput(ua, uw), STATUS_UNMODIFIED)

    poly = _clip_box_by_halfspace(box, ga, gw, c)
    if not poly:
        # maximize g.u over the box to minimize the violation
        best_a = box.a_hi if ga > 0 else box.a_lo
        best_w = box.w_hi if gw > 0 else box.w_lo
        return FilterResult(ControlInput(best_a, best_w), STATUS_INFEASIBLE)

    best = None
    best_d2 = math.inf
    m = len(poly)
    for i in range(m):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % m]
        ex, ey = qx - px, qy - py
        ee = ex * ex + ey * ey
        if ee < 1e-24:
            t = 0.0
        else:
            t = ((ua - px) * ex + (uw - py) * ey) / ee
            t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        cx, cy = px + t * ex, py + t * ey
        d2 = (cx - ua) ** 2 + (cy - uw) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best = (cx, cy)

    scale = max(1.0, abs(ga), abs(gw))
    on_line = abs(ga * best[0] + gw * best[1] + c) <= 1e-9 * scale
    status = STATUS_PROJECTED if on_line else STATUS_CLAMPED
    return FilterResult(ControlInput(best[0], best[1]), status)


def solve_time_benchmark(
    n: int = 100_000, seed: int = 0, csv_path=None, box: InputBox | None = None
) -> dict:
    """Latency distribution of filter_input over random instances.

    Returns percentiles in seconds; optionally persists the full latency
    sample to CSV (one row per instance).
    """
    rng = np.random.default_rng(seed)
    box = box or InputBox(-2.0, 2.0, -2.0, 2.0)
    g = rng.normal(size=(n, 2))
    c = rng.normal(scale=2.0, size=n)
    ud = rng.uniform(-3.0, 3.0, size=(n, 2))
    lat = np.empty(n)
    for i in range(n):
        row = ConstraintRow(g=g[i], c=float(c[i]))
        u = ControlInput(float(ud[i, 0]), float(ud[i, 1]))
        t0 = time.perf_counter()
        filter_input(u, row, box)
        lat[i] = time.perf_counter() - t0
    stats = {
        "n": n,
        "mean": float(lat.mean()),
        "p50": float(np.percentile(lat, 50)),
        "p99": float(np.percentile(lat, 99)),
        "max": float(lat.max()),
    }
    if csv_path is not None:
        with open(csv_path, "w") as f:
            f.write("instance,seconds\n")
            for i, v in enumerate(lat):
                f.write(f"{i},{v:.9e}\n")
    return stats
