"""Distance-based barrier function for the unicycle and its Lie derivatives.

The barrier combines clearance with heading/speed sensitivity:

    h = (d - r_v) * exp(grad_d . e_theta - v * d_1)

where d is the signed obstacle distance at (x, y), e_theta the unit heading,
and d_1 scales the speed discount (v * d_1 must stay inside (0, 1) at top
speed). h > 0 exactly where the clearance exceeds the circumscribing radius;
the exponential shrinks h when driving fast toward an obstacle.

With state (x, y, theta, v), drift (v cos, v sin, 0, 0) and inputs u = [a, w]
entering through (dv, dtheta), hdot = Lf_h + Lg_h . u with the chain rule:

    dh/dxy   = E * grad + (d - r_v) * E * (H . e_theta)
    dh/dtheta= (d - r_v) * E * (grad . e_theta_perp)
    dh/dv    = -d_1 * (d - r_v) * E
    Lf_h     = v cos(theta) dh/dx + v sin(theta) dh/dy
    Lg_h     = [dh/dv, dh/dtheta]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vehicle import VehicleParams, VehicleState

# Hessian entries are clamped to +-1/resolution: the grid Hessian is
# distributional at obstacle corners and would otherwise spike.
_EXP_CLIP = 30.0


@dataclass
class BarrierEval:
    h: float
    Lf_h: float
    Lg_h: np.ndarray  # (2,) coefficients of [a, omega]
    d: float
    grad: np.ndarray  # (2,) field gradient used
    out_of_bounds: bool = False


@dataclass
class ConstraintRow:
    """Linear-in-input constraint g . u + c >= 0."""

    g: np.ndarray  # (2,)
    c: float

    @property
    def infeasible_for_all_u(self) -> bool:
        return float(np.abs(self.g).max()) < 1e-12 and self.c < 0.0


def eval_h_batch(states: np.ndarray, field, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Barrier values for states (n, 4); returns (h, out_of_bounds)."""
    s = field.query_batch(states[:, 0], states[:, 1])
    e = np.cos(states[:, 2]) * s.gx + np.sin(states[:, 2]) * s.gy - states[:, 3] * params.d_1
    E = np.exp(np.clip(e, -_EXP_CLIP, _EXP_CLIP))
    return (s.d - params.r_v) * E, np.asarray(s.out_of_bounds, dtype=bool)


def eval_h(state: VehicleState, field, params: VehicleParams) -> float:
    h, _ = eval_h_batch(state.as_array()[None, :], field, params)
    return float(h[0])


def eval_lie_batch(states: np.ndarray, field, params: VehicleParams) -> dict:
    """Barrier value plus Lie derivatives for states (n, 4).

    Returns arrays keyed h, Lf, Lg_a, Lg_w, d, gx, gy, oob. The field Hessian
    is clamped to +-1/resolution when the field carries a grid resolution.
    """
    s = field.query_batch(states[:, 0], states[:, 1])
    theta = states[:, 2]
    v = states[:, 3]
    ct, st = np.cos(theta), np.sin(theta)
    hxx, hxy, hyy = s.hxx, s.hxy, s.hyy
    res = getattr(field, "resolution", None)
    if res is not None:
        lim = 1.0 / res
        hxx = np.clip(hxx, -lim, lim)
        hxy = np.clip(hxy, -lim, lim)
        hyy = np.clip(hyy, -lim, lim)

    margin = s.d - params.r_v
    expo = s.gx * ct + s.gy * st - v * params.d_1
    E = np.exp(np.clip(expo, -_EXP_CLIP, _EXP_CLIP))
    h = margin * E

    dh_dx = E * s.gx + margin * E * (hxx * ct + hxy * st)
    dh_dy = E * s.gy + margin * E * (hxy * ct + hyy * st)
    dh_dtheta = margin * E * (-s.gx * st + s.gy * ct)
    dh_dv = -params.d_1 * margin * E
    Lf = v * ct * dh_dx + v * st * dh_dy
    return {
        "h": h,
        "Lf": Lf,
        "Lg_a": dh_dv,
        "Lg_w": dh_dtheta,
        "d": s.d,
        "gx": s.gx,
        "gy": s.gy,
        "oob": np.asarray(s.out_of_bounds, dtype=bool),
    }


def eval_lie(state: VehicleState, field, params: VehicleParams) -> BarrierEval:
    r = eval_lie_batch(state.as_array()[None, :], field, params)
    return BarrierEval(
        h=float(r["h"][0]),
        Lf_h=float(r["Lf"][0]),
        Lg_h=np.array([float(r["Lg_a"][0]), float(r["Lg_w"][0])]),
        d=float(r["d"][0]),
        grad=np.array([float(r["gx"][0]), float(r["gy"][0])]),
        out_of_bounds=bool(r["oob"][0]),
    )


def constraint_row(ev: BarrierEval, alpha: float) -> ConstraintRow:
    """Row of the filter constraint: Lg_h . u + (Lf_h + alpha h) >= 0."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return ConstraintRow(g=ev.Lg_h.copy(), c=ev.Lf_h + alpha * ev.h)


def constraint_residual(ev: BarrierEval, u: np.ndarray, alpha: float) -> float:
    """Lf_h + Lg_h . u + alpha h for an applied input."""
    return float(ev.Lf_h + ev.Lg_h @ u + alpha * ev.h)


def hdot_fd_along_flow(
    state: VehicleState, field, params: VehicleParams, delta: float = 1e-6
) -> float:
    """Oracle helper: central finite difference of h along the drift field."""
    ct, st = math.cos(state.theta), math.sin(state.theta)
    f = np.array([state.v * ct, state.v * st, 0.0, 0.0])
    sp = state.as_array() + delta * f
    sm = state.as_array() - delta * f
    hp, _ = eval_h_batch(sp[None, :], field, params)
    hm, _ = eval_h_batch(sm[None, :], field, params)
    return float((hp[0] - hm[0]) / (2.0 * delta))
