"""Tracking controllers: a PD path-following law (meant to be composed with
the input filter) and a barrier-constrained nonlinear MPC.

The MPC solves a direct single-shooting problem over the input sequence with
Euler-discretized unicycle dynamics, quadratic tracking cost over the
augmented error state (position, heading, speed, cross-track, heading error),
input boxes handled by projection, and the barrier constraint at every
horizon step handled by an augmented-Lagrangian outer loop around projected
gradient descent with Armijo backtracking. The barrier parameter alpha is held
constant across the horizon for a given solve. Everything is deterministic:
fixed iteration budgets, no wall-clock dependence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .barrier import ConstraintRow, eval_lie_batch
from .planner import Trajectory, reference_omega, tracking_errors
from .vehicle import ControlInput, VehicleParams, VehicleState


@dataclass(frozen=True)
class PdGains:
    k_v: float = 2.0  # speed error
    k_d: float = 0.5  # along-track position error
    k_y: float = 1.5  # cross-track error (scaled by speed)
    k_theta: float = 2.5  # heading error


@dataclass
class PdResult:
    u: ControlInput
    degenerate: bool
    ref_heading: float


def pd_control(
    state: VehicleState,
    traj: Trajectory,
    t: float,
    gains: PdGains,
    params: VehicleParams,
    prev_ref_heading: float | None = None,
) -> PdResult:
    """Path-following PD law, saturated to the input box.

    Sign convention (pinned by tests): positive cross-track error means the
    robot is left of the path and steers right. On a degenerate reference the
    speed loop still brakes toward v_ref = 0 but the steering feedback is cut.
    """
    e = tracking_errors(state, traj, t, prev_ref_heading)
    a = gains.k_v * (e.ref_speed - state.v) - gains.k_d * e.along
    if e.degenerate:
        omega = 0.0
    else:
        w_ref, w_degen = reference_omega(traj, t)
        omega = (0.0 if w_degen else w_ref) - gains.k_y * state.v * e.lateral - gains.k_theta * e.heading
    u = params.saturate(ControlInput(float(a), float(omega)))
    return PdResult(u=u, degenerate=e.degenerate, ref_heading=e.ref_heading)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 15
    dt: float = 0.1
    q_diag: tuple = (10.0, 10.0, 1.0, 1.0, 5.0, 5.0)  # x, y, theta, v, cross, heading
    p_diag: tuple = (1.0, 1.0)
    terminal_scale: float = 10.0
    max_outer: int = 3
    max_inner: int = 15
    penalty_init: float = 10.0
    penalty_growth: float = 5.0
    penalty_max: float = 1e5
    constraint_tol: float = 1e-5
    step_init: float = 0.02
    min_step: float = 1e-9
    armijo: float = 1e-4


@dataclass
class MpcSolution:
    u0: ControlInput
    horizon: np.ndarray  # (N+1, 4) predicted states, horizon[0] = measured state
    controls: np.ndarray  # (N, 2)
    cost: float
    iterations: int
    converged: bool
    feasible: bool
    max_violation: float
    merit_rounds: list  # accepted merit values per outer round

    def diagnostics_record(self, t: float, alpha: float, min_residual: float) -> str:
        return json.dumps(
            {
                "t": round(t, 4),
                "cost": self.cost,
                "iterations": self.iterations,
                "converged": self.converged,
                "min_residual": min_residual,
                "alpha": alpha,
                "u": [self.u0.a, self.u0.omega],
            }
        )


class MpcController:
    """Single-shooting MPC with warm start carried between control cycles."""

    def __init__(self, config: MpcConfig, params: VehicleParams):
        self.config = config
        self.params = params
        self._U_prev: np.ndarray | None = None
        self._lam_prev: np.ndarray | None = None
        self._last_t: float | None = None
        self._ref_heading_fallback = 0.0

    def reset(self) -> None:
        self._U_prev = None
        self._lam_prev = None
        self._last_t = None
        self._ref_heading_fallback = 0.0

    # ------------------------------------------------------------------
    # reference handling
    # ------------------------------------------------------------------

    def _reference(self, traj: Trajectory, t: float, theta_now: float):
        cfg = self.config
        n = cfg.horizon
        ts = t + cfg.dt * np.arange(n + 1)
        p, v, a = traj.sample_batch(ts)
        speed = np.hypot(v[:, 0], v[:, 1])
        theta_r = np.empty(n + 1)
        last = self._ref_heading_fallback if self._U_prev is not None else theta_now
        for k in range(n + 1):
            if speed[k] > 1e-6:
                last = math.atan2(v[k, 1], v[k, 0])
            theta_r[k] = last
        self._ref_heading_fallback = float(theta_r[0])
        # reference inputs: signed longitudinal acceleration (projection of
        # the reference acceleration onto the tangent, so braking phases get
        # a negative reference) and curvature angular rate
        with np.errstate(divide="ignore", invalid="ignore"):
            w_r = np.where(
                speed > 1e-6, (v[:, 0] * a[:, 1] - v[:, 1] * a[:, 0]) / np.maximum(speed**2, 1e-12), 0.0
            )
            a_r = np.where(
                speed > 1e-6, (v[:, 0] * a[:, 0] + v[:, 1] * a[:, 1]) / np.maximum(speed, 1e-12), 0.0
            )
        u_ref = np.column_stack([a_r[:-1], w_r[:-1]])
        u_ref[:, 0] = np.clip(u_ref[:, 0], -self.params.a_max, self.params.a_max)
        u_ref[:, 1] = np.clip(u_ref[:, 1], -self.params.omega_max, self.params.omega_max)
        return p, speed, theta_r, u_ref

    # ------------------------------------------------------------------
    # rollout / cost / constraints
    # ------------------------------------------------------------------

    def _rollout(self, x0: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Midpoint-discretized unicycle rollout (matches the RK4 plant to
        O(dt^3), which matters during speed ramps)."""
        cfg = self.config
        X = np.empty((cfg.horizon + 1, 4))
        X[0] = x0
        dt = cfg.dt
        for k in range(cfg.horizon):
            x, y, th, v = X[k]
            a, w = U[k]
            th_m = th + 0.5 * dt * w
            v_m = v + 0.5 * dt * a
            X[k + 1, 0] = x + dt * v_m * math.cos(th_m)
            X[k + 1, 1] = y + dt * v_m * math.sin(th_m)
            X[k + 1, 2] = th + dt * w
            X[k + 1, 3] = v + dt * a
        return X

    @staticmethod
    def _wrap(d: np.ndarray) -> np.ndarray:
        return np.mod(d + np.pi, 2.0 * np.pi) - np.pi

    def _errors(self, X: np.ndarray, ref):
        p, speed, theta_r, _ = ref
        ex = X[:, 0] - p[:, 0]
        ey = X[:, 1] - p[:, 1]
        eth = self._wrap(X[:, 2] - theta_r)
        ev = X[:, 3] - speed
        lat = -np.sin(theta_r) * ex + np.cos(theta_r) * ey
        return ex, ey, eth, ev, lat

    def _cost(self, X: np.ndarray, U: np.ndarray, ref) -> float:
        cfg = self.config
        q = np.asarray(cfg.q_diag)
        pw = np.asarray(cfg.p_diag)
        ex, ey, eth, ev, lat = self._errors(X, ref)
        stage = q[0] * ex**2 + q[1] * ey**2 + (q[2] + q[5]) * eth**2 + q[3] * ev**2 + q[4] * lat**2
        cost = float(stage[1:-1].sum() + cfg.terminal_scale * stage[-1])
        du = U - ref[3]
        cost += float((pw[0] * du[:, 0] ** 2 + pw[1] * du[:, 1] ** 2).sum())
        return cost

    def _constraints(self, X: np.ndarray, U: np.ndarray, field, alpha: float) -> np.ndarray:
        lie = eval_lie_batch(X[:-1], field, self.params)
        return lie["Lf"] + lie["Lg_a"] * U[:, 0] + lie["Lg_w"] * U[:, 1] + alpha * lie["h"]

    def _constraint_jacobians(self, X: np.ndarray, U: np.ndarray, field, alpha: float):
        """dc/du exactly; dc/dx by central differences of the residual.

        All 8 perturbed copies of the horizon states go through one stacked
        field evaluation to keep the per-iteration cost flat."""
        n = self.config.horizon
        lie = eval_lie_batch(X[:-1], field, self.params)
        dc_du = np.column_stack([lie["Lg_a"], lie["Lg_w"]])
        res = getattr(field, "resolution", 0.05)
        eps = np.array([0.25 * res, 0.25 * res, 1e-4, 1e-4])
        stack = np.repeat(X[None, :-1, :], 8, axis=0)  # (8, n, 4)
        for j in range(4):
            stack[2 * j, :, j] += eps[j]
            stack[2 * j + 1, :, j] -= eps[j]
        lies = eval_lie_batch(stack.reshape(8 * n, 4), field, self.params)
        ua = np.tile(U[:, 0], 8)
        uw = np.tile(U[:, 1], 8)
        c_all = (lies["Lf"] + lies["Lg_a"] * ua + lies["Lg_w"] * uw + alpha * lies["h"]).reshape(8, n)
        dc_dx = np.empty((n, 4))
        for j in range(4):
            dc_dx[:, j] = (c_all[2 * j] - c_all[2 * j + 1]) / (2.0 * eps[j])
        return dc_dx, dc_du

    # ------------------------------------------------------------------
    # merit and gradient
    # ------------------------------------------------------------------

    @staticmethod
    def _al_terms(c: np.ndarray, lam: np.ndarray, mu: float):
        m = np.maximum(0.0, lam - mu * c)
        psi = float(((m**2 - lam**2) / (2.0 * mu)).sum())
        return psi, m

    def _merit(self, U, x0, ref, field, alpha, lam, mu):
        X = self._rollout(x0, U)
        j = self._cost(X, U, ref)
        if field is None:
            return j, X, None
        c = self._constraints(X, U, field, alpha)
        psi, _ = self._al_terms(c, lam, mu)
        return j + psi, X, c

    def _gradient(self, U, X, ref, field, alpha, lam, mu):
        cfg = self.config
        n = cfg.horizon
        q = np.asarray(cfg.q_diag)
        pw = np.asarray(cfg.p_diag)
        p, speed, theta_r, u_ref = ref
        ex, ey, eth, ev, lat = self._errors(X, ref)

        # stage cost gradients w.r.t. state (terminal scaled)
        gx = np.zeros((n + 1, 4))
        w = np.ones(n + 1)
        w[0] = 0.0
        w[-1] = cfg.terminal_scale
        gx[:, 0] = w * 2.0 * (q[0] * ex - q[4] * lat * np.sin(theta_r))
        gx[:, 1] = w * 2.0 * (q[1] * ey + q[4] * lat * np.cos(theta_r))
        gx[:, 2] = w * 2.0 * (q[2] + q[5]) * eth
        gx[:, 3] = w * 2.0 * q[3] * ev

        du = U - u_ref
        gu = 2.0 * du * pw[None, :]

        if field is not None:
            c = self._constraints(X, U, field, alpha)
            _, m = self._al_terms(c, lam, mu)
            dc_dx, dc_du = self._constraint_jacobians(X, U, field, alpha)
            gx[:-1] += -m[:, None] * dc_dx
            gu += -m[:, None] * dc_du

        # adjoint sweep through the midpoint dynamics
        dt = cfg.dt
        grad = np.empty_like(U)
        lam_adj = gx[n]
        for k in range(n - 1, -1, -1):
            _, _, th, v = X[k]
            a, w = U[k]
            th_m = th + 0.5 * dt * w
            v_m = v + 0.5 * dt * a
            ct, st = math.cos(th_m), math.sin(th_m)
            l0, l1, l2, l3 = lam_adj
            grad[k, 0] = gu[k, 0] + 0.5 * dt * dt * ct * l0 + 0.5 * dt * dt * st * l1 + dt * l3
            grad[k, 1] = (
                gu[k, 1]
                - 0.5 * dt * dt * v_m * st * l0
                + 0.5 * dt * dt * v_m * ct * l1
                + dt * l2
            )
            lam_adj = gx[k] + np.array(
                [
                    l0,
                    l1,
                    l2 - dt * v_m * st * l0 + dt * v_m * ct * l1,
                    l3 + dt * ct * l0 + dt * st * l1,
                ]
            )
        return grad

    def _filter_rollout_repair(self, U, x0, field, alpha, box_lo, box_hi):
        """Feasibility restoration by construction: roll the horizon forward,
        projecting each input onto its own (affine) barrier constraint with
        the analytic point filter before stepping.

        Succeeds whenever every step is pointwise feasible; the result is what
        a filtered closed loop would execute, which makes it a strong feasible
        incumbent when projected gradient stalls on the kinked grid landscape.
        """
        from .safety_filter import InputBox, filter_input

        cfg = self.config
        n = cfg.horizon
        dt = cfg.dt
        box = InputBox(box_lo[0], box_hi[0], box_lo[1], box_hi[1])
        U_rep = np.empty_like(U)
        x = x0.copy()
        ok = True
        for k in range(n):
            lie = eval_lie_batch(x[None, :], field, self.params)
            row = ConstraintRow(
                g=np.array([float(lie["Lg_a"][0]), float(lie["Lg_w"][0])]),
                c=float(lie["Lf"][0] + alpha * lie["h"][0]),
            )
            res = filter_input(ControlInput(float(U[k, 0]), float(U[k, 1])), row, box)
            if res.status == "infeasible":
                ok = False
            U_rep[k] = [res.u.a, res.u.omega]
            a, w = U_rep[k]
            th_m = x[2] + 0.5 * dt * w
            v_m = x[3] + 0.5 * dt * a
            x = np.array(
                [
                    x[0] + dt * v_m * math.cos(th_m),
                    x[1] + dt * v_m * math.sin(th_m),
                    x[2] + dt * w,
                    x[3] + dt * a,
                ]
            )
        return U_rep, ok

    def _best_repair(self, U, x0, field, alpha, box_lo, box_hi):
        """Pointwise repair of the given inputs; if some tail step is beyond
        pointwise rescue (speed carried too far), fall back to repairing a
        stop-as-soon-as-possible input sequence, which stays feasible whenever
        the vehicle can stop before the barrier boundary.

        Returns (U, ok, kind) with kind "plain" or "stop": stop sequences are
        meant to serve only as feasible incumbents, not optimization starts
        (their tracking cost is intentionally terrible)."""
        U_rep, ok = self._filter_rollout_repair(U, x0, field, alpha, box_lo, box_hi)
        if ok:
            return U_rep, True, "plain"
        n = self.config.horizon
        dt = self.config.dt

        def track_then_stop(j: int) -> np.ndarray:
            """Desired inputs: follow U up to step j, brake to rest after."""
            U_d = U.copy()
            # speed at the switch under the braking tail only matters через
            # the rollout; approximate the tail with a stop-at-zero ramp
            v = x0[3] + dt * float(U[:j, 0].sum()) if j > 0 else x0[3]
            for k in range(j, n):
                a = float(np.clip(-v / dt, box_lo[0], box_hi[0]))
                U_d[k] = (a, 0.0)
                v += dt * a
            return U_d

        # latest switch point that stays pointwise feasible: braking shifts
        # into the applied input only as the hazard actually approaches
        lo_j, hi_j = 0, n  # hi_j == n is the (failed) plain repair
        best_U = None
        while lo_j <= hi_j:
            mid = (lo_j + hi_j) // 2
            U_try, ok_try = self._filter_rollout_repair(
                track_then_stop(mid), x0, field, alpha, box_lo, box_hi
            )
            if ok_try:
                best_U = U_try
                lo_j = mid + 1
            else:
                hi_j = mid - 1
        if best_U is not None:
            return best_U, True, "stop"
        c_rep = self._constraints(self._rollout(x0, U_rep), U_rep, field, alpha)
        U_stop, _ = self._filter_rollout_repair(track_then_stop(0), x0, field, alpha, box_lo, box_hi)
        c_stop = self._constraints(self._rollout(x0, U_stop), U_stop, field, alpha)
        if float(np.maximum(0.0, -c_stop).max()) < float(np.maximum(0.0, -c_rep).max()):
            return U_stop, False, "stop"
        return U_rep, False, "plain"

    # ------------------------------------------------------------------
    # solve
    # ------------------------------------------------------------------

    def solve(
        self,
        state: VehicleState,
        traj: Trajectory,
        t: float,
        field=None,
        alpha: float = 0.5,
    ) -> MpcSolution:
        """One receding-horizon solve. field=None drops the barrier constraint."""
        cfg = self.config
        n = cfg.horizon
        box_lo = np.array([-self.params.a_max, -self.params.omega_max])
        box_hi = -box_lo
        x0 = state.as_array()
        ref = self._reference(traj, t, state.theta)

        if self._U_prev is not None:
            # shift the previous solution by the elapsed number of cycles
            k_shift = 0
            if self._last_t is not None:
                k_shift = int(np.clip(round((t - self._last_t) / cfg.dt), 0, n))
            U = np.vstack([self._U_prev[k_shift:], np.repeat(self._U_prev[-1:], k_shift, axis=0)])
            lam_src = self._lam_prev if self._lam_prev is not None else np.zeros(n)
            lam = np.concatenate([lam_src[k_shift:], np.repeat(lam_src[-1:], k_shift)])
        else:
            U = ref[3].copy()
            lam = np.zeros(n)
        U = np.clip(U, box_lo, box_hi)
        if field is None:
            lam = np.zeros(n)

        best_feasible: tuple[float, np.ndarray, np.ndarray] | None = None

        def consider_feasible(U_c: np.ndarray) -> None:
            nonlocal best_feasible
            X_c = self._rollout(x0, U_c)
            c_c = self._constraints(X_c, U_c, field, alpha)
            if float(np.maximum(0.0, -c_c).max()) <= cfg.constraint_tol:
                j_c = self._cost(X_c, U_c, ref)
                if best_feasible is None or j_c < best_feasible[0]:
                    best_feasible = (j_c, U_c.copy(), X_c)

        if field is not None and float(
            np.maximum(0.0, -self._constraints(self._rollout(x0, U), U, field, alpha)).max()
        ) > cfg.constraint_tol:
            # repair the violating warm start; a plain (tracking-shaped)
            # repair also replaces the optimization start, a stop sequence is
            # only stashed as a feasible incumbent
            U_rep, ok, kind = self._best_repair(U, x0, field, alpha, box_lo, box_hi)
            if ok:
                consider_feasible(U_rep)
                if kind == "plain":
                    U = U_rep

        mu = cfg.penalty_init
        step = cfg.step_init
        iterations = 0
        merit_rounds: list[list[float]] = []
        converged = False

        outer_rounds = cfg.max_outer if field is not None else 1
        inner_budget = cfg.max_inner if field is not None else cfg.max_inner * cfg.max_outer
        for _ in range(outer_rounds):
            merit, X, c = self._merit(U, x0, ref, field, alpha, lam, mu)
            round_trace = [merit]
            if field is not None and c is not None:
                viol0 = float(np.maximum(0.0, -c).max())
                if viol0 <= cfg.constraint_tol:
                    j0 = self._cost(X, U, ref)
                    if best_feasible is None or j0 < best_feasible[0]:
                        best_feasible = (j0, U.copy(), X.copy())
            stalled = False
            U_it: np.ndarray | None = None
            g_it: np.ndarray | None = None
            for _ in range(inner_budget):
                iterations += 1
                grad = self._gradient(U, X, ref, field, alpha, lam, mu)
                if g_it is not None:
                    # Barzilai-Borwein spectral step, safeguarded by Armijo below
                    s = (U - U_it).ravel()
                    yv = (grad - g_it).ravel()
                    sy = float(s @ yv)
                    if sy > 1e-14:
                        step = float(np.clip(float(s @ s) / sy, 1e-6, 5.0))
                U_it, g_it = U.copy(), grad.copy()
                moved = False
                while step >= cfg.min_step:
                    U_new = np.clip(U - step * grad, box_lo, box_hi)
                    diff = U_new - U
                    if np.abs(diff).max() < 1e-14:
                        break
                    m_new, X_new, c_new = self._merit(U_new, x0, ref, field, alpha, lam, mu)
                    if m_new <= merit - (cfg.armijo / max(step, 1e-12)) * float((diff**2).sum()):
                        U, X, c, merit = U_new, X_new, c_new, m_new
                        round_trace.append(merit)
                        moved = True
                        break
                    step *= 0.5
                if not moved:
                    stalled = True
                    break
                if field is not None and c is not None:
                    viol = float(np.maximum(0.0, -c).max())
                    if viol <= cfg.constraint_tol:
                        j_now = self._cost(X, U, ref)
                        if best_feasible is None or j_now < best_feasible[0]:
                            best_feasible = (j_now, U.copy(), X.copy())
            merit_rounds.append(round_trace)
            if field is None:
                converged = True
                break
            c_now = self._constraints(X, U, field, alpha)
            viol = float(np.maximum(0.0, -c_now).max())
            if viol > cfg.constraint_tol and stalled:
                U_rep, restored, kind = self._best_repair(U, x0, field, alpha, box_lo, box_hi)
                if restored:
                    consider_feasible(U_rep)
                if kind == "plain":
                    X_rep = self._rollout(x0, U_rep)
                    c_rep = self._constraints(X_rep, U_rep, field, alpha)
                    viol_rep = float(np.maximum(0.0, -c_rep).max())
                    if viol_rep < viol:
                        U, X, c_now, viol = U_rep, X_rep, c_rep, viol_rep
            if viol <= cfg.constraint_tol and stalled:
                converged = True
                break
            lam = np.maximum(0.0, lam - mu * c_now)
            mu = min(mu * cfg.penalty_growth, cfg.penalty_max)
            step = max(step, cfg.step_init * 0.1)

        X = self._rollout(x0, U)
        if field is not None:
            c_final = self._constraints(X, U, field, alpha)
            viol = float(np.maximum(0.0, -c_final).max())
            if viol <= cfg.constraint_tol:
                j_now = self._cost(X, U, ref)
                if best_feasible is None or j_now < best_feasible[0]:
                    best_feasible = (j_now, U.copy(), X.copy())
            if best_feasible is None and viol > cfg.constraint_tol:
                # last resort before declaring infeasibility
                U_rep, restored, _ = self._best_repair(U, x0, field, alpha, box_lo, box_hi)
                if restored:
                    consider_feasible(U_rep)
                else:
                    X_rep = self._rollout(x0, U_rep)
                    c_rep = self._constraints(X_rep, U_rep, field, alpha)
                    viol_rep = float(np.maximum(0.0, -c_rep).max())
                    if viol_rep < viol:
                        U, X, viol = U_rep, X_rep, viol_rep
            if best_feasible is not None:
                _, U, X = best_feasible
                c_final = self._constraints(X, U, field, alpha)
                viol = float(np.maximum(0.0, -c_final).max())
            feasible = viol <= max(cfg.constraint_tol, 1e-4)
            max_violation = viol
        else:
            feasible = True
            max_violation = 0.0
            converged = True

        self._U_prev = U.copy()
        self._lam_prev = lam.copy()
        self._last_t = t
        cost = self._cost(X, U, ref)
        return MpcSolution(
            u0=ControlInput(float(U[0, 0]), float(U[0, 1])),
            horizon=X,
            controls=U,
            cost=cost,
            iterations=iterations,
            converged=converged and feasible,
            feasible=feasible,
            max_violation=max_violation,
            merit_rounds=merit_rounds,
        )

    def horizon_safety(self, sol: MpcSolution, field, alpha: float) -> np.ndarray:
        """Barrier constraint residual at every horizon step of a solution."""
        return self._constraints(sol.horizon, sol.controls, field, alpha)
