"""Episode orchestration: the 10 Hz sense -> map -> plan -> adapt -> control ->
filter -> step loop, with collision/goal/timeout/deadlock adjudication and
full trace capture.

Modes:
  no_filter    -- controller output saturated and applied as-is
  const_alpha  -- barrier filter (PD) or barrier-constrained MPC, fixed alpha
  sac          -- alpha driven by the policy through the bounded integrator

Collision is checked on the ground-truth field; control and the barrier see
only the sensed map. Episodes are deterministic in (world, mode, controller,
seed, checkpoint)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..barrier import ConstraintRow, constraint_residual, constraint_row, eval_h, eval_lie
from ..config import Config
from ..controllers import MpcController, pd_control
from ..esdf import DistanceField, compute_esdf
from ..grid import OccupancyGrid
from ..planner import Trajectory, plan, progress, trajectory_clear
from ..rl.adaptation import AlphaAdapter, embed_state, normalize_state
from ..rl.replay import Transition
from ..rl.sac import SacNets, sample_action
from ..safety_filter import STATUS_INFEASIBLE, InputBox, filter_input
from ..vehicle import ControlInput, VehicleState, check_collision, integrate_known_map, sense, step_dynamics
from ..world import WorldSpec, rasterize
from .. import rl


@dataclass(frozen=True)
class Mode:
    kind: str  # "no_filter" | "const_alpha" | "sac"
    alpha: float | None = None  # const_alpha value
    nets: SacNets | None = None  # sac policy
    explore: bool = False  # stochastic actions (training) vs deterministic

    @classmethod
    def no_filter(cls) -> "Mode":
        return cls("no_filter")

    @classmethod
    def const_alpha(cls, alpha: float) -> "Mode":
        return cls("const_alpha", alpha=alpha)

    @classmethod
    def sac(cls, nets: SacNets, explore: bool = False) -> "Mode":
        return cls("sac", nets=nets, explore=explore)

    def label(self) -> str:
        if self.kind == "const_alpha":
            return f"const_alpha({self.alpha})"
        return self.kind


@dataclass
class EpisodeResult:
    outcome: str  # goal | collision | timeout | deadlock
    duration: float
    world_id: int
    seed: int
    mode: str
    controller: str
    trace: np.ndarray  # rows (t, x, y, theta, v, a, omega, alpha, h, d_o, rho)
    alpha_trace: np.ndarray  # (n, 2): t, alpha
    h_trace: np.ndarray  # (n, 2): t, h
    invariance: list  # (h_before, h_after_same_field, alpha, status) filter steps
    min_d_o: float  # ground-truth clearance minimum over the episode
    episode_return: float
    transitions: list[Transition] = field(default_factory=list)
    planner_failures: int = 0
    infeasible_cycles: int = 0

    def trace_to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("t,x,y,theta,v,a,omega,alpha,h,d_o,rho\n")
            for row in self.trace:
                f.write(",".join(f"{v:.6f}" for v in row))
                f.write("\n")


def detect_deadlock(
    times: list, rhos: list, xs: list, ys: list, window: float, eps_rho: float, eps_disp: float
) -> bool:
    """True when, over the trailing window, trajectory progress gained less
    than eps_rho and the robot displaced less than eps_disp."""
    if not times or times[-1] - times[0] < window:
        return False
    t_now = times[-1]
    i0 = 0
    for i in range(len(times) - 1, -1, -1):
        if t_now - times[i] >= window:
            i0 = i
            break
    w_rho = rhos[i0:]
    w_x = xs[i0:]
    w_y = ys[i0:]
    rho_gain = max(w_rho) - min(w_rho)
    disp = math.hypot(max(w_x) - min(w_x), max(w_y) - min(w_y))
    return rho_gain < eps_rho and disp < eps_disp


def _hold_steps(state: VehicleState, u: ControlInput, params, dt_p: float, n: int) -> VehicleState:
    for _ in range(n):
        state = step_dynamics(state, u, dt_p, params)
    return state


def _filtered_input(
    state: VehicleState,
    u_des: ControlInput,
    ev,
    alpha: float,
    known_field: DistanceField,
    params,
    box: InputBox,
    dt_c: float,
    dt_p: float,
    substeps: int,
    invariance_tol: float = 0.02,
):
    """Barrier-filter a desired input and enforce the one-step decay bound.

    The instantaneous constraint row only bounds hdot at the start of the
    zero-order hold; fast turns can still dip h below (1 - alpha dt) h over
    the full period. Because the plant is deterministic we simply predict the
    held step and re-filter against a tightened row until the discrete bound
    holds (the tightened feasible set is a subset of the original row, so the
    instantaneous constraint stays satisfied). Returns (u, status, h_pred)
    with h_pred evaluated on the same field snapshot."""
    decay = 1.0 - alpha * dt_c

    def step_h(from_state: VehicleState, u_try: ControlInput) -> tuple[VehicleState, float]:
        nxt = _hold_steps(from_state, u_try, params, dt_p, substeps)
        return nxt, eval_h(nxt, known_field, params)

    def viability_margin(nxt: VehicleState, h_nxt: float) -> float:
        """Best slack, over strong-braking probes from the predicted state,
        of the following step's decay bound. Negative means the robot would
        coast into a state where the bound is unmeetable."""
        need = decay * h_nxt - invariance_tol + enforce_margin
        brake = -params.a_max if nxt.v >= 0 else params.a_max
        m = -math.inf
        for probe in (
            ControlInput(brake, 0.0),
            ControlInput(brake, params.omega_max),
            ControlInput(brake, -params.omega_max),
        ):
            _, h2 = step_h(nxt, probe)
            m = max(m, h2 - need)
        return m

    enforce_margin = 0.01
    row = constraint_row(ev, alpha)
    res = filter_input(u_des, row, box)
    u = res.u
    status = res.status
    nxt, h_pred = step_h(state, u)
    if status == STATUS_INFEASIBLE:
        return u, status, h_pred
    target = decay * ev.h - invariance_tol + enforce_margin

    def score(h_t: float, nxt_t: VehicleState) -> tuple:
        m = viability_margin(nxt_t, h_t)
        ok = h_t >= target and m >= 0.0
        # viability first: a candidate that keeps the next state recoverable
        # beats one that merely maximizes this step's barrier value
        return (ok, min(m, 0.0), min(h_t - target, 0.0), h_t)

    best_key = score(h_pred, nxt)
    best = (u, status, h_pred)
    if best_key[0]:
        return best

    # push the input deeper into the constraint halfspace until the predicted
    # step meets the bound and stays viable: start beyond the current slack
    # (otherwise the filter returns u_des unchanged) and grow geometrically;
    # doubling to infeasibility sweeps up to the strongest barrier response
    slack0 = max(float(row.g @ np.array([u.a, u.omega]) + row.c), 0.0)
    kappa = slack0 + 1.5 * max(target - h_pred, 0.0) / dt_c + 1e-6
    for _ in range(8):
        res_t = filter_input(u_des, ConstraintRow(g=row.g, c=row.c - kappa), box)
        if res_t.status == STATUS_INFEASIBLE:
            break
        nxt_t, h_t = step_h(state, res_t.u)
        key_t = score(h_t, nxt_t)
        if key_t > best_key:
            best_key = key_t
            best = (res_t.u, res_t.status, h_t)
        if key_t[0]:
            break
        kappa *= 2.0
    if not best_key[0]:
        # tightening moves only along the row normal; when its steering
        # coefficient vanishes the sweep can only brake, so also try the
        # turn-and-brake escapes (projected back onto the row)
        brake = -params.a_max if state.v >= 0 else params.a_max
        for probe in (
            ControlInput(brake, params.omega_max),
            ControlInput(brake, -params.omega_max),
            ControlInput(brake, 0.0),
        ):
            res_p = filter_input(probe, row, box)
            if res_p.status == STATUS_INFEASIBLE:
                continue
            nxt_p, h_p = step_h(state, res_p.u)
            key_p = score(h_p, nxt_p)
            if key_p > best_key:
                best_key = key_p
                best = (res_p.u, "clamped" if res_p.status == "unmodified" else res_p.status, h_p)
            if key_p[0]:
                break
    return best


def run_episode(
    world: WorldSpec,
    mode: Mode,
    controller: str,
    seed: int,
    config: Config,
    episode_id: int = 0,
    timeout: float | None = None,
    start_override: tuple[float, float, float] | None = None,
    mpc_diag_path=None,
) -> EpisodeResult:
    if controller not in ("pd", "mpc"):
        raise ValueError(f"unknown controller {controller!r}")
    diag_fh = open(mpc_diag_path, "w") if mpc_diag_path and controller == "mpc" else None
    hc = config.harness
    params = config.vehicle
    dt_c = hc.control_dt
    dt_p = dt_c / hc.physics_substeps
    timeout = timeout if timeout is not None else hc.timeout
    rng = np.random.default_rng(seed)

    truth_grid = rasterize(world)
    truth_field = compute_esdf(truth_grid)
    known_grid = OccupancyGrid(truth_grid.resolution, truth_grid.origin, np.zeros_like(truth_grid.occupied))
    known_field = compute_esdf(known_grid)

    bounds = config.alpha_bounds(controller)
    adapter = AlphaAdapter.for_bounds(bounds[0], bounds[1], hc.alpha_traverse_time)
    scales = rl.StateScales(
        v=params.v_max, a=params.a_max, omega=params.omega_max,
        d_o=config.reward.d_cap, alpha=bounds[1],
    )
    box = InputBox.from_params(params)
    mpc = MpcController(config.mpc, params) if controller == "mpc" else None

    start = start_override or world.start
    state = VehicleState(start[0], start[1], start[2], 0.0)
    traj: Trajectory | None = None
    t = 0.0
    t_last_plan = -1e9
    prev_u = ControlInput(0.0, 0.0)
    prev_gamma = 0.0
    prev_ref_heading: float | None = None

    trace_rows = []
    times_hist: list[float] = []
    rho_hist: list[float] = []
    x_hist: list[float] = []
    y_hist: list[float] = []
    invariance = []
    transitions: list[Transition] = []
    episode_return = 0.0
    planner_failures = 0
    infeasible_cycles = 0
    min_d_o = float(truth_field.value_at(state.x, state.y))
    outcome = "timeout"

    while t < timeout - 1e-9:
        # --- sense and update the known map
        hits = sense(world, state, params)
        known_grid, n_new = integrate_known_map(known_grid, hits)
        if n_new > 0:
            known_field = compute_esdf(known_grid)

        # --- replan on schedule, on conflict, or when the horizon ran out.
        # A fresh candidate only replaces a healthy current plan when it is
        # clearly shorter: near-tie routes otherwise flip-flop between
        # homotopy classes every period and wriggle-lock the controller.
        must_replace = (
            traj is None
            or traj.planner_failed
            or (traj.duration > 0 and t > traj.knots[-1] - 0.5)
            or (n_new > 0 and not trajectory_clear(traj, known_field, config.planner.robot_radius, t))
        )
        if must_replace or (t - t_last_plan) >= hc.replan_period:
            candidate = plan(known_field, state, world.goal, t, config.planner)
            t_last_plan = t
            remaining = traj.knots[-1] - t if traj is not None else -1.0
            if must_replace or candidate.planner_failed is False and (
                candidate.duration <= remaining - 0.5
            ):
                traj = candidate
                if traj.planner_failed:
                    planner_failures += 1

        # --- barrier quantities on the known field
        ev = eval_lie(state, known_field, params)
        if math.hypot(ev.grad[0], ev.grad[1]) < 1e-9:
            gamma_d = prev_gamma
        else:
            gamma_d = math.atan2(ev.grad[1], ev.grad[0])
            prev_gamma = gamma_d
        _, rho = progress(traj, state.x, state.y)

        # --- alpha update
        action_rate = 0.0
        s_raw = None
        if mode.kind == "sac":
            s_raw = embed_state(state, prev_u, ev.d, gamma_d, rho, adapter.alpha, ev.h)
            s_norm = normalize_state(s_raw, scales)
            action_rate, _ = sample_action(
                mode.nets, s_norm, rng=rng, deterministic=not mode.explore
            )
            adapter.update(action_rate, dt_c)
            alpha = adapter.alpha
        elif mode.kind == "const_alpha":
            alpha = float(mode.alpha)
        else:
            alpha = bounds[1]  # bookkeeping only; no constraint is enforced

        # --- control
        status = "unfiltered"
        if controller == "pd":
            pd_res = pd_control(state, traj, t, config.pd, params, prev_ref_heading)
            prev_ref_heading = pd_res.ref_heading
            if mode.kind == "no_filter":
                u = pd_res.u
            else:
                u, status, _ = _filtered_input(
                    state, pd_res.u, ev, alpha, known_field, params, box,
                    dt_c, dt_p, hc.physics_substeps,
                )
                if status == STATUS_INFEASIBLE:
                    infeasible_cycles += 1
                    u = ControlInput(
                        float(np.clip(-state.v / dt_c, -params.a_max, params.a_max)), u.omega
                    )
        else:
            sol = mpc.solve(
                state, traj, t,
                field=None if mode.kind == "no_filter" else known_field,
                alpha=alpha,
            )
            if mode.kind != "no_filter" and not sol.feasible:
                infeasible_cycles += 1
                status = STATUS_INFEASIBLE
                pd_res = pd_control(state, traj, t, config.pd, params, prev_ref_heading)
                prev_ref_heading = pd_res.ref_heading
                u, f_status, _ = _filtered_input(
                    state, pd_res.u, ev, alpha, known_field, params, box,
                    dt_c, dt_p, hc.physics_substeps,
                )
                if f_status == STATUS_INFEASIBLE:
                    u = ControlInput(
                        float(np.clip(-state.v / dt_c, -params.a_max, params.a_max)), u.omega
                    )
            else:
                u = sol.u0
                status = "mpc"
            if diag_fh is not None:
                min_res = float("nan")
                if mode.kind != "no_filter":
                    min_res = float(mpc.horizon_safety(sol, known_field, alpha).min())
                diag_fh.write(sol.diagnostics_record(t, alpha, min_res))
                diag_fh.write("\n")

        u = params.saturate(u)
        h_before = ev.h

        # --- step physics under zero-order hold
        for _ in range(hc.physics_substeps):
            state = step_dynamics(state, u, dt_p, params)
        t += dt_c

        # --- post-step bookkeeping
        d_truth = float(truth_field.value_at(state.x, state.y))
        min_d_o = min(min_d_o, d_truth)
        collided = check_collision(state, truth_field, params.r_v)
        at_goal = math.hypot(state.x - world.goal[0], state.y - world.goal[1]) <= hc.goal_radius

        h_after = rl_h_after = None
        if mode.kind != "no_filter":
            ev_after = eval_lie(state, known_field, params)
            h_after = ev_after.h
            rl_h_after = ev_after
            if controller == "pd":
                invariance.append((h_before, h_after, alpha, status))

        trace_rows.append(
            (t, state.x, state.y, state.theta, state.v, u.a, u.omega, alpha, h_before, ev.d, rho)
        )
        times_hist.append(t)
        rho_hist.append(rho)
        x_hist.append(state.x)
        y_hist.append(state.y)

        done = collided or at_goal
        if mode.kind == "sac":
            after = rl_h_after if rl_h_after is not None else eval_lie(state, known_field, params)
            if math.hypot(after.grad[0], after.grad[1]) < 1e-9:
                gamma_after = prev_gamma
            else:
                gamma_after = math.atan2(after.grad[1], after.grad[0])
            _, rho_after = progress(traj, state.x, state.y)
            s_next = embed_state(state, u, after.d, gamma_after, rho_after, adapter.alpha, after.h)
            resid = constraint_residual(ev, u.as_array(), alpha)
            reward = rl.compute_reward(
                d_o=after.d,
                rho=rho_after,
                alpha_rate=action_rate,
                alpha_pre=adapter.alpha_pre,
                alpha_lo=bounds[0],
                alpha_hi=bounds[1],
                constraint_residual=resid,
                collided=collided,
                weights=config.reward,
                at_goal=at_goal,
            )
            episode_return += reward
            transitions.append(
                Transition(
                    s=s_raw,
                    action=action_rate,
                    reward=reward,
                    s_next=s_next,
                    done=done,
                    episode=episode_id,
                    step=len(transitions),
                    world=world.seed,
                )
            )

        prev_u = u
        if collided:
            outcome = "collision"
            break
        if at_goal:
            outcome = "goal"
            break
        if detect_deadlock(
            times_hist, rho_hist, x_hist, y_hist,
            hc.deadlock_window, hc.deadlock_rho_eps, hc.deadlock_disp_eps,
        ):
            outcome = "deadlock"
            break

    if diag_fh is not None:
        diag_fh.close()
    trace = np.array(trace_rows) if trace_rows else np.zeros((0, 11))
    return EpisodeResult(
        outcome=outcome,
        duration=t,
        world_id=world.seed,
        seed=seed,
        mode=mode.label(),
        controller=controller,
        trace=trace,
        alpha_trace=trace[:, [0, 7]] if trace.size else np.zeros((0, 2)),
        h_trace=trace[:, [0, 8]] if trace.size else np.zeros((0, 2)),
        invariance=invariance,
        min_d_o=min_d_o,
        episode_return=episode_return,
        transitions=transitions,
        planner_failures=planner_failures,
        infeasible_cycles=infeasible_cycles,
    )
