"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`.

The learning and benchmark criteria train real policies and are the slow part
(tens of minutes); everything else finishes in seconds."""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
import pytest

from cbfnav.barrier import constraint_row, eval_h, eval_lie, hdot_fd_along_flow
from cbfnav.config import Config, TrainSettings
from cbfnav.controllers import MpcConfig, MpcController
from cbfnav.esdf import compute_esdf
from cbfnav.grid import OccupancyGrid
from cbfnav.harness import Mode, evaluate, run_episode, train
from cbfnav.harness.evaluate import adaptation_correlation
from cbfnav.planner import PlannerConfig, plan
from cbfnav.rl.replay import ReplayBuffer
from cbfnav.rl.sac import SacConfig, SacNets, compute_losses_and_grads
from cbfnav.safety_filter import InputBox, filter_input, solve_time_benchmark
from cbfnav.vehicle import ControlInput, VehicleParams, VehicleState, step_dynamics
from cbfnav.world import WorldSpec, generate_corridor_world, generate_world, rasterize

from conftest import brute_force_signed_distance, random_grid, smooth_random_field, wall_world

CFG = Config()


def report(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[criterion {criterion:02d}] {'PASS' if ok else 'FAIL'} {name}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. ESDF oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_01_esdf_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        grid = random_grid(rng, h=50, w=50, p=float(rng.uniform(0.02, 0.3)))
        f = compute_esdf(grid)
        # O(n^2) oracle on the free cells: min center distance to any
        # occupied cell, computed directly from the definition
        occ_pts = np.argwhere(grid.occupied).astype(np.float64)
        free_mask = ~grid.occupied
        if not occ_pts.size or not free_mask.any():
            continue
        free_pts = np.argwhere(free_mask).astype(np.float64)
        d2 = ((free_pts[:, None, :] - occ_pts[None, :, :]) ** 2).sum(axis=2)
        oracle = np.sqrt(d2.min(axis=1)) * grid.resolution
        worst = max(worst, float(np.abs(f.d[free_mask] - oracle).max()))
    elapsed = time.perf_counter() - t0
    report(
        1, "ESDF matches brute force on 100 random 50x50 grids",
        worst < 1e-9 and elapsed < 5.0,
        f"max err {worst:.2e}, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------------------
# 2. QP oracle equivalence and latency
# ---------------------------------------------------------------------------


def test_criterion_02_qp_oracle_and_latency():
    from cbfnav.barrier import ConstraintRow

    rng = np.random.default_rng(7)
    box = InputBox(-2.0, 2.0, -2.0, 2.0)
    n_grid = 401
    a_grid = np.linspace(box.a_lo, box.a_hi, n_grid)
    w_grid = np.linspace(box.w_lo, box.w_hi, n_grid)
    A, W = np.meshgrid(a_grid, w_grid)
    worst_gap = -np.inf
    checked = 0
    for _ in range(1000):
        row = ConstraintRow(g=rng.normal(size=2), c=float(rng.normal(scale=2.0)))
        u_des = ControlInput(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)))
        res = filter_input(u_des, row, box)
        feas = row.g[0] * A + row.g[1] * W + row.c >= 0.0
        if res.status == "infeasible":
            assert not feas.any() or float(np.abs(row.g).max()) < 1e-12
            continue
        d2 = (A - u_des.a) ** 2 + (W - u_des.omega) ** 2
        d2 = np.where(feas, d2, np.inf)
        best = float(d2.min())
        mine = (res.u.a - u_des.a) ** 2 + (res.u.omega - u_des.omega) ** 2
        worst_gap = max(worst_gap, mine - best)
        checked += 1
    stats = solve_time_benchmark(n=100_000, seed=3)
    ok = worst_gap <= 1e-6 and stats["p99"] < 1e-3 and checked >= 800
    report(
        2, "filter beats 401x401 grid search; p99 latency < 1 ms",
        ok, f"worst gap {worst_gap:.2e}, p99 {stats['p99']*1e6:.1f} us, {checked} feasible instances",
    )


# ---------------------------------------------------------------------------
# 3. Lie derivative fidelity
# ---------------------------------------------------------------------------


def test_criterion_03_lie_fidelity(wall_field):
    params = VehicleParams(r_v=0.25, d_1=0.4)
    rng = np.random.default_rng(42)
    worst_rel = 0.0
    n_checked = 0
    while n_checked < 500:
        field = smooth_random_field(rng)
        for _ in range(20):
            st = VehicleState(
                float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)),
                float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-1.9, 1.9)),
            )
            ev = eval_lie(st, field, params)
            fd = hdot_fd_along_flow(st, field, params)
            scale = max(abs(fd), abs(ev.Lf_h), 1e-6)
            worst_rel = max(worst_rel, abs(ev.Lf_h - fd) / scale)
            delta = 1e-6
            fd_a = (
                eval_h(VehicleState(st.x, st.y, st.theta, st.v + delta), field, params)
                - eval_h(VehicleState(st.x, st.y, st.theta, st.v - delta), field, params)
            ) / (2 * delta)
            fd_w = (
                eval_h(VehicleState(st.x, st.y, st.theta + delta, st.v), field, params)
                - eval_h(VehicleState(st.x, st.y, st.theta - delta, st.v), field, params)
            ) / (2 * delta)
            worst_rel = max(worst_rel, abs(ev.Lg_h[0] - fd_a) / max(abs(fd_a), 1e-6))
            worst_rel = max(worst_rel, abs(ev.Lg_h[1] - fd_w) / max(abs(fd_w), 1e-6))
            n_checked += 1

    # analytic wall field, exact hand values
    ev = eval_lie(VehicleState(1.0, 0.0, 0.0, 1.0), wall_field, params)
    E = math.exp(0.6)
    hand_ok = (
        abs(ev.h - 0.75 * E) < 1e-8
        and abs(ev.Lf_h - E) < 1e-8
        and abs(ev.Lg_h[0] + 0.4 * 0.75 * E) < 1e-8
        and abs(ev.Lg_h[1]) < 1e-8
    )
    report(
        3, "Lie derivatives match flow finite differences and hand values",
        worst_rel < 1e-4 and hand_ok, f"{n_checked} states, worst rel {worst_rel:.2e}",
    )


# ---------------------------------------------------------------------------
# 4. SAC gradient fidelity
# ---------------------------------------------------------------------------


def test_criterion_04_sac_gradient_fidelity():
    t0 = time.perf_counter()
    cfg = SacConfig(hidden=(8, 8), batch_size=16)
    nets = SacNets(cfg, action_scale=0.475, seed=123)
    rng = np.random.default_rng(123)
    batch = {
        "s": rng.normal(size=(16, 9)),
        "a_norm": np.tanh(rng.normal(size=16)),
        "r": rng.normal(size=16),
        "s2": rng.normal(size=(16, 9)),
        "done": (rng.uniform(size=16) < 0.3).astype(float),
    }
    noise_cur = rng.standard_normal(16)
    noise_next = rng.standard_normal(16)
    _, grads = compute_losses_and_grads(nets, batch, noise_cur, noise_next)
    eps = 1e-6
    worst = 0.0

    def sweep(get_vec, set_vec, grad_vec, loss_key):
        nonlocal worst
        vec0 = get_vec()
        for i in range(vec0.size):
            vp = vec0.copy()
            vp[i] += eps
            set_vec(vp)
            lp = compute_losses_and_grads(nets, batch, noise_cur, noise_next)[0][loss_key]
            vm = vec0.copy()
            vm[i] -= eps
            set_vec(vm)
            lm = compute_losses_and_grads(nets, batch, noise_cur, noise_next)[0][loss_key]
            set_vec(vec0)
            fd = (lp - lm) / (2 * eps)
            scale = max(abs(fd), abs(grad_vec[i]), 1e-6)
            worst = max(worst, abs(grad_vec[i] - fd) / scale)

    sweep(nets.actor.flat, nets.actor.set_flat, grads["actor"], "actor")
    sweep(nets.q1.flat, nets.q1.set_flat, grads["q1"], "q1")
    sweep(nets.q2.flat, nets.q2.set_flat, grads["q2"], "q2")
    lb0 = nets.log_beta
    nets.log_beta = lb0 + eps
    lp = compute_losses_and_grads(nets, batch, noise_cur, noise_next)[0]["beta"]
    nets.log_beta = lb0 - eps
    lm = compute_losses_and_grads(nets, batch, noise_cur, noise_next)[0]["beta"]
    nets.log_beta = lb0
    fd = (lp - lm) / (2 * eps)
    worst = max(worst, abs(grads["log_beta"] - fd) / max(abs(fd), 1e-6))
    elapsed = time.perf_counter() - t0
    report(
        4, "every SAC parameter gradient matches central differences",
        worst < 1e-4 and elapsed < 30.0, f"worst rel {worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 5. Forward invariance in corridors
# ---------------------------------------------------------------------------


def test_criterion_05_forward_invariance_corridors():
    alpha = 4.0
    n_episodes = 100
    violations = 0
    worst_short = 0.0
    clean_episode_collisions = 0
    outcomes = {"goal": 0, "collision": 0, "timeout": 0, "deadlock": 0}
    for seed in range(n_episodes):
        world = generate_corridor_world(seed)
        res = run_episode(world, Mode.const_alpha(alpha), "pd", seed=seed, config=CFG, timeout=45.0)
        outcomes[res.outcome] += 1
        had_infeasible = False
        for h_before, h_after, a, status in res.invariance:
            if status == "infeasible":
                had_infeasible = True
                continue
            bound = (1.0 - a * CFG.harness.control_dt) * h_before - 0.02
            if h_after < bound:
                violations += 1
                worst_short = max(worst_short, bound - h_after)
        if not had_infeasible and res.outcome == "collision":
            clean_episode_collisions += 1
    ok = violations == 0 and clean_episode_collisions == 0
    report(
        5, "one-step barrier decay bound holds; clean episodes collision-free",
        ok,
        f"{n_episodes} episodes {outcomes}, {violations} bound violations"
        f" (worst {worst_short:.3f}), {clean_episode_collisions} clean-episode collisions",
    )


# ---------------------------------------------------------------------------
# 6. Learning progress (3 seeds, single world)
# ---------------------------------------------------------------------------


def test_criterion_06_learning_progress(tmp_path):
    t0 = time.perf_counter()
    world = generate_world(20, dataclasses.replace(CFG.worldgen, density=0.55))
    improved = []
    for seed in (0, 1, 2):
        cfg = dataclasses.replace(
            CFG,
            train=TrainSettings(
                master_seed=seed, n_worlds=1, repeats_per_world=50, controller="mpc",
                warmup_transitions=300, updates_per_episode_cap=40, checkpoint_every=25,
            ),
        )
        result = train(cfg, tmp_path / f"seed{seed}", worlds=[world], episodes=50)
        first = float(np.mean(result.returns[:10]))
        last = float(np.mean(result.returns[-10:]))
        improved.append((seed, first, last, last > first))
    elapsed = time.perf_counter() - t0
    ok = all(x[3] for x in improved) and elapsed < 1800
    report(
        6, "mean return of last 10 episodes beats first 10 for every seed",
        ok,
        "; ".join(f"seed {s}: {f:.0f} -> {l:.0f}" for s, f, l, _ in improved)
        + f"; {elapsed/60:.1f} min",
    )


# ---------------------------------------------------------------------------
# 7-9. Benchmark: train once, evaluate ordering, dominance, adaptation trend
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_artifacts(tmp_path_factory):
    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("bench")
    result = train(CFG, out)
    nets, _, _ = SacNets.load(result.checkpoint_path, CFG.sac)
    test_worlds = [generate_world(100 + i, CFG.worldgen) for i in range(10)]
    modes = [Mode.no_filter(), Mode.const_alpha(0.5), Mode.sac(nets)]
    rep = evaluate(test_worlds, modes, ["mpc"], trials_per_world=5, config=CFG, timeout=75.0)
    rep.to_csv(out / "benchmark.csv")
    rep.to_json(out / "benchmark.json")
    elapsed = time.perf_counter() - t0
    return {"nets": nets, "report": rep, "worlds": test_worlds, "elapsed": elapsed, "out": out}


def test_criterion_07_benchmark_ordering(benchmark_artifacts):
    rep = benchmark_artifacts["report"]
    s_sac = rep.success_rate("sac", "mpc")
    s_const = rep.success_rate("const_alpha(0.5)", "mpc")
    s_none = rep.success_rate("no_filter", "mpc")
    elapsed = benchmark_artifacts["elapsed"]
    ok = (
        s_sac >= s_const
        and s_const >= s_none - 0.05
        and s_sac - s_none >= 0.10
        and elapsed < 7200
    )
    report(
        7, "success ordering sac >= const >= no_filter - 0.05, sac - no_filter >= 0.10",
        ok, f"sac {s_sac:.2f}, const {s_const:.2f}, no_filter {s_none:.2f}, {elapsed/60:.0f} min",
    )


def test_criterion_08_per_world_dominance(benchmark_artifacts):
    rep = benchmark_artifacts["report"]
    diffs = rep.per_world_difference("sac", "const_alpha(0.5)", "mpc")
    ok = all(v >= 0.0 for v in diffs.values())
    report(
        8, "sac success >= const_alpha on every individual world",
        ok, ", ".join(f"w{w}:{v:+.1f}" for w, v in diffs.items()),
    )


def test_criterion_09_adaptation_trend(benchmark_artifacts):
    nets = benchmark_artifacts["nets"]
    positive = 0
    total = 0
    corrs = []
    for world in benchmark_artifacts["worlds"]:
        for seed in (55, 56):
            res = run_episode(world, Mode.sac(nets), "mpc", seed=seed, config=CFG, timeout=75.0)
            if res.outcome != "goal":
                continue
            corr = adaptation_correlation(res.alpha_trace, res.trace[:, 9])
            corrs.append(corr)
            total += 1
            positive += corr > 0
    ok = total > 0 and positive / total >= 0.70
    report(
        9, "clearance-parameter correlation positive in >= 70% of successful runs",
        ok, f"{positive}/{total} positive, median {np.median(corrs) if corrs else float('nan'):.2f}",
    )


# ---------------------------------------------------------------------------
# 10. MPC solver health
# ---------------------------------------------------------------------------


def test_criterion_10_mpc_health():
    params = CFG.vehicle
    pcfg = PlannerConfig()
    spec = WorldSpec(0, (0.0, 0.0, 8.0, 8.0), 0.05, (), (0.5, 4.0, 0.0), (7.5, 4.0))
    f_empty = compute_esdf(rasterize(spec))
    traj = plan(f_empty, VehicleState(0.5, 4.0, 0.0, 0.0), (7.5, 4.0), t0=0.0, cfg=pcfg)

    # merit non-increase over 100 seeded solves
    rng = np.random.default_rng(0)
    monotone = True
    corridor = generate_corridor_world(5)
    f_corr = compute_esdf(rasterize(corridor))
    traj_corr = plan(f_corr, VehicleState(*corridor.start, 0.0), corridor.goal, t0=0.0, cfg=pcfg)
    for i in range(100):
        mpc = MpcController(MpcConfig(), params)
        use_corr = i % 2 == 1
        tr = traj_corr if use_corr else traj
        base = corridor.start if use_corr else (0.5, 4.0, 0.0)
        st = VehicleState(
            base[0] + float(rng.normal(0, 0.1)),
            base[1] + float(rng.normal(0, 0.1)),
            base[2] + float(rng.normal(0, 0.3)),
            float(rng.uniform(0, 1.5)),
        )
        sol = mpc.solve(st, tr, float(rng.uniform(0, 1.0)), field=f_corr if use_corr else None,
                        alpha=float(rng.uniform(0.05, 0.5)))
        for trace in sol.merit_rounds:
            if np.any(np.diff(np.array(trace)) > 1e-9):
                monotone = False

    # closed-loop tracking and per-solve wall time
    mpc = MpcController(MpcConfig(), params)
    st = VehicleState(0.5, 4.0, 0.0, 0.0)
    t = 0.0
    errs = []
    times = []
    while t < traj.duration:
        t1 = time.perf_counter()
        sol = mpc.solve(st, traj, t, field=None)
        times.append(time.perf_counter() - t1)
        for _ in range(10):
            st = step_dynamics(st, sol.u0, 0.01, params)
        t += 0.1
        p, _, _ = traj.sample(min(t, traj.duration))
        errs.append(math.hypot(st.x - p[0], st.y - p[1]))
    rms = math.sqrt(float(np.mean(np.square(errs))))
    ok = monotone and rms < 0.05 and max(times) < 0.1
    report(
        10, "merit monotone per round; tracking RMS < 5 cm; solves < 100 ms",
        ok, f"rms {rms*100:.1f} cm, max solve {max(times)*1e3:.0f} ms",
    )


# ---------------------------------------------------------------------------
# 11. Determinism and persistence
# ---------------------------------------------------------------------------


def test_criterion_11_determinism_and_persistence(tmp_path):
    # bit-identical episode replay
    world = generate_world(4, CFG.worldgen)
    lo, hi = CFG.alpha_bounds("mpc")
    nets = SacNets(SacConfig(hidden=(16, 16)), action_scale=hi - lo, seed=9)
    r1 = run_episode(world, Mode.sac(nets, explore=True), "mpc", seed=21, config=CFG, timeout=25.0)
    nets2 = SacNets(SacConfig(hidden=(16, 16)), action_scale=hi - lo, seed=9)
    r2 = run_episode(world, Mode.sac(nets2, explore=True), "mpc", seed=21, config=CFG, timeout=25.0)
    replay_ok = np.array_equal(r1.trace, r2.trace) and r1.outcome == r2.outcome

    # replay buffer round trip
    buf_path = tmp_path / "replay.jsonl"
    buf = ReplayBuffer(capacity=1000, path=buf_path)
    for tr in r1.transitions:
        buf.append(tr)
    buf.persist()
    loaded = ReplayBuffer.load(buf_path, capacity=1000)
    round_trip_ok = len(loaded) == len(r1.transitions) and all(
        a.to_json_line() == b.to_json_line() for a, b in zip(buf.transitions(), loaded.transitions())
    )

    # interrupted vs straight-through training
    sac = SacConfig(hidden=(16, 16), batch_size=32)
    tset = TrainSettings(
        n_worlds=1, repeats_per_world=4, controller="pd",
        warmup_transitions=40, updates_per_episode_cap=10, checkpoint_every=2,
    )
    cfg = dataclasses.replace(CFG, sac=sac, train=tset)
    corridor = [generate_corridor_world(3)]
    train(cfg, tmp_path / "full", worlds=corridor, episodes=4)
    train(cfg, tmp_path / "split", worlds=corridor, episodes=2)
    train(cfg, tmp_path / "split", worlds=corridor, episodes=4, resume=True)
    buf_a = ReplayBuffer.load(tmp_path / "full" / "replay.jsonl", 10_000)
    buf_b = ReplayBuffer.load(tmp_path / "split" / "replay.jsonl", 10_000)
    resume_ok = len(buf_a) == len(buf_b) and all(
        a.to_json_line() == b.to_json_line() for a, b in zip(buf_a.transitions(), buf_b.transitions())
    )
    nets_a, _, _ = SacNets.load(tmp_path / "full" / "policy.ckpt", sac)
    nets_b, _, _ = SacNets.load(tmp_path / "split" / "policy.ckpt", sac)
    resume_ok = resume_ok and np.array_equal(nets_a.actor.flat(), nets_b.actor.flat())

    ok = replay_ok and round_trip_ok and resume_ok
    report(
        11, "bit-identical replays; buffer round trip; resume reproduces training",
        ok, f"replay={replay_ok}, round_trip={round_trip_ok}, resume={resume_ok}",
    )
