from __future__ import annotations

import dataclasses
import json
import math
import os

import numpy as np
import pytest

from cbfnav.config import Config, TrainSettings
from cbfnav.harness import (
    Mode,
    adaptation_correlation,
    detect_deadlock,
    episode_seed,
    evaluate,
    run_episode,
    train,
)
from cbfnav.rl.replay import ReplayBuffer
from cbfnav.rl.sac import SacConfig, SacNets
from cbfnav.world import WorldSpec, generate_corridor_world, generate_world

CFG = Config()
EMPTY = WorldSpec(77, (0.0, 0.0, 6.0, 6.0), 0.05, (), (0.8, 0.8, 0.785), (5.2, 5.2))


def small_cfg(**train_overrides) -> Config:
    sac = SacConfig(hidden=(16, 16), batch_size=32)
    train_settings = TrainSettings(
        n_worlds=1,
        repeats_per_world=4,
        controller="pd",
        warmup_transitions=40,
        updates_per_episode_cap=10,
        checkpoint_every=2,
        **train_overrides,
    )
    return dataclasses.replace(CFG, sac=sac, train=train_settings)


def fresh_nets(controller: str = "mpc", seed: int = 0) -> SacNets:
    lo, hi = CFG.alpha_bounds(controller)
    return SacNets(SacConfig(hidden=(16, 16)), action_scale=(hi - lo), seed=seed)


# ---------------------------------------------------------------------------
# deadlock detector
# ---------------------------------------------------------------------------


def test_deadlock_false_while_tracking():
    ts = [0.1 * i for i in range(150)]
    rhos = [min(1.0, t / 12.0) for t in ts]
    xs = [0.5 * t for t in ts]
    ys = [0.0 for _ in ts]
    assert not detect_deadlock(ts, rhos, xs, ys, 10.0, 0.02, 0.1)


def test_deadlock_pinned_robot():
    ts = [0.1 * i for i in range(150)]
    rhos = [0.2 for _ in ts]
    xs = [1.0 for _ in ts]
    ys = [2.0 for _ in ts]
    assert detect_deadlock(ts, rhos, xs, ys, 10.0, 0.02, 0.1)


def test_deadlock_oscillating_in_place():
    ts = [0.1 * i for i in range(130)]
    xs = [1.0 + 0.05 * math.sin(2.0 * t) for t in ts]
    ys = [2.0 + 0.05 * math.cos(2.0 * t) for t in ts]
    rhos = [0.3 + 0.005 * math.sin(t) for t in ts]
    assert detect_deadlock(ts, rhos, xs, ys, 10.0, 0.02, 0.15)


def test_deadlock_needs_full_window():
    ts = [0.1 * i for i in range(50)]  # only 5 s of history
    assert not detect_deadlock(ts, [0.0] * 50, [0.0] * 50, [0.0] * 50, 10.0, 0.02, 0.1)


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("controller", ["pd", "mpc"])
@pytest.mark.parametrize("kind", ["no_filter", "const_alpha", "sac"])
def test_empty_world_reaches_goal(controller, kind):
    if kind == "no_filter":
        mode = Mode.no_filter()
    elif kind == "const_alpha":
        mode = Mode.const_alpha(CFG.alpha_bounds(controller)[1])
    else:
        mode = Mode.sac(fresh_nets(controller), explore=False)
    res = run_episode(EMPTY, mode, controller, seed=0, config=CFG, timeout=40.0)
    assert res.outcome == "goal"
    assert res.min_d_o > CFG.vehicle.r_v


def test_episode_determinism_bit_exact():
    w = generate_world(1, CFG.worldgen)
    mode = Mode.sac(fresh_nets("mpc", seed=5), explore=True)
    r1 = run_episode(w, mode, "mpc", seed=11, config=CFG, timeout=20.0)
    r2 = run_episode(w, Mode.sac(fresh_nets("mpc", seed=5), explore=True), "mpc", seed=11, config=CFG, timeout=20.0)
    assert r1.outcome == r2.outcome
    assert np.array_equal(r1.trace, r2.trace)
    assert len(r1.transitions) == len(r2.transitions)
    for a, b in zip(r1.transitions, r2.transitions):
        assert np.array_equal(a.s, b.s) and a.reward == b.reward and a.action == b.action


def test_trace_covers_every_cycle_and_csv(tmp_path):
    res = run_episode(EMPTY, Mode.const_alpha(0.5), "mpc", seed=0, config=CFG, timeout=30.0)
    n = len(res.trace)
    assert n > 10
    assert res.alpha_trace.shape == (n, 2)
    assert res.h_trace.shape == (n, 2)
    # 10 Hz cycles: time column advances by the control period
    dt = np.diff(res.trace[:, 0])
    assert np.allclose(dt, 0.1, atol=1e-9)
    out = tmp_path / "trace.csv"
    res.trace_to_csv(out)
    header = out.read_text().splitlines()[0]
    assert header == "t,x,y,theta,v,a,omega,alpha,h,d_o,rho"


def test_safety_bookkeeping_non_collision_episodes():
    for seed in range(2):
        w = generate_world(seed, CFG.worldgen)
        res = run_episode(w, Mode.const_alpha(0.5), "mpc", seed=3, config=CFG, timeout=60.0)
        if res.outcome != "collision":
            assert res.min_d_o > CFG.vehicle.r_v


def test_corridor_invariance_records_and_bound():
    w = generate_corridor_world(0)
    res = run_episode(w, Mode.const_alpha(4.0), "pd", seed=0, config=CFG, timeout=40.0)
    assert res.outcome == "goal"
    assert len(res.invariance) == len(res.trace)
    alpha_dt = 4.0 * CFG.harness.control_dt
    for h_before, h_after, alpha, status in res.invariance:
        assert alpha == 4.0
        if status != "infeasible":
            assert h_after >= (1.0 - alpha_dt) * h_before - 0.02


def test_sac_mode_collects_transitions_with_terminal_done():
    w = generate_corridor_world(1)
    mode = Mode.sac(fresh_nets("pd"), explore=True)
    res = run_episode(w, mode, "pd", seed=2, config=CFG, timeout=40.0)
    assert len(res.transitions) == len(res.trace)
    dones = [tr.done for tr in res.transitions]
    if res.outcome in ("goal", "collision"):
        assert dones[-1]
    assert not any(dones[:-1])
    assert all(np.isfinite(tr.reward) for tr in res.transitions)
    assert all(abs(tr.action) <= (8.0 - 1.5) + 1e-9 for tr in res.transitions)


def test_planner_failure_does_not_abort_episode():
    # robot sealed in a pocket: planner cannot reach the goal, episode must
    # still run to a non-goal outcome without raising
    from cbfnav.world import Box

    spec = WorldSpec(
        5,
        (0.0, 0.0, 4.0, 4.0),
        0.05,
        (
            Box((1.2, 1.0), (0.2, 2.2)),
            Box((0.55, 2.0), (1.5, 0.2)),
            Box((0.55, 0.0), (1.5, 0.2)),
            Box((0.0, 1.0), (0.2, 2.2)),
        ),
        (0.6, 1.0, 0.0),
        (3.5, 1.0),
    )
    res = run_episode(spec, Mode.const_alpha(4.0), "pd", seed=0, config=CFG, timeout=15.0)
    assert res.outcome in ("deadlock", "timeout")
    assert res.planner_failures > 0


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_train_zero_episodes_checkpoint_equals_init(tmp_path):
    cfg = small_cfg()
    result = train(cfg, tmp_path / "run", episodes=0)
    nets, header, _ = SacNets.load(result.checkpoint_path, cfg.sac)
    lo, hi = cfg.alpha_bounds(cfg.train.controller)
    fresh = SacNets(cfg.sac, action_scale=(hi - lo) / cfg.harness.alpha_traverse_time, seed=cfg.train.master_seed)
    assert np.array_equal(nets.actor.flat(), fresh.actor.flat())
    assert header["step_count"] == 0


def test_train_runs_and_logs_curve(tmp_path):
    cfg = small_cfg()
    worlds = [generate_corridor_world(3)]
    result = train(cfg, tmp_path / "run", worlds=worlds, episodes=2)
    assert os.path.exists(result.checkpoint_path)
    lines = open(result.curve_path).read().strip().splitlines()
    assert lines[0].startswith("episode,world,outcome")
    assert len(lines) == 3
    assert len(result.returns) == 2


def test_train_interrupt_resume_reproduces_buffer_and_nets(tmp_path):
    worlds = [generate_corridor_world(3)]
    cfg = small_cfg()

    full = train(cfg, tmp_path / "a", worlds=worlds, episodes=4)
    part = train(cfg, tmp_path / "b", worlds=worlds, episodes=2)
    resumed = train(cfg, tmp_path / "b", worlds=worlds, episodes=4, resume=True)

    buf_a = ReplayBuffer.load(tmp_path / "a" / "replay.jsonl", 10_000)
    buf_b = ReplayBuffer.load(tmp_path / "b" / "replay.jsonl", 10_000)
    assert len(buf_a) == len(buf_b)
    for ta, tb in zip(buf_a.transitions(), buf_b.transitions()):
        assert ta.to_json_line() == tb.to_json_line()

    nets_a, _, _ = SacNets.load(full.checkpoint_path, cfg.sac)
    nets_b, _, _ = SacNets.load(resumed.checkpoint_path, cfg.sac)
    assert np.array_equal(nets_a.actor.flat(), nets_b.actor.flat())
    assert np.array_equal(nets_a.q1.flat(), nets_b.q1.flat())
    assert nets_a.beta == nets_b.beta
    _ = part


def test_episode_seed_stable():
    assert episode_seed(0, 5) == episode_seed(0, 5)
    assert episode_seed(0, 5) != episode_seed(0, 6)
    assert episode_seed(1, 5) != episode_seed(0, 5)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def test_evaluate_empty_world_benchmark_all_success(tmp_path):
    worlds = [EMPTY]
    modes = [Mode.no_filter(), Mode.const_alpha(0.5)]
    report = evaluate(worlds, modes, ["mpc"], trials_per_world=2, config=CFG, timeout=40.0)
    assert report.success_rate("no_filter", "mpc") == 1.0
    assert report.success_rate("const_alpha(0.5)", "mpc") == 1.0
    report.to_csv(tmp_path / "r.csv")
    report.to_json(tmp_path / "r.json")
    doc = json.load(open(tmp_path / "r.json"))
    assert doc["success_rates"]["no_filter/mpc"] == 1.0
    diff = report.per_world_difference("const_alpha(0.5)", "no_filter", "mpc")
    assert diff == {77: 0.0}


def test_adaptation_correlation_helper():
    t = np.arange(50)
    alpha = np.column_stack([t, np.linspace(0.1, 0.5, 50)])
    d = np.linspace(0.2, 2.0, 50)
    assert adaptation_correlation(alpha, d) > 0.99
    assert adaptation_correlation(alpha, np.ones(50)) == 0.0


# ---------------------------------------------------------------------------
# cli
# ---------------------------------------------------------------------------


def test_cli_worldgen_rollout_benchqp(tmp_path, capsys):
    from cbfnav.harness.cli import main

    out = tmp_path / "worlds"
    assert main(["worldgen", "--count", "2", "--seed", "3", "--out", str(out)]) == 0
    files = sorted(os.listdir(out))
    assert len(files) == 2
    world_path = out / files[0]

    trace = tmp_path / "trace.csv"
    code = main([
        "rollout", "--world", str(world_path), "--mode", "const_alpha(0.5)",
        "--controller", "pd", "--trace-out", str(trace),
    ])
    assert code == 0
    assert trace.exists()

    assert main(["bench-qp", "--n", "2000"]) == 0
    assert main(["dump-config", "--out", str(tmp_path / "cfg.json")]) == 0
    cfg = Config.load(tmp_path / "cfg.json")
    assert cfg.harness.goal_radius == CFG.harness.goal_radius
