"""Training loop: a block curriculum over generated worlds (each navigated
several times before moving on), gradient updates after every terminal state,
durable replay log, and checkpoints that allow bit-exact resumption."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..config import Config
from ..rl.replay import ReplayBuffer
from ..rl.sac import NonFiniteLoss, SacNets, SacOptimizer, gradient_step
from ..world import WorldSpec, generate_world
from .episode import Mode, run_episode


@dataclass
class TrainResult:
    checkpoint_path: str
    curve_path: str
    episodes: int
    returns: list


def episode_seed(master_seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([master_seed, episode]).generate_state(1)[0])


def training_worlds(cfg: Config) -> list[WorldSpec]:
    return [
        generate_world(cfg.train.world_seed_base + i, cfg.worldgen)
        for i in range(cfg.train.n_worlds)
    ]


def _checkpoint(nets: SacNets, opt: SacOptimizer, trainer_rng, episode: int, path) -> None:
    nets.save(
        path,
        extra_header={
            "episode": episode,
            "trainer_rng": trainer_rng.bit_generator.state,
        },
        extra_blobs=opt.blobs(),
    )


def _updates_after_episode(
    nets: SacNets, opt: SacOptimizer, buffer: ReplayBuffer, trainer_rng, cfg: Config, n_steps: int
) -> list[dict]:
    out = []
    if len(buffer) < cfg.train.warmup_transitions:
        return out
    for _ in range(n_steps):
        batch = buffer.sample(cfg.sac.batch_size, trainer_rng)
        batch["a_norm"] = np.clip(batch.pop("a") / nets.action_scale, -1.0, 1.0)
        batch["s"] = _normalize_batch(batch["s"], nets, cfg)
        batch["s2"] = _normalize_batch(batch["s2"], nets, cfg)
        out.append(gradient_step(nets, batch, opt, trainer_rng))
    return out


def _normalize_batch(raw: np.ndarray, nets: SacNets, cfg: Config) -> np.ndarray:
    from ..rl.adaptation import StateScales

    bounds = cfg.alpha_bounds(cfg.train.controller)
    scales = StateScales(
        v=cfg.vehicle.v_max, a=cfg.vehicle.a_max, omega=cfg.vehicle.omega_max,
        d_o=cfg.reward.d_cap, alpha=bounds[1],
    )
    return raw / scales.as_array()[None, :]


def train(
    cfg: Config,
    out_dir,
    worlds: list[WorldSpec] | None = None,
    episodes: int | None = None,
    resume: bool = False,
) -> TrainResult:
    """Run (or resume) a training session; returns checkpoint and curve paths.

    Episode i uses world i // repeats (block curriculum); after each terminal
    state the policy takes up to `updates_per_episode_cap` gradient steps (one
    per collected transition). A non-finite loss rolls parameters back to the
    last checkpoint and reseeds the trainer stream."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "policy.ckpt")
    curve_path = os.path.join(out_dir, "training_curve.csv")
    replay_path = os.path.join(out_dir, "replay.jsonl")

    tcfg = cfg.train
    worlds = worlds if worlds is not None else training_worlds(cfg)
    total = (
        episodes
        if episodes is not None
        else tcfg.n_worlds * tcfg.repeats_per_world * tcfg.curriculum_passes
    )
    bounds = cfg.alpha_bounds(tcfg.controller)
    rate_max = (bounds[1] - bounds[0]) / cfg.harness.alpha_traverse_time

    start_episode = 0
    seed_bump = 0
    if resume and os.path.exists(ckpt_path):
        nets, header, blobs = SacNets.load(ckpt_path, cfg.sac)
        opt = SacOptimizer.for_nets(nets)
        opt.restore_blobs(blobs)
        trainer_rng = np.random.default_rng(tcfg.master_seed + 1)
        trainer_rng.bit_generator.state = header["trainer_rng"]
        start_episode = header["episode"] + 1
        buffer = ReplayBuffer.load(replay_path, tcfg.buffer_capacity)
        buffer.drop_after_episode(header["episode"])
        buffer.persist()
        curve_mode = "a"
    else:
        nets = SacNets(cfg.sac, action_scale=rate_max, seed=tcfg.master_seed)
        opt = SacOptimizer.for_nets(nets)
        trainer_rng = np.random.default_rng(tcfg.master_seed + 1)
        if os.path.exists(replay_path):
            os.remove(replay_path)
        buffer = ReplayBuffer(tcfg.buffer_capacity, path=replay_path)
        _checkpoint(nets, opt, trainer_rng, -1, ckpt_path)
        curve_mode = "w"

    returns = []
    with open(curve_path, curve_mode) as curve:
        if curve_mode == "w":
            curve.write("episode,world,outcome,steps,return,alpha_mean\n")
        for ep in range(start_episode, total):
            world = worlds[(ep // tcfg.repeats_per_world) % len(worlds)]
            res = run_episode(
                world,
                Mode.sac(nets, explore=True),
                tcfg.controller,
                seed=episode_seed(tcfg.master_seed + seed_bump, ep),
                config=cfg,
                episode_id=ep,
                timeout=tcfg.episode_timeout,
            )
            for tr in res.transitions:
                buffer.append(tr)
            n_upd = min(len(res.transitions), tcfg.updates_per_episode_cap)
            try:
                _updates_after_episode(nets, opt, buffer, trainer_rng, cfg, n_upd)
            except NonFiniteLoss:
                nets, header, blobs = SacNets.load(ckpt_path, cfg.sac)
                opt = SacOptimizer.for_nets(nets)
                opt.restore_blobs(blobs)
                seed_bump += 1
                trainer_rng = np.random.default_rng(tcfg.master_seed + 1 + seed_bump)
                curve.write(f"{ep},{world.seed},rollback,0,nan,nan\n")
                continue
            returns.append(res.episode_return)
            alpha_mean = float(res.alpha_trace[:, 1].mean()) if res.alpha_trace.size else float("nan")
            curve.write(
                f"{ep},{world.seed},{res.outcome},{len(res.transitions)},"
                f"{res.episode_return:.6f},{alpha_mean:.6f}\n"
            )
            curve.flush()
            if (ep + 1) % tcfg.checkpoint_every == 0 or ep == total - 1:
                _checkpoint(nets, opt, trainer_rng, ep, ckpt_path)
                buffer.persist()
    _checkpoint(nets, opt, trainer_rng, total - 1, ckpt_path)
    buffer.persist()
    buffer.close()
    return TrainResult(ckpt_path, curve_path, total - start_episode, returns)
