"""Command-line entry points: world generation, training, benchmark
evaluation, single rollouts with trace capture, and the filter latency suite."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ..config import Config
from ..rl.sac import SacNets
from ..safety_filter import solve_time_benchmark
from ..world import WorldSpec, generate_world
from .episode import Mode, run_episode
from .evaluate import evaluate
from .train import train, training_worlds


def _load_config(path: str | None) -> Config:
    return Config.load(path) if path else Config()


def _parse_mode(label: str, checkpoint: str | None, cfg: Config, controller: str) -> Mode:
    if label == "no_filter":
        return Mode.no_filter()
    if label.startswith("const_alpha"):
        if "(" in label:
            return Mode.const_alpha(float(label.split("(")[1].rstrip(")")))
        return Mode.const_alpha(cfg.alpha_bounds(controller)[1])
    if label == "sac":
        if not checkpoint:
            raise SystemExit("sac mode needs --checkpoint")
        nets, _, _ = SacNets.load(checkpoint, cfg.sac)
        return Mode.sac(nets, explore=False)
    raise SystemExit(f"unknown mode {label!r}")


def cmd_worldgen(args) -> int:
    cfg = _load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        spec = generate_world(args.seed + i, cfg.worldgen)
        path = os.path.join(args.out, f"world_{spec.seed:04d}.json")
        spec.save(path)
        print(f"wrote {path} ({len(spec.obstacles)} obstacles)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    result = train(cfg, args.out, resume=args.resume)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"curve: {result.curve_path}")
    if result.returns:
        print(f"episodes: {result.episodes}, last return: {result.returns[-1]:.2f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    if args.worlds:
        worlds = [WorldSpec.load(p) for p in args.worlds]
    else:
        worlds = training_worlds(cfg)
    controllers = args.controllers.split(",")
    report = None
    for controller in controllers:
        modes = [_parse_mode(m, args.checkpoint, cfg, controller) for m in args.modes.split(",")]
        part = evaluate(worlds, modes, [controller], args.trials, cfg)
        if report is None:
            report = part
        else:
            report.trials.extend(part.trials)
    base, _ = os.path.splitext(args.report)
    report.to_csv(base + ".csv")
    report.to_json(base + ".json")
    for controller in controllers:
        for m in args.modes.split(","):
            label = m if m != "const_alpha" else f"const_alpha({cfg.alpha_bounds(controller)[1]})"
            try:
                rate = report.success_rate(label, controller)
                print(f"{controller}/{label}: success {rate:.2f}")
            except ValueError:
                pass
    print(f"report: {base}.csv / {base}.json")
    return 0


def cmd_rollout(args) -> int:
    cfg = _load_config(args.config)
    if os.path.exists(args.world):
        world = WorldSpec.load(args.world)
    else:
        world = generate_world(int(args.world), cfg.worldgen)
    mode = _parse_mode(args.mode, args.checkpoint, cfg, args.controller)
    res = run_episode(
        world, mode, args.controller, seed=args.seed, config=cfg,
        mpc_diag_path=args.diag_out,
    )
    print(f"outcome: {res.outcome} after {res.duration:.1f} s, min clearance {res.min_d_o:.3f} m")
    if args.trace_out:
        res.trace_to_csv(args.trace_out)
        print(f"trace: {args.trace_out}")
    if args.diag_out and args.controller == "mpc":
        print(f"solver diagnostics: {args.diag_out}")
    return 0


def cmd_bench_qp(args) -> int:
    stats = solve_time_benchmark(n=args.n, seed=args.seed, csv_path=args.csv)
    print(json.dumps(stats, indent=2))
    ok = stats["p99"] < 1e-3
    print(f"p99 {'<' if ok else '>='} 1 ms")
    return 0 if ok else 1


def cmd_dump_config(args) -> int:
    cfg = _load_config(args.config)
    text = cfg.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbfnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("worldgen", help="generate benchmark worlds as JSON files")
    q.add_argument("--count", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--config")
    q.set_defaults(fn=cmd_worldgen)

    q = sub.add_parser("train", help="train the adaptation policy")
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    q.add_argument("--resume", action="store_true")
    q.set_defaults(fn=cmd_train)

    q = sub.add_parser("eval", help="run the benchmark cross of modes/controllers/worlds")
    q.add_argument("--worlds", nargs="*", help="world JSON files (default: generated set)")
    q.add_argument("--modes", default="no_filter,const_alpha,sac")
    q.add_argument("--controllers", default="mpc")
    q.add_argument("--trials", type=int, default=5)
    q.add_argument("--checkpoint")
    q.add_argument("--report", default="benchmark")
    q.add_argument("--config")
    q.set_defaults(fn=cmd_eval)

    q = sub.add_parser("rollout", help="run one episode and dump its trace")
    q.add_argument("--world", required=True, help="world JSON path or generator seed")
    q.add_argument("--mode", default="const_alpha")
    q.add_argument("--controller", default="mpc")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--checkpoint")
    q.add_argument("--trace-out")
    q.add_argument("--diag-out", help="MPC per-cycle diagnostics (JSON lines)")
    q.add_argument("--config")
    q.set_defaults(fn=cmd_rollout)

    q = sub.add_parser("bench-qp", help="filter solve-latency suite")
    q.add_argument("--n", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--csv")
    q.set_defaults(fn=cmd_bench_qp)

    q = sub.add_parser("dump-config", help="print or write the full default config")
    q.add_argument("--config")
    q.add_argument("--out")
    q.set_defaults(fn=cmd_dump_config)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
