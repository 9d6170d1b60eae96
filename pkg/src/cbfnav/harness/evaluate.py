"""Benchmark evaluation: full cross of modes x controllers x worlds x trials
with deterministic seeds, success-rate reporting, and per-world difference
tables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import Config
from ..world import WorldSpec
from .episode import Mode, run_episode


@dataclass
class TrialRecord:
    mode: str
    controller: str
    world_id: int
    trial: int
    outcome: str
    duration: float
    min_d_o: float


@dataclass
class BenchmarkReport:
    trials: list[TrialRecord] = field(default_factory=list)

    def success_rate(self, mode: str, controller: str) -> float:
        rows = [r for r in self.trials if r.mode == mode and r.controller == controller]
        if not rows:
            raise ValueError(f"no trials for {mode}/{controller}")
        return sum(r.outcome == "goal" for r in rows) / len(rows)

    def per_world(self, mode: str, controller: str) -> dict[int, float]:
        out: dict[int, list] = {}
        for r in self.trials:
            if r.mode == mode and r.controller == controller:
                out.setdefault(r.world_id, []).append(r.outcome == "goal")
        return {w: sum(v) / len(v) for w, v in sorted(out.items())}

    def per_world_difference(self, mode_a: str, mode_b: str, controller: str) -> dict[int, float]:
        """Per-world success difference mode_a - mode_b (analogue of the
        per-world improvement table)."""
        a = self.per_world(mode_a, controller)
        b = self.per_world(mode_b, controller)
        return {w: a[w] - b[w] for w in a if w in b}

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("mode,controller,world,trial,outcome,duration,min_d_o\n")
            for r in self.trials:
                f.write(
                    f"{r.mode},{r.controller},{r.world_id},{r.trial},{r.outcome},"
                    f"{r.duration:.3f},{r.min_d_o:.4f}\n"
                )

    def to_json(self, path) -> None:
        combos = sorted({(r.mode, r.controller) for r in self.trials})
        doc = {
            "success_rates": {
                f"{m}/{c}": self.success_rate(m, c) for m, c in combos
            },
            "per_world": {
                f"{m}/{c}": self.per_world(m, c) for m, c in combos
            },
            "n_trials": len(self.trials),
        }
        # per-world improvement of the adaptive mode over each fixed-alpha row
        diffs = {}
        for m, c in combos:
            if m != "sac":
                continue
            for m2, c2 in combos:
                if c2 == c and m2.startswith("const_alpha"):
                    diffs[f"sac-{m2}/{c}"] = self.per_world_difference("sac", m2, c)
        if diffs:
            doc["per_world_difference"] = diffs
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)


def trial_start(world: WorldSpec, trial: int, base_seed: int) -> tuple[float, float, float]:
    """Deterministic per-trial start-pose jitter (kept well inside the
    generator's start keepout)."""
    rng = np.random.default_rng(np.random.SeedSequence([base_seed, world.seed, trial]))
    dx, dy = rng.uniform(-0.08, 0.08, size=2)
    dth = rng.uniform(-0.15, 0.15)
    return (world.start[0] + dx, world.start[1] + dy, world.start[2] + dth)


def evaluate(
    worlds: list[WorldSpec],
    modes: list[Mode],
    controllers: list[str],
    trials_per_world: int,
    config: Config,
    base_seed: int = 1000,
    timeout: float | None = None,
) -> BenchmarkReport:
    report = BenchmarkReport()
    for controller in controllers:
        for mode in modes:
            for world in worlds:
                for k in range(trials_per_world):
                    res = run_episode(
                        world,
                        mode,
                        controller,
                        seed=int(np.random.SeedSequence([base_seed, world.seed, k]).generate_state(1)[0]),
                        config=config,
                        timeout=timeout,
                        start_override=trial_start(world, k, base_seed),
                    )
                    report.trials.append(
                        TrialRecord(
                            mode=mode.label(),
                            controller=controller,
                            world_id=world.seed,
                            trial=k,
                            outcome=res.outcome,
                            duration=res.duration,
                            min_d_o=res.min_d_o,
                        )
                    )
    return report


def adaptation_correlation(alpha_trace: np.ndarray, d_trace: np.ndarray) -> float:
    """Pearson correlation between clearance and the barrier parameter across
    control cycles of one episode."""
    a = alpha_trace[:, 1]
    d = d_trace
    if a.size < 3 or float(np.std(a)) < 1e-12 or float(np.std(d)) < 1e-12:
        return 0.0
    return float(np.corrcoef(d, a)[0, 1])
