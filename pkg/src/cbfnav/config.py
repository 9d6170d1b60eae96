"""Central configuration: one JSON document covering every tunable constant.

Each section maps onto the dataclass consumed by the corresponding module;
`Config.from_json` merges a partial document over the defaults, so a config
file only needs the keys it changes."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .controllers import MpcConfig, PdGains
from .planner import PlannerConfig
from .rl.adaptation import RewardWeights, StateScales
from .rl.sac import SacConfig
from .vehicle import SensorParams, VehicleParams
from .world import WorldGenParams


@dataclass(frozen=True)
class HarnessConfig:
    control_dt: float = 0.1  # controller period (10 Hz)
    physics_substeps: int = 10  # RK4 steps per control period
    replan_period: float = 1.0
    timeout: float = 120.0  # simulated seconds per episode
    goal_radius: float = 0.3
    deadlock_window: float = 10.0
    deadlock_rho_eps: float = 0.02
    deadlock_disp_eps: float = 0.1
    alpha_bounds_mpc: tuple[float, float] = (0.025, 0.5)
    alpha_bounds_pd: tuple[float, float] = (1.5, 8.0)
    alpha_traverse_time: float = 1.0  # seconds for alpha to sweep its range


@dataclass(frozen=True)
class TrainSettings:
    master_seed: int = 0
    n_worlds: int = 10
    world_seed_base: int = 0
    repeats_per_world: int = 5
    curriculum_passes: int = 2
    controller: str = "mpc"
    episode_timeout: float = 45.0  # training episodes get a tighter cap
    buffer_capacity: int = 100_000
    warmup_transitions: int = 400
    updates_per_episode_cap: int = 60
    checkpoint_every: int = 10
    refresh_after_transitions: int = 0  # periodic-retrain hook; 0 disables


@dataclass(frozen=True)
class Config:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    worldgen: WorldGenParams = field(default_factory=WorldGenParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    pd: PdGains = field(default_factory=PdGains)
    sac: SacConfig = field(default_factory=SacConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    scales: StateScales = field(default_factory=StateScales)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    train: TrainSettings = field(default_factory=TrainSettings)

    def alpha_bounds(self, controller: str) -> tuple[float, float]:
        if controller == "mpc":
            return self.harness.alpha_bounds_mpc
        if controller == "pd":
            return self.harness.alpha_bounds_pd
        raise ValueError(f"unknown controller {controller!r}")

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(dataclasses.asdict(self), indent=indent, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "Config":
        doc = json.loads(text)
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as f:
            return cls.from_json(f.read())

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        sections = {}
        for f_ in dataclasses.fields(cls):
            sub = doc.get(f_.name, {})
            sections[f_.name] = _build(f_.default_factory(), sub)  # type: ignore[misc]
        return cls(**sections)


def _build(default, overrides: dict):
    """Rebuild a (possibly nested) frozen dataclass with JSON overrides,
    coercing lists back to tuples where the default is a tuple."""
    if not overrides:
        return default
    kwargs = {}
    for f_ in dataclasses.fields(default):
        cur = getattr(default, f_.name)
        if f_.name in overrides:
            val = overrides[f_.name]
            if dataclasses.is_dataclass(cur):
                kwargs[f_.name] = _build(cur, val)
            elif isinstance(cur, tuple):
                kwargs[f_.name] = tuple(val)
            else:
                kwargs[f_.name] = type(cur)(val) if cur is not None else val
        elif dataclasses.is_dataclass(cur):
            kwargs[f_.name] = cur
        else:
            kwargs[f_.name] = cur
    return type(default)(**kwargs)


_ = SensorParams  # nested under VehicleParams; re-exported for config files
