"""Runtime adaptation of the barrier constraint parameter: the bounded
integrator it flows through, the state embedding the policy sees, and the
step reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..vehicle import ControlInput, VehicleState


@dataclass
class AlphaAdapter:
    """Bounded integrator for the constraint parameter.

    The policy emits a rate; the parameter is Euler-integrated and hard
    clamped to [lo, hi]. The pre-clamp value is kept so the reward can
    penalize proposals that leave the bounds. Starts at the upper bound to
    avoid conservatism before the policy reacts."""

    lo: float
    hi: float
    rate_max: float
    alpha: float = None  # type: ignore[assignment]
    alpha_pre: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if not (0.0 < self.lo < self.hi):
            raise ValueError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")
        if self.alpha is None:
            self.alpha = self.hi
        if self.alpha_pre is None:
            self.alpha_pre = self.alpha

    @classmethod
    def for_bounds(cls, lo: float, hi: float, traverse_time: float = 1.0) -> "AlphaAdapter":
        """Rate limit sized so the parameter can sweep its full range in
        `traverse_time` seconds."""
        return cls(lo=lo, hi=hi, rate_max=(hi - lo) / traverse_time)

    def update(self, rate: float, dt: float) -> float:
        rate = float(np.clip(rate, -self.rate_max, self.rate_max))
        self.alpha_pre = self.alpha + rate * dt
        self.alpha = float(np.clip(self.alpha_pre, self.lo, self.hi))
        return self.alpha

    def reset(self) -> None:
        self.alpha = self.hi
        self.alpha_pre = self.hi


@dataclass(frozen=True)
class StateScales:
    """Fixed normalization constants taking raw embedding components to
    roughly [-1, 1] before they enter the networks."""

    theta: float = np.pi
    v: float = 2.0
    a: float = 2.0
    omega: float = 2.0
    d_o: float = 2.0
    gamma: float = np.pi
    rho: float = 1.0
    alpha: float = 1.0  # set to the upper bound in use
    h: float = 5.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.theta, self.v, self.a, self.omega, self.d_o, self.gamma, self.rho, self.alpha, self.h]
        )


def embed_state(
    state: VehicleState,
    applied_u: ControlInput,
    d_o: float,
    gamma_d: float,
    rho: float,
    alpha: float,
    h: float,
) -> np.ndarray:
    """Raw 9-component policy state:
    [theta, v, a, omega, d_o, gamma_d, rho, alpha, h]."""
    return np.array(
        [state.theta, state.v, applied_u.a, applied_u.omega, d_o, gamma_d, rho, alpha, h],
        dtype=np.float64,
    )


def normalize_state(raw: np.ndarray, scales: StateScales) -> np.ndarray:
    return raw / scales.as_array()


@dataclass(frozen=True)
class RewardWeights:
    distance: float = 0.3  # on min(d_o, d_cap)
    progress: float = 2.0  # on the completed trajectory fraction
    rate: float = 0.1  # on the squared parameter rate
    bounds: float = 10.0  # on out-of-bounds parameter proposals
    violation: float = 10.0  # on negative constraint residuals
    collision: float = 100.0  # flat penalty on collision steps
    d_cap: float = 2.0  # distance term saturates here
    # Shaping terms: with only positive per-step terms, long meandering
    # episodes accumulate more return than fast goal-reaching ones, so the
    # policy learns to stall. The per-step cost makes time expensive and the
    # terminal bonus keeps a slow success strictly better than a deadlock.
    time_penalty: float = 1.5
    goal_bonus: float = 100.0


def compute_reward(
    *,
    d_o: float,
    rho: float,
    alpha_rate: float,
    alpha_pre: float,
    alpha_lo: float,
    alpha_hi: float,
    constraint_residual: float,
    collided: bool,
    weights: RewardWeights,
    at_goal: bool = False,
) -> float:
    """Step reward: clearance and progress, minus rate/bounds/violation
    penalties, a per-step time cost, and terminal collision/goal terms."""
    bounds_pen = max(0.0, alpha_lo - alpha_pre) ** 2 + max(0.0, alpha_pre - alpha_hi) ** 2
    violation_pen = max(0.0, -constraint_residual)
    r = (
        weights.distance * min(d_o, weights.d_cap)
        + weights.progress * rho
        - weights.rate * alpha_rate**2
        - weights.bounds * bounds_pen
        - weights.violation * violation_pen
        - weights.time_penalty
    )
    if collided:
        r -= weights.collision
    if at_goal and not collided:
        r += weights.goal_bonus
    return float(r)
