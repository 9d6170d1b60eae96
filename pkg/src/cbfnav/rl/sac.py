"""Soft actor-critic core: squashed-Gaussian policy over the barrier-parameter
rate, twin critics with polyak-averaged targets, and an auto-tuned entropy
coefficient, all with hand-derived gradients in float64.

Conventions: states entering the networks are already normalized; actions are
normalized to [-1, 1] (tanh output), scaled by `action_scale` only at the
environment boundary. log-prob values refer to the scaled action density."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nets import AdamState, Mlp, load_checkpoint, save_checkpoint, sigmoid

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple[int, int] = (128, 128)
    lr: float = 3e-4
    gamma: float = 0.995
    tau: float = 0.005
    batch_size: int = 256
    entropy_target: float = -1.0  # one action dimension
    init_beta: float = 0.2
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    state_dim: int = 9


class SacNets:
    """Actor, twin critics, their targets, and the entropy coefficient.

    All parameters are flat float64 vectors underneath; initialization is
    deterministic in the seed."""

    def __init__(self, cfg: SacConfig, action_scale: float, seed: int):
        self.cfg = cfg
        self.action_scale = float(action_scale)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        h1, h2 = cfg.hidden
        sd = cfg.state_dim
        # small-scale actor head: the initial policy stays near zero rate,
        # which keeps the barrier parameter at its start value until trained
        self.actor = Mlp.init((sd, h1, h2, 2), rng, out_scale=0.01)
        self.q1 = Mlp.init((sd + 1, h1, h2, 1), rng)
        self.q2 = Mlp.init((sd + 1, h1, h2, 1), rng)
        self.q1_targ = self.q1.copy()
        self.q2_targ = self.q2.copy()
        self.log_beta = math.log(cfg.init_beta)
        self.step_count = 0

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)

    # ---- actor distribution ---------------------------------------------------

    def actor_forward(self, s: np.ndarray, cache: list | None = None):
        out = self.actor.forward(s, cache)
        mean = out[:, 0]
        log_std = np.clip(out[:, 1], self.cfg.log_std_min, self.cfg.log_std_max)
        return mean, log_std, out[:, 1]

    def policy_sample(self, s: np.ndarray, noise: np.ndarray):
        """Reparameterized squashed sample for normalized states s (B, d).

        Returns (a_norm, log_prob, aux) where log_prob is the density of the
        scaled action and aux carries what backprop needs."""
        mean, log_std, _ = self.actor_forward(s)
        std = np.exp(log_std)
        z = mean + std * noise
        t = np.tanh(z)
        log1mt2 = 2.0 * (_LOG_2 - z - np.log1p(np.exp(-2.0 * z)))
        log_prob = (
            -0.5 * noise**2 - log_std - 0.5 * _LOG_2PI - math.log(self.action_scale) - log1mt2
        )
        return t, log_prob, (z, t, std, log_std)

    # ---- persistence ------------------------------------------------------------

    def blobs(self) -> dict[str, np.ndarray]:
        return {
            "actor": self.actor.flat(),
            "q1": self.q1.flat(),
            "q2": self.q2.flat(),
            "q1_targ": self.q1_targ.flat(),
            "q2_targ": self.q2_targ.flat(),
        }

    def header(self) -> dict:
        return {
            "layer_sizes": {
                "actor": list(self.actor.sizes),
                "critic": list(self.q1.sizes),
            },
            "hidden": list(self.cfg.hidden),
            "state_dim": self.cfg.state_dim,
            "action_scale": self.action_scale,
            "seed": self.seed,
            "step_count": self.step_count,
            "beta": self.beta,
        }

    def save(self, path, extra_header: dict | None = None, extra_blobs: dict | None = None) -> None:
        header = self.header()
        if extra_header:
            header.update(extra_header)
        blobs = self.blobs()
        if extra_blobs:
            blobs.update(extra_blobs)
        save_checkpoint(path, header, blobs)

    @classmethod
    def load(cls, path, cfg: SacConfig | None = None) -> tuple["SacNets", dict, dict]:
        header, blobs = load_checkpoint(path)
        cfg = cfg or SacConfig(hidden=tuple(header["hidden"]), state_dim=header["state_dim"])
        nets = cls(cfg, header["action_scale"], header["seed"])
        nets.actor.set_flat(blobs["actor"])
        nets.q1.set_flat(blobs["q1"])
        nets.q2.set_flat(blobs["q2"])
        nets.q1_targ.set_flat(blobs["q1_targ"])
        nets.q2_targ.set_flat(blobs["q2_targ"])
        nets.log_beta = math.log(header["beta"])
        nets.step_count = header["step_count"]
        return nets, header, blobs


def sample_action(
    nets: SacNets, s_norm: np.ndarray, rng: np.random.Generator | None = None, deterministic: bool = False
) -> tuple[float, float]:
    """Action (the barrier-parameter rate) and its log-probability for one
    normalized state. Deterministic mode returns scale * tanh(mean)."""
    s = np.asarray(s_norm, dtype=np.float64).reshape(1, -1)
    if deterministic:
        noise = np.zeros(1)
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        noise = rng.standard_normal(1)
    t, log_prob, _ = nets.policy_sample(s, noise)
    return float(nets.action_scale * t[0]), float(log_prob[0])


def critic_target(
    nets: SacNets, r: np.ndarray, s2_norm: np.ndarray, done: np.ndarray, noise_next: np.ndarray
) -> np.ndarray:
    """Bootstrap target: r + gamma (1 - done) (min_j Q_targ_j(s', a') - beta log pi(a'|s'))."""
    a2, logp2, _ = nets.policy_sample(s2_norm, noise_next)
    sa2 = np.column_stack([s2_norm, a2])
    q1t = nets.q1_targ.forward(sa2)[:, 0]
    q2t = nets.q2_targ.forward(sa2)[:, 0]
    qmin = np.minimum(q1t, q2t)
    return r + nets.cfg.gamma * (1.0 - done) * (qmin - nets.beta * logp2)


def compute_losses_and_grads(
    nets: SacNets,
    batch: dict,
    noise_cur: np.ndarray,
    noise_next: np.ndarray,
) -> tuple[dict, dict]:
    """All four losses and the gradients of each w.r.t. its own parameters.

    batch: s (B, d) normalized, a_norm (B,), r (B,), s2 (B, d), done (B,).
    Pure function of (parameters, batch, noise): finite-difference checkable.
    """
    cfg = nets.cfg
    s = batch["s"]
    B = s.shape[0]
    beta = nets.beta

    y = critic_target(nets, batch["r"], batch["s2"], batch["done"], noise_next)

    # critic regression
    sa = np.column_stack([s, batch["a_norm"]])
    losses = {}
    grads = {}
    for name, net in (("q1", nets.q1), ("q2", nets.q2)):
        cache: list = []
        q = net.forward(sa, cache)[:, 0]
        err = q - y
        losses[name] = float((err**2).mean())
        gw, gb, _ = net.backward(cache, (2.0 * err / B)[:, None])
        grads[name] = net.grads_to_flat(gw, gb)

    # actor: reparameterized sample through min of the critics
    cache_a: list = []
    out = nets.actor.forward(s, cache_a)
    mean = out[:, 0]
    log_std_raw = out[:, 1]
    clamp_lo = log_std_raw < cfg.log_std_min
    clamp_hi = log_std_raw > cfg.log_std_max
    log_std = np.clip(log_std_raw, cfg.log_std_min, cfg.log_std_max)
    std = np.exp(log_std)
    z = mean + std * noise_cur
    t = np.tanh(z)
    log1mt2 = 2.0 * (_LOG_2 - z - np.log1p(np.exp(-2.0 * z)))
    logp = -0.5 * noise_cur**2 - log_std - 0.5 * _LOG_2PI - math.log(nets.action_scale) - log1mt2

    sa_pi = np.column_stack([s, t])
    cache_q1: list = []
    cache_q2: list = []
    q1_pi = nets.q1.forward(sa_pi, cache_q1)[:, 0]
    q2_pi = nets.q2.forward(sa_pi, cache_q2)[:, 0]
    use_q1 = q1_pi <= q2_pi
    qmin = np.where(use_q1, q1_pi, q2_pi)
    losses["actor"] = float((beta * logp - qmin).mean())

    # d(actor loss)/d(action input of the min critic)
    dout1 = np.where(use_q1, -1.0 / B, 0.0)[:, None]
    dout2 = np.where(~use_q1, -1.0 / B, 0.0)[:, None]
    _, _, din1 = nets.q1.backward(cache_q1, dout1)
    _, _, din2 = nets.q2.backward(cache_q2, dout2)
    dL_da = din1[:, -1] + din2[:, -1]

    n_z = 2.0 - 4.0 * sigmoid(-2.0 * z)  # d logp / dz
    one_m_t2 = 1.0 - t**2
    dL_dz = dL_da * one_m_t2 + (beta / B) * n_z
    dL_dmean = dL_dz
    dL_dlogstd = dL_dz * std * noise_cur - (beta / B)
    dL_dlogstd = np.where(clamp_lo | clamp_hi, 0.0, dL_dlogstd)
    dout_actor = np.column_stack([dL_dmean, dL_dlogstd])
    gw, gb, _ = nets.actor.backward(cache_a, dout_actor)
    grads["actor"] = nets.actor.grads_to_flat(gw, gb)

    # entropy coefficient: L = beta * mean(-logp - target), logp detached
    ent_err = float((-logp - cfg.entropy_target).mean())
    losses["beta"] = beta * ent_err
    grads["log_beta"] = beta * ent_err  # d/d(log beta)

    return losses, grads


@dataclass
class SacOptimizer:
    actor: AdamState
    q1: AdamState
    q2: AdamState
    log_beta: AdamState

    @classmethod
    def for_nets(cls, nets: SacNets) -> "SacOptimizer":
        return cls(
            AdamState.for_size(nets.actor.n_params),
            AdamState.for_size(nets.q1.n_params),
            AdamState.for_size(nets.q2.n_params),
            AdamState.for_size(1),
        )

    def blobs(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("actor", "q1", "q2", "log_beta"):
            st: AdamState = getattr(self, name)
            out[f"opt_{name}_m"] = st.m
            out[f"opt_{name}_v"] = st.v
            out[f"opt_{name}_t"] = np.array([float(st.t)])
        return out

    def restore_blobs(self, blobs: dict[str, np.ndarray]) -> None:
        for name in ("actor", "q1", "q2", "log_beta"):
            st: AdamState = getattr(self, name)
            st.m = blobs[f"opt_{name}_m"].copy()
            st.v = blobs[f"opt_{name}_v"].copy()
            st.t = int(blobs[f"opt_{name}_t"][0])


class NonFiniteLoss(RuntimeError):
    pass


def gradient_step(
    nets: SacNets, batch: dict, opt: SacOptimizer, rng: np.random.Generator
) -> dict:
    """One SGD step on all four losses plus a polyak update of the targets.

    Raises NonFiniteLoss (leaving parameters untouched) if any loss or
    gradient is non-finite."""
    B = batch["s"].shape[0]
    noise_cur = rng.standard_normal(B)
    noise_next = rng.standard_normal(B)
    losses, grads = compute_losses_and_grads(nets, batch, noise_cur, noise_next)

    finite = all(np.isfinite(v) for v in losses.values())
    finite = finite and all(np.all(np.isfinite(np.asarray(g))) for g in grads.values())
    if not finite:
        raise NonFiniteLoss(f"non-finite loss or gradient: {losses}")

    lr = nets.cfg.lr
    nets.q1.set_flat(opt.q1.step(nets.q1.flat(), grads["q1"], lr))
    nets.q2.set_flat(opt.q2.step(nets.q2.flat(), grads["q2"], lr))
    nets.actor.set_flat(opt.actor.step(nets.actor.flat(), grads["actor"], lr))
    new_log_beta = opt.log_beta.step(
        np.array([nets.log_beta]), np.array([grads["log_beta"]]), lr
    )
    nets.log_beta = float(new_log_beta[0])

    tau = nets.cfg.tau
    for targ, src in ((nets.q1_targ, nets.q1), (nets.q2_targ, nets.q2)):
        targ.set_flat((1.0 - tau) * targ.flat() + tau * src.flat())
    nets.step_count += 1
    return losses
