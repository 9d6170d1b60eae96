from .adaptation import (
    AlphaAdapter,
    RewardWeights,
    StateScales,
    compute_reward,
    embed_state,
    normalize_state,
)
from .nets import AdamState, Mlp, load_checkpoint, save_checkpoint
from .replay import ReplayBuffer, ReplayCorruptError, Transition
from .sac import (
    NonFiniteLoss,
    SacConfig,
    SacNets,
    SacOptimizer,
    compute_losses_and_grads,
    critic_target,
    gradient_step,
    sample_action,
)

__all__ = [
    "AdamState",
    "AlphaAdapter",
    "Mlp",
    "NonFiniteLoss",
    "ReplayBuffer",
    "ReplayCorruptError",
    "RewardWeights",
    "SacConfig",
    "SacNets",
    "SacOptimizer",
    "StateScales",
    "Transition",
    "compute_losses_and_grads",
    "compute_reward",
    "critic_target",
    "embed_state",
    "gradient_step",
    "load_checkpoint",
    "normalize_state",
    "sample_action",
    "save_checkpoint",
]
