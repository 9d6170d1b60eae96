from .episode import EpisodeResult, Mode, detect_deadlock, run_episode
from .evaluate import BenchmarkReport, adaptation_correlation, evaluate, trial_start
from .train import TrainResult, episode_seed, train, training_worlds

__all__ = [
    "BenchmarkReport",
    "EpisodeResult",
    "Mode",
    "TrainResult",
    "adaptation_correlation",
    "detect_deadlock",
    "episode_seed",
    "evaluate",
    "run_episode",
    "train",
    "training_worlds",
    "trial_start",
]
