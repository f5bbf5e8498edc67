"""Data-driven reward-model initialization for preference-based RL on gridworlds."""
from .grid_env import Action, GridEnv, GridPos, Preference, Segment, oracle_label, oracle_return
from .nn_core import InitScheme
from .pbrl_loop import LoopConfig, RunMetrics, run_experiment
from .reward_model import PreferenceRecord, RewardNet, TrajectoryBuffer

__all__ = [
    "Action",
    "GridEnv",
    "GridPos",
    "InitScheme",
    "LoopConfig",
    "Preference",
    "PreferenceRecord",
    "RewardNet",
    "RunMetrics",
    "Segment",
    "TrajectoryBuffer",
    "oracle_label",
    "oracle_return",
    "run_experiment",
]
