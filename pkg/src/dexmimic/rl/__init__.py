"""State-based policy learning: networks, GAE, PPO and the tracking environments."""

from dexmimic.rl.buffer import RolloutBatch, RolloutBuffer, gae
from dexmimic.rl.env import (
    ActionScaling,
    EpisodeOutcome,
    ManipulationEnv,
    ReachEnv,
    StepResult,
    build_observation,
    observation_dim,
)
from dexmimic.rl.networks import GaussianPolicy, Mlp, RunningNorm, make_critic, policy_forward
from dexmimic.rl.ppo import PpoConfig, PpoReport, clipped_surrogate, ppo_loss, ppo_update
from dexmimic.rl.train import (
    StatePolicy,
    TrainingResult,
    load_state_policy,
    save_state_policy,
    train_state_policy,
    write_training_curve,
)

__all__ = [
    # networks
    "Mlp",
    "GaussianPolicy",
    "RunningNorm",
    "make_critic",
    "policy_forward",
    # advantage estimation
    "gae",
    "RolloutBatch",
    "RolloutBuffer",
    # ppo
    "PpoConfig",
    "PpoReport",
    "clipped_surrogate",
    "ppo_loss",
    "ppo_update",
    # environments
    "ActionScaling",
    "EpisodeOutcome",
    "ManipulationEnv",
    "ReachEnv",
    "StepResult",
    "build_observation",
    "observation_dim",
    # training
    "StatePolicy",
    "TrainingResult",
    "train_state_policy",
    "save_state_policy",
    "load_state_policy",
    "write_training_curve",
]
