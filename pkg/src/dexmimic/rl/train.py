"""PPO training loop over (augmented) reference trajectories, and the state-policy bundle."""

from __future__ import annotations

import math
from collections import deque
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import structlog
import torch

from dexmimic.augment.trajectory import AugmentSpec, augment_reference, sample_augmentation
from dexmimic.checkpoint import load_module_arrays, module_arrays, read_checkpoint, write_checkpoint
from dexmimic.errors import CheckpointError, InvalidInputError
from dexmimic.kinematics.chain import KinematicChain
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.reward.terms import RewardConfig
from dexmimic.rl.buffer import RolloutBuffer
from dexmimic.rl.env import ActionScaling, StepResult, TrackingEnv
from dexmimic.rl.networks import (
    DTYPE,
    GaussianPolicy,
    Mlp,
    RunningNorm,
    init_orthogonal,
    make_critic,
)
from dexmimic.rl.ppo import PpoConfig, ppo_update

logger = structlog.get_logger(__name__)

EnvFactory = Callable[[int, RewardConfig], TrackingEnv]
STATE_POLICY_KIND = "state_policy"


@dataclass(eq=False)
class StatePolicy:
    """Actor, critic, observation statistics and the action box of one hand."""

    policy: GaussianPolicy
    critic: Mlp
    normalizer: RunningNorm
    scaling: ActionScaling

    @classmethod
    def create(
        cls,
        obs_dim: int,
        scaling: ActionScaling,
        hidden: Sequence[int] = (256, 128),
        init_log_std: float = -1.0,
    ) -> StatePolicy:
        policy = GaussianPolicy(obs_dim, scaling.dim, hidden, init_log_std)
        critic = make_critic(obs_dim, hidden)
        init_orthogonal(policy.actor, output_gain=0.01)
        init_orthogonal(critic, output_gain=1.0)
        return cls(policy, critic, RunningNorm(obs_dim), scaling)

    def act(
        self,
        obs: np.ndarray,
        generator: torch.Generator | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Batch step: (joint targets, normalized actions, log-probs, values, normalized obs).

        Without a generator the action is the squashed mean.
        """
        norm_obs = self.normalizer(np.atleast_2d(obs))
        with torch.no_grad():
            x = torch.as_tensor(norm_obs, dtype=DTYPE)
            dist = self.policy.distribution(x)
            if generator is None:
                action = dist.mean
            else:
                action = dist.mean + dist.stddev * torch.randn(
                    dist.mean.shape, generator=generator, dtype=DTYPE,
                )
            log_prob = dist.log_prob(action).sum(-1)
            value = self.critic(x).squeeze(-1)
        a = action.numpy()
        targets = np.stack([self.scaling.to_targets(row) for row in a])
        return targets, a, log_prob.numpy(), value.numpy(), norm_obs

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic joint targets for one observation."""
        return self.act(obs)[0][0]


def save_state_policy(path: Path | str, sp: StatePolicy, **meta: Any) -> None:
    header = {
        "kind": STATE_POLICY_KIND,
        "obs_dim": sp.policy.obs_dim,
        "dof": sp.policy.action_dim,
        "actor_sizes": list(sp.policy.actor.sizes),
        "critic_sizes": list(sp.critic.sizes),
        "obs_count": sp.normalizer.count,
        **meta,
    }
    tensors = {
        **module_arrays(sp.policy, "policy."),
        **module_arrays(sp.critic, "critic."),
        **sp.normalizer.arrays(),
        "action_low": sp.scaling.low,
        "action_high": sp.scaling.high,
    }
    write_checkpoint(path, header, tensors)


def load_state_policy(path: Path | str) -> StatePolicy:
    ckpt = read_checkpoint(path)
    h, t = ckpt.header, ckpt.tensors
    if h.get("kind") != STATE_POLICY_KIND:
        raise CheckpointError(
            path, f"expected a {STATE_POLICY_KIND} checkpoint, got {h.get('kind')!r}",
        )
    try:
        actor_sizes = [int(s) for s in h["actor_sizes"]]
        critic_sizes = [int(s) for s in h["critic_sizes"]]
        scaling = ActionScaling(low=t["action_low"], high=t["action_high"])
        normalizer = RunningNorm.from_arrays(t["obs_mean"], t["obs_var"], float(h["obs_count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(path, f"incomplete state-policy header ({exc})") from exc
    policy = GaussianPolicy(actor_sizes[0], actor_sizes[-1], actor_sizes[1:-1])
    critic = Mlp(critic_sizes)
    load_module_arrays(policy, t, "policy.", source=path)
    load_module_arrays(critic, t, "critic.", source=path)
    return StatePolicy(policy, critic, normalizer, scaling)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TrainingResult:
    policy: StatePolicy
    curve: pd.DataFrame
    stopped_early: bool
    env_steps: int


class _ReferenceSampler:
    """Per-episode reference draw: a random source reference, then a random augmentation."""

    def __init__(
        self,
        references: Sequence[ReferenceTrajectory],
        spec: AugmentSpec | None,
        rng: np.random.Generator,
        chain: KinematicChain | None = None,
    ) -> None:
        self.references = list(references)
        self.spec = spec
        self.rng = rng
        self.chain = chain

    def __call__(self) -> ReferenceTrajectory | None:
        if not self.references:
            return None
        ref = self.references[int(self.rng.integers(len(self.references)))]
        if self.spec is None:
            return ref
        sample = sample_augmentation(self.spec, self.rng)
        return augment_reference(ref, sample, self.spec.interpolation_frames, chain=self.chain)


def train_state_policy(
    env_factory: EnvFactory,
    references: Sequence[ReferenceTrajectory],
    augment: AugmentSpec | None = None,
    reward: RewardConfig | None = None,
    config: PpoConfig | None = None,
) -> TrainingResult:
    """Collect ``horizon`` steps from every env, update, repeat until the step budget.

    Stops early once the rolling success rate over the last
    ``success_window`` episodes reaches ``success_target``.
    """
    config = config or PpoConfig()
    reward = reward or RewardConfig()
    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    envs = [env_factory(i, reward) for i in range(config.num_envs)]
    sampler = _ReferenceSampler(references, augment, rng, envs[0].chain)
    obs_dim = envs[0].obs_dim
    sp = StatePolicy.create(
        obs_dim, ActionScaling.from_chain(envs[0].chain), config.hidden, config.init_log_std,
    )
    optimizer = torch.optim.Adam(
        [*sp.policy.parameters(), *sp.critic.parameters()], lr=config.learning_rate,
    )
    buffer = RolloutBuffer(config.horizon, config.num_envs, obs_dim, sp.scaling.dim)
    obs = np.stack([env.reset(sampler()) for env in envs])
    sp.normalizer.update(obs)

    iterations = max(1, math.ceil(config.total_steps / (config.horizon * config.num_envs)))
    window: deque[bool] = deque(maxlen=config.success_window)
    rows = []
    env_steps = 0
    stopped_early = False
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for iteration in range(iterations):
            buffer.reset()
            raw_obs = []
            rewards = []
            episodes = successes = 0
            for _ in range(config.horizon):
                targets, actions, log_probs, values, norm_obs = sp.act(obs, generator)
                results = _step_all(envs, targets, pool)
                raw_obs.append(obs)
                next_obs = []
                dones = np.zeros(config.num_envs)
                for i, (env, result) in enumerate(zip(envs, results)):
                    rewards.append(result.reward)
                    if result.done:
                        dones[i] = 1.0
                        outcome = env.outcome()
                        window.append(outcome.success)
                        episodes += 1
                        successes += int(outcome.success)
                        next_obs.append(env.reset(sampler()))
                    else:
                        next_obs.append(result.obs)
                buffer.add(
                    norm_obs, actions, log_probs,
                    np.array([r.reward for r in results]), values, dones,
                )
                obs = np.stack(next_obs)
            env_steps += config.horizon * config.num_envs

            last_values = sp.act(obs)[3]
            batch = buffer.finish(last_values, config.gamma, config.gae_lambda)
            report = ppo_update(sp.policy, sp.critic, batch, config, optimizer, generator)
            sp.normalizer.update(np.concatenate(raw_obs))

            rolling = float(np.mean(window)) if window else 0.0
            row = {
                "iteration": iteration,
                "env_steps": env_steps,
                "mean_reward": float(np.mean(rewards)),
                "episodes": episodes,
                "success_rate": successes / episodes if episodes else float("nan"),
                "rolling_success": rolling,
                "policy_loss": report.policy_loss,
                "value_loss": report.value_loss,
                "entropy": report.entropy,
                "approx_kl": report.approx_kl,
                "aborted": report.aborted,
            }
            rows.append(row)
            logger.info(
                "ppo_iteration",
                iteration=iteration,
                env_steps=env_steps,
                mean_reward=round(row["mean_reward"], 5),
                rolling_success=round(rolling, 3),
            )
            if len(window) == config.success_window and rolling >= config.success_target:
                stopped_early = True
                logger.info("ppo_early_stop", iteration=iteration, rolling_success=rolling)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not rows:
        raise InvalidInputError("training ran no iterations")
    return TrainingResult(
        policy=sp, curve=pd.DataFrame(rows), stopped_early=stopped_early, env_steps=env_steps,
    )


def _step_all(
    envs: Sequence[TrackingEnv], targets: np.ndarray, pool: ThreadPoolExecutor | None,
) -> list[StepResult]:
    if pool is None:
        return [env.step(t) for env, t in zip(envs, targets)]
    return list(pool.map(lambda pair: pair[0].step(pair[1]), zip(envs, targets)))


def write_training_curve(curve: pd.DataFrame, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(path, index=False, float_format="%.10g")
