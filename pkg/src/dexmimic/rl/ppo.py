"""Clipped-surrogate PPO update over a filled rollout batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import structlog
import torch
from pydantic import BaseModel, ConfigDict, Field

from dexmimic.rl.buffer import RolloutBatch
from dexmimic.rl.networks import DTYPE, GaussianPolicy, Mlp

logger = structlog.get_logger(__name__)


class PpoConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    clip_epsilon: float = Field(0.2, gt=0.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    learning_rate: float = Field(3e-4, ge=0.0)
    epochs: int = Field(10, ge=1)
    minibatch_size: int = Field(64, ge=1)
    entropy_coef: float = Field(0.0, ge=0.0)
    value_coef: float = Field(0.5, ge=0.0)
    max_grad_norm: float = Field(0.5, gt=0.0)
    total_steps: int = Field(200_000, ge=1)
    num_envs: int = Field(4, ge=1)
    horizon: int = Field(256, ge=1)
    hidden: tuple[int, ...] = (256, 128)
    init_log_std: float = -1.0
    seed: int = 0
    success_window: int = Field(50, ge=1)
    success_target: float = Field(0.95, gt=0.0, le=1.0)
    workers: int = Field(1, ge=1)


@dataclass(frozen=True)
class PpoReport:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    updates: int
    aborted: bool = False


@dataclass(frozen=True)
class LossParts:
    total: torch.Tensor
    policy: torch.Tensor
    value: torch.Tensor
    entropy: torch.Tensor
    ratio: torch.Tensor


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(
    ratio: torch.Tensor, advantages: torch.Tensor, epsilon: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample (clipped objective, unclipped objective); clipped <= unclipped."""
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantages
    return torch.minimum(unclipped, clipped), unclipped


def ppo_loss(
    policy: GaussianPolicy,
    critic: Mlp,
    obs: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    config: PpoConfig,
) -> LossParts:
    dist = policy.distribution(obs)
    log_probs = dist.log_prob(actions).sum(-1)
    ratio = torch.exp(log_probs - old_log_probs)
    surrogate, _ = clipped_surrogate(ratio, advantages, config.clip_epsilon)
    policy_loss = -surrogate.mean()
    value_loss = ((critic(obs).squeeze(-1) - returns) ** 2).mean()
    entropy = dist.entropy().sum(-1).mean()
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    return LossParts(total, policy_loss, value_loss, entropy, ratio)


def ppo_update(
    policy: GaussianPolicy,
    critic: Mlp,
    batch: RolloutBatch,
    config: PpoConfig,
    optimizer: torch.optim.Optimizer,
    generator: torch.Generator,
) -> PpoReport:
    """Several epochs of minibatch ascent on the clipped surrogate.

    Advantages are normalized over the whole batch first. A non-finite loss
    aborts the remaining update and is flagged in the report.
    """
    obs = torch.as_tensor(batch.obs, dtype=DTYPE)
    actions = torch.as_tensor(batch.actions, dtype=DTYPE)
    old_log_probs = torch.as_tensor(batch.log_probs, dtype=DTYPE)
    advantages = torch.as_tensor(normalize_advantages(batch.advantages), dtype=DTYPE)
    returns = torch.as_tensor(batch.returns, dtype=DTYPE)
    params = [*policy.parameters(), *critic.parameters()]
    n = len(batch)
    stats = {"policy": [], "value": [], "entropy": [], "kl": [], "clip": []}
    updates = 0
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            parts = ppo_loss(
                policy, critic, obs[idx], actions[idx], old_log_probs[idx],
                advantages[idx], returns[idx], config,
            )
            if not torch.isfinite(parts.total):
                logger.warning("ppo_loss_non_finite", update=updates)
                return _report(stats, updates, aborted=True)
            optimizer.zero_grad()
            parts.total.backward()
            torch.nn.utils.clip_grad_norm_(params, config.max_grad_norm)
            optimizer.step()
            updates += 1
            with torch.no_grad():
                log_ratio = torch.log(parts.ratio)
                stats["policy"].append(float(parts.policy))
                stats["value"].append(float(parts.value))
                stats["entropy"].append(float(parts.entropy))
                stats["kl"].append(float(((parts.ratio - 1.0) - log_ratio).mean()))
                stats["clip"].append(
                    float(((parts.ratio - 1.0).abs() > config.clip_epsilon).to(DTYPE).mean()),
                )
    return _report(stats, updates)


def _report(stats: dict[str, list[float]], updates: int, aborted: bool = False) -> PpoReport:
    def mean(key: str) -> float:
        return float(np.mean(stats[key])) if stats[key] else float("nan")

    return PpoReport(
        policy_loss=mean("policy"),
        value_loss=mean("value"),
        entropy=mean("entropy"),
        approx_kl=mean("kl"),
        clip_fraction=mean("clip"),
        updates=updates,
        aborted=aborted,
    )
