"""On-policy rollout storage and generalized advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dexmimic.errors import InvalidInputError


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float = 0.99,
    lam: float = 0.95,
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns over the leading time axis.

    ``values`` has one more step than ``rewards`` (the bootstrap value);
    ``dones[t]`` cuts both the bootstrap and the recursion after step t.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    steps = rewards.shape[0]
    if values.shape[0] != steps + 1 or dones.shape != rewards.shape:
        raise InvalidInputError("gae needs T rewards/dones and T+1 values")
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0]) if steps else 0.0
    for t in reversed(range(steps)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
    return advantages, advantages + values[:-1]


@dataclass(frozen=True, eq=False)
class RolloutBatch:
    """Flattened (horizon * num_envs) view of a full buffer with advantages."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class RolloutBuffer:
    """Fixed-capacity (horizon x num_envs) storage; each step writes one slot per env."""

    def __init__(self, horizon: int, num_envs: int, obs_dim: int, action_dim: int) -> None:
        if horizon < 1 or num_envs < 1:
            raise InvalidInputError("rollout buffer needs positive horizon and env count")
        self.horizon = horizon
        self.num_envs = num_envs
        self.obs = np.zeros((horizon, num_envs, obs_dim))
        self.actions = np.zeros((horizon, num_envs, action_dim))
        self.log_probs = np.zeros((horizon, num_envs))
        self.rewards = np.zeros((horizon, num_envs))
        self.values = np.zeros((horizon, num_envs))
        self.dones = np.zeros((horizon, num_envs))
        self.cursor = 0

    @property
    def full(self) -> bool:
        return self.cursor == self.horizon

    def add(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        log_probs: np.ndarray,
        rewards: np.ndarray,
        values: np.ndarray,
        dones: np.ndarray,
    ) -> None:
        if self.full:
            raise InvalidInputError("rollout buffer is full")
        t = self.cursor
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.dones[t] = dones
        self.cursor += 1

    def reset(self) -> None:
        self.cursor = 0

    def finish(self, last_values: np.ndarray, gamma: float, lam: float) -> RolloutBatch:
        """Compute advantages against *last_values* and flatten the written steps."""
        if self.cursor == 0:
            raise InvalidInputError("rollout buffer is empty")
        n = self.cursor
        values = np.concatenate([self.values[:n], np.asarray(last_values, dtype=float)[None]])
        advantages, returns = gae(self.rewards[:n], values, self.dones[:n], gamma, lam)
        flat = n * self.num_envs
        return RolloutBatch(
            obs=self.obs[:n].reshape(flat, -1).copy(),
            actions=self.actions[:n].reshape(flat, -1).copy(),
            log_probs=self.log_probs[:n].reshape(flat).copy(),
            advantages=advantages.reshape(flat),
            returns=returns.reshape(flat),
            values=self.values[:n].reshape(flat).copy(),
        )
