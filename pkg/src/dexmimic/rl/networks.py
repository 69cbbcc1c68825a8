"""Actor and critic networks for state-based policies.

All networks run in float64. Hidden layers use tanh, output layers are
linear. The actor's raw output is the pre-squash action mean; actions live
in a normalized [-1, 1] box per DoF (see :mod:`dexmimic.rl.env`).
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch
from torch import nn
from torch.distributions import Normal

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
DTYPE = torch.float64


class Mlp(nn.Module):
    """Dense tanh network with a linear output layer."""

    def __init__(self, sizes: Sequence[int]) -> None:
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(self.sizes[:-1], self.sizes[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            x = torch.tanh(layer(x))
        return self.layers[-1](x)


def init_orthogonal(mlp: Mlp, output_gain: float = 0.01) -> None:
    """Orthogonal hidden weights with gain sqrt(2), small output layer, zero biases."""
    for layer in mlp.layers[:-1]:
        nn.init.orthogonal_(layer.weight, gain=np.sqrt(2.0))
        nn.init.zeros_(layer.bias)
    nn.init.orthogonal_(mlp.layers[-1].weight, gain=output_gain)
    nn.init.zeros_(mlp.layers[-1].bias)


class GaussianPolicy(nn.Module):
    """Diagonal Gaussian over normalized actions with a state-independent log-std."""

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        hidden: Sequence[int] = (256, 128),
        init_log_std: float = -1.0,
    ) -> None:
        super().__init__()
        self.actor = Mlp((obs_dim, *hidden, action_dim))
        self.log_std = nn.Parameter(torch.full((action_dim,), float(init_log_std), dtype=DTYPE))

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def action_dim(self) -> int:
        return self.actor.sizes[-1]

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean = self.actor(obs)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).expand_as(mean)
        return mean, log_std

    def distribution(self, obs: torch.Tensor) -> Normal:
        """Action distribution: tanh-squashed mean, noise added after squashing."""
        mean, log_std = self(obs)
        return Normal(torch.tanh(mean), log_std.exp())


def policy_forward(policy: GaussianPolicy, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(pre-squash mean, log-std) for a single observation or a batch."""
    with torch.no_grad():
        mean, log_std = policy(torch.as_tensor(obs, dtype=DTYPE))
    return mean.numpy(), log_std.numpy()


def make_critic(obs_dim: int, hidden: Sequence[int] = (256, 128)) -> Mlp:
    return Mlp((obs_dim, *hidden, 1))


class RunningNorm:
    """Running mean/variance of observations (parallel Welford merge)."""

    def __init__(self, dim: int, clip: float = 10.0) -> None:
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.clip = clip

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=float).reshape(-1, self.mean.size)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + b_var * n + delta**2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        z = (np.asarray(obs, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"obs_mean": self.mean.copy(), "obs_var": self.var.copy()}

    @classmethod
    def from_arrays(cls, mean: np.ndarray, var: np.ndarray, count: float = 1.0) -> RunningNorm:
        norm = cls(mean.size)
        norm.mean = np.array(mean, dtype=float)
        norm.var = np.array(var, dtype=float)
        norm.count = count
        return norm
