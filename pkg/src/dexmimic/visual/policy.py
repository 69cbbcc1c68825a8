"""Point-cloud conditioned policies: a behavior-cloning head and a DDPM action-chunk head.

Both heads read the encoder feature concatenated with the normalized robot
state. Robot states and actions are standardized with dataset statistics
held as module buffers, so they travel with the weights.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np
import torch
from torch import nn

from dexmimic.errors import InvalidInputError
from dexmimic.rl.networks import DTYPE, Mlp
from dexmimic.visual.encoder import PointNetEncoder
from dexmimic.visual.frames import MultiFramePointCloud


class HeadKind(StrEnum):
    BC = "bc"
    DIFFUSION = "diffusion"


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Steps are numbered 1..K; ``alpha_bars[0]`` is the noise-free convention value 1."""

    betas: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=float).reshape(-1)
        if betas.size == 0 or np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise InvalidInputError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)

    @classmethod
    def linear(
        cls, steps: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02,
    ) -> NoiseSchedule:
        if steps < 1:
            raise InvalidInputError("diffusion needs at least one step")
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def steps(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def beta(self, k: int) -> float:
        return float(self.betas[k - 1])

    def alpha_bar(self, k: Any) -> Any:
        return self.alpha_bars[k]

    def posterior_variance(self, k: int) -> float:
        ab = self.alpha_bars
        return (1.0 - ab[k - 1]) / (1.0 - ab[k]) * self.beta(k)


def diffusion_forward_noise(x0: Any, k: Any, eps: Any, schedule: NoiseSchedule) -> Any:
    """``sqrt(abar_k) x0 + sqrt(1 - abar_k) eps`` for numpy arrays or tensors.

    *k* may be a scalar or one step per leading batch entry.
    """
    ab = schedule.alpha_bar(np.asarray(k.cpu() if isinstance(k, torch.Tensor) else k))
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(ab, dtype=x0.dtype)
    else:
        x0 = np.asarray(x0, dtype=float)
        eps = np.asarray(eps, dtype=float)
        ab = np.asarray(ab, dtype=float)
    ab = ab.reshape(tuple(ab.shape) + (1,) * (x0.ndim - ab.ndim))
    return ab**0.5 * x0 + (1.0 - ab) ** 0.5 * eps


def timestep_embedding(k: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer steps, (B,) to (B, dim); odd widths end in a zero column."""
    half = dim // 2
    scale = math.log(10000.0) / max(half - 1, 1)
    freqs = torch.exp(torch.arange(half, dtype=DTYPE) * -scale)
    args = k.to(DTYPE)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = nn.functional.pad(emb, (0, 1))
    return emb


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

class VisualPolicy(nn.Module):
    def __init__(
        self,
        in_dim: int,
        state_dim: int,
        action_dim: int,
        kind: HeadKind = HeadKind.BC,
        *,
        encoder_sizes: Sequence[int] = (64, 128, 256),
        head_hidden: Sequence[int] = (256, 256),
        schedule: NoiseSchedule | None = None,
        horizon: int = 4,
        time_dim: int = 32,
    ) -> None:
        super().__init__()
        self.kind = HeadKind(kind)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.encoder = PointNetEncoder(in_dim, encoder_sizes)
        self.head_hidden = tuple(int(h) for h in head_hidden)
        cond_dim = self.encoder.feature_dim + state_dim
        if self.kind is HeadKind.BC:
            self.horizon = 1
            self.time_dim = 0
            self.schedule = None
            self.head = Mlp((cond_dim, *self.head_hidden, action_dim))
        else:
            if horizon < 1:
                raise InvalidInputError("action chunk horizon must be positive")
            self.horizon = horizon
            self.time_dim = time_dim
            self.schedule = schedule or NoiseSchedule.linear()
            chunk = horizon * action_dim
            self.head = Mlp((chunk + time_dim + cond_dim, *self.head_hidden, chunk))
        self.register_buffer("state_mean", torch.zeros(state_dim, dtype=DTYPE))
        self.register_buffer("state_std", torch.ones(state_dim, dtype=DTYPE))
        self.register_buffer("action_mean", torch.zeros(action_dim, dtype=DTYPE))
        self.register_buffer("action_std", torch.ones(action_dim, dtype=DTYPE))

    @property
    def in_dim(self) -> int:
        return self.encoder.in_dim

    def set_normalization(
        self, state_mean: np.ndarray, state_std: np.ndarray,
        action_mean: np.ndarray, action_std: np.ndarray,
    ) -> None:
        self.state_mean.copy_(torch.as_tensor(state_mean, dtype=DTYPE))
        self.state_std.copy_(torch.as_tensor(state_std, dtype=DTYPE))
        self.action_mean.copy_(torch.as_tensor(action_mean, dtype=DTYPE))
        self.action_std.copy_(torch.as_tensor(action_std, dtype=DTYPE))

    def normalize_state(self, state: torch.Tensor) -> torch.Tensor:
        return (state - self.state_mean) / self.state_std

    def normalize_action(self, action: torch.Tensor) -> torch.Tensor:
        return (action - self.action_mean) / self.action_std

    def denormalize_action(self, action: torch.Tensor) -> torch.Tensor:
        return action * self.action_std + self.action_mean

    def condition(self, points: torch.Tensor, state: torch.Tensor) -> torch.Tensor:
        """Encoder feature joined with the normalized robot state."""
        return torch.cat([self.encoder(points), self.normalize_state(state)], dim=-1)

    def forward(self, points: torch.Tensor, state: torch.Tensor) -> torch.Tensor:
        """BC head output in normalized action units."""
        if self.kind is not HeadKind.BC:
            raise InvalidInputError("forward is only defined for the BC head")
        return self.head(self.condition(points, state))

    def predict_noise(
        self, x_k: torch.Tensor, k: torch.Tensor, cond: torch.Tensor,
    ) -> torch.Tensor:
        """Noise estimate for a batch of (B, h, a) noisy chunks at steps k."""
        flat = x_k.reshape(x_k.shape[0], -1)
        inp = torch.cat([flat, timestep_embedding(k, self.time_dim), cond], dim=-1)
        return self.head(inp).reshape(x_k.shape)


def _as_batch(
    pc: MultiFramePointCloud | np.ndarray, state: np.ndarray,
) -> tuple[torch.Tensor, torch.Tensor]:
    data = pc.data if isinstance(pc, MultiFramePointCloud) else np.asarray(pc, dtype=float)
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(data)) or not np.all(np.isfinite(state)):
        raise InvalidInputError("visual policy input contains non-finite values")
    return (
        torch.as_tensor(data, dtype=DTYPE).unsqueeze(0),
        torch.as_tensor(state, dtype=DTYPE).reshape(1, -1),
    )


def bc_forward(
    policy: VisualPolicy, pc: MultiFramePointCloud | np.ndarray, robot_state: np.ndarray,
) -> np.ndarray:
    """One absolute joint-target action."""
    points, state = _as_batch(pc, robot_state)
    with torch.no_grad():
        return policy.denormalize_action(policy(points, state))[0].numpy()


def diffusion_sample(
    policy: VisualPolicy,
    pc: MultiFramePointCloud | np.ndarray,
    robot_state: np.ndarray,
    generator: torch.Generator,
) -> np.ndarray:
    """Ancestral sampling from x_K ~ N(0, I) down to an (h, a) action chunk.

    No noise is added on the final step.
    """
    if policy.kind is not HeadKind.DIFFUSION or policy.schedule is None:
        raise InvalidInputError("diffusion_sample needs a diffusion-head policy")
    schedule = policy.schedule
    points, state = _as_batch(pc, robot_state)
    shape = (1, policy.horizon, policy.action_dim)
    with torch.no_grad():
        cond = policy.condition(points, state)
        x = torch.randn(shape, generator=generator, dtype=DTYPE)
        for k in range(schedule.steps, 0, -1):
            eps = policy.predict_noise(x, torch.full((1,), k, dtype=torch.long), cond)
            x = posterior_mean(x, eps, k, schedule)
            if k > 1:
                sigma = math.sqrt(schedule.posterior_variance(k))
                x = x + sigma * torch.randn(shape, generator=generator, dtype=DTYPE)
        return policy.denormalize_action(x)[0].numpy()


def posterior_mean(x_k: Any, eps: Any, k: int, schedule: NoiseSchedule) -> Any:
    """``(x_k - beta_k / sqrt(1 - abar_k) * eps) / sqrt(alpha_k)``."""
    beta = schedule.beta(k)
    return (x_k - beta / math.sqrt(1.0 - schedule.alpha_bar(k)) * eps) / math.sqrt(1.0 - beta)
