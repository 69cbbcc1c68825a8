"""Distillation of rollouts into visual policies: behavior cloning and diffusion training."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import structlog
import torch
from pydantic import BaseModel, ConfigDict, Field

from dexmimic.checkpoint import load_module_arrays, module_arrays, read_checkpoint, write_checkpoint
from dexmimic.errors import CheckpointError, InvalidInputError
from dexmimic.rl.networks import DTYPE
from dexmimic.visual.frames import FrameSet, stack_frames
from dexmimic.visual.policy import HeadKind, NoiseSchedule, VisualPolicy, diffusion_forward_noise

logger = structlog.get_logger(__name__)

VISUAL_POLICY_KIND = "visual_policy"
_STD_FLOOR = 1e-6


class VisualTrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    head: HeadKind = HeadKind.BC
    frame_set: FrameSet = FrameSet.FULL
    encoder_sizes: tuple[int, ...] = (64, 128, 256)
    head_hidden: tuple[int, ...] = (256, 256)
    diffusion_steps: int = Field(50, ge=1)
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.02, gt=0.0, lt=1.0)
    horizon: int = Field(4, ge=1)
    time_dim: int = Field(32, ge=2)
    epochs: int = Field(100, ge=1)
    learning_rate: float = Field(1e-3, ge=0.0)
    batch_size: int = Field(64, ge=1)
    seed: int = 0


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DistillSamples:
    """Flattened training steps; ``poses`` rows are [target, palm, tip_1..tip_j]."""

    clouds: np.ndarray
    poses: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    episode: np.ndarray

    def __post_init__(self) -> None:
        m = self.clouds.shape[0]
        if m == 0:
            raise InvalidInputError("no training samples")
        for name in ("poses", "states", "actions", "episode"):
            if getattr(self, name).shape[0] != m:
                raise InvalidInputError(f"sample field {name!r} is not aligned with the clouds")

    def __len__(self) -> int:
        return self.clouds.shape[0]

    @property
    def num_fingertips(self) -> int:
        return self.poses.shape[1] - 2

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def points(self, idx: np.ndarray, frame_set: FrameSet) -> np.ndarray:
        return np.stack([
            stack_frames(self.clouds[i], self.poses[i], frame_set, self.num_fingertips)
            for i in idx
        ])

    def chunks(self, horizon: int) -> np.ndarray:
        """(M, h, a) chunks of consecutive actions, padded with the episode's last action."""
        m = len(self)
        out = np.empty((m, horizon, self.action_dim))
        for i in range(m):
            j = i
            for s in range(horizon):
                out[i, s] = self.actions[j]
                if j + 1 < m and self.episode[j + 1] == self.episode[i]:
                    j += 1
        return out


def concat_samples(parts: Sequence[DistillSamples]) -> DistillSamples:
    """Join samples from several datasets; episode ids stay distinct."""
    if not parts:
        raise InvalidInputError("nothing to concatenate")
    if len({p.num_fingertips for p in parts}) > 1:
        raise InvalidInputError("cannot mix hands with different fingertip counts")
    offset = 0
    episodes = []
    for p in parts:
        episodes.append(p.episode + offset)
        offset += int(p.episode.max()) + 1
    return DistillSamples(
        clouds=np.concatenate([p.clouds for p in parts]),
        poses=np.concatenate([p.poses for p in parts]),
        states=np.concatenate([p.states for p in parts]),
        actions=np.concatenate([p.actions for p in parts]),
        episode=np.concatenate(episodes),
    )


def _safe_std(x: np.ndarray) -> np.ndarray:
    std = x.std(axis=0)
    return np.where(std > _STD_FLOOR, std, 1.0)


def fit_normalization(policy: VisualPolicy, samples: DistillSamples) -> None:
    policy.set_normalization(
        samples.states.mean(axis=0), _safe_std(samples.states),
        samples.actions.mean(axis=0), _safe_std(samples.actions),
    )


def make_visual_policy(samples: DistillSamples, config: VisualTrainConfig) -> VisualPolicy:
    in_dim = 3 * config.frame_set.frame_count(samples.num_fingertips)
    schedule = NoiseSchedule.linear(config.diffusion_steps, config.beta_start, config.beta_end)
    torch.manual_seed(config.seed)
    return VisualPolicy(
        in_dim, samples.state_dim, samples.action_dim, config.head,
        encoder_sizes=config.encoder_sizes,
        head_hidden=config.head_hidden,
        schedule=schedule,
        horizon=config.horizon,
        time_dim=config.time_dim,
    )


def frame_set_for(policy: VisualPolicy) -> FrameSet:
    if policy.in_dim == 3:
        return FrameSet.WORLD
    if policy.in_dim == 6:
        return FrameSet.WORLD_TARGET
    return FrameSet.FULL


def _batches(n: int, batch_size: int, generator: torch.Generator) -> list[np.ndarray]:
    order = torch.randperm(n, generator=generator).numpy()
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# Behavior cloning
# ---------------------------------------------------------------------------

def bc_loss(
    policy: VisualPolicy, points: torch.Tensor, states: torch.Tensor, actions: torch.Tensor,
) -> torch.Tensor:
    """Mean squared error in normalized action units."""
    return ((policy(points, states) - policy.normalize_action(actions)) ** 2).mean()


def bc_train(
    policy: VisualPolicy,
    samples: DistillSamples,
    epochs: int = 100,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 64,
) -> tuple[VisualPolicy, list[float]]:
    """Minibatch Adam on the action MSE; returns the per-epoch mean loss."""
    if policy.kind is not HeadKind.BC:
        raise InvalidInputError("bc_train needs a BC-head policy")
    fit_normalization(policy, samples)
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(policy.parameters(), lr=lr)
    frame_set = frame_set_for(policy)
    states = torch.as_tensor(samples.states, dtype=DTYPE)
    actions = torch.as_tensor(samples.actions, dtype=DTYPE)
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(samples), batch_size, generator):
            points = torch.as_tensor(samples.points(idx, frame_set), dtype=DTYPE)
            loss = bc_loss(policy, points, states[idx], actions[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(idx)
        losses.append(total / len(samples))
        logger.debug("bc_epoch", epoch=epoch, loss=losses[-1])
    return policy, losses


# ---------------------------------------------------------------------------
# Diffusion
# ---------------------------------------------------------------------------

NoisePredictor = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def diffusion_loss(
    predict: NoisePredictor,
    x0: torch.Tensor,
    k: torch.Tensor,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Squared noise error summed over the chunk, averaged over the batch."""
    x_k = diffusion_forward_noise(x0, k, eps, schedule)
    err = (predict(x_k, k) - eps) ** 2
    return err.reshape(err.shape[0], -1).sum(dim=-1).mean()


def diffusion_train_step(
    policy: VisualPolicy,
    optimizer: torch.optim.Optimizer,
    points: torch.Tensor,
    states: torch.Tensor,
    chunks: torch.Tensor,
    generator: torch.Generator,
) -> float:
    if policy.kind is not HeadKind.DIFFUSION or policy.schedule is None:
        raise InvalidInputError("diffusion training needs a diffusion-head policy")
    schedule = policy.schedule
    b = chunks.shape[0]
    k = torch.randint(1, schedule.steps + 1, (b,), generator=generator)
    eps = torch.randn(chunks.shape, generator=generator, dtype=DTYPE)
    cond = policy.condition(points, states)
    loss = diffusion_loss(
        lambda x_k, steps: policy.predict_noise(x_k, steps, cond),
        policy.normalize_action(chunks), k, eps, schedule,
    )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss)


def diffusion_train(
    policy: VisualPolicy,
    samples: DistillSamples,
    epochs: int = 100,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 64,
) -> tuple[VisualPolicy, list[float]]:
    fit_normalization(policy, samples)
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(policy.parameters(), lr=lr)
    frame_set = frame_set_for(policy)
    states = torch.as_tensor(samples.states, dtype=DTYPE)
    chunks = torch.as_tensor(samples.chunks(policy.horizon), dtype=DTYPE)
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(samples), batch_size, generator):
            points = torch.as_tensor(samples.points(idx, frame_set), dtype=DTYPE)
            loss = diffusion_train_step(
                policy, optimizer, points, states[idx], chunks[idx], generator,
            )
            total += loss * len(idx)
        losses.append(total / len(samples))
        logger.debug("diffusion_epoch", epoch=epoch, loss=losses[-1])
    return policy, losses


@dataclass(eq=False)
class VisualTrainResult:
    policy: VisualPolicy
    curve: pd.DataFrame


def train_visual_policy(
    samples: DistillSamples, config: VisualTrainConfig | None = None,
) -> VisualTrainResult:
    config = config or VisualTrainConfig()
    policy = make_visual_policy(samples, config)
    train = bc_train if config.head is HeadKind.BC else diffusion_train
    policy, losses = train(
        policy, samples, config.epochs, config.learning_rate, config.seed, config.batch_size,
    )
    logger.info(
        "visual_policy_trained",
        head=config.head.value,
        samples=len(samples),
        epochs=config.epochs,
        final_loss=round(losses[-1], 6),
    )
    curve = pd.DataFrame({"epoch": np.arange(len(losses)), "loss": losses})
    return VisualTrainResult(policy=policy, curve=curve)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_visual_policy(path: Path | str, policy: VisualPolicy, **meta: Any) -> None:
    header = {
        "kind": VISUAL_POLICY_KIND,
        "head": policy.kind.value,
        "in_dim": policy.in_dim,
        "state_dim": policy.state_dim,
        "action_dim": policy.action_dim,
        "encoder_sizes": list(policy.encoder.sizes),
        "head_hidden": list(policy.head_hidden),
        "horizon": policy.horizon,
        "time_dim": policy.time_dim,
        **meta,
    }
    tensors = module_arrays(policy)
    if policy.schedule is not None:
        tensors["schedule_betas"] = policy.schedule.betas
    write_checkpoint(path, header, tensors)


def load_visual_policy(path: Path | str) -> VisualPolicy:
    ckpt = read_checkpoint(path)
    h, t = ckpt.header, ckpt.tensors
    if h.get("kind") != VISUAL_POLICY_KIND:
        raise CheckpointError(
            path, f"expected a {VISUAL_POLICY_KIND} checkpoint, got {h.get('kind')!r}",
        )
    try:
        kind = HeadKind(h["head"])
        schedule = NoiseSchedule(t["schedule_betas"]) if kind is HeadKind.DIFFUSION else None
        policy = VisualPolicy(
            int(h["in_dim"]), int(h["state_dim"]), int(h["action_dim"]), kind,
            encoder_sizes=[int(s) for s in h["encoder_sizes"]],
            head_hidden=[int(s) for s in h["head_hidden"]],
            schedule=schedule,
            horizon=int(h["horizon"]),
            time_dim=int(h["time_dim"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(path, f"incomplete visual-policy header ({exc})") from exc
    load_module_arrays(policy, t, source=path)
    return policy
