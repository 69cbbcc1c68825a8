"""Rollout datasets on disk.

A dataset is a directory holding ``manifest.json`` and one binary blob per
episode. Each blob is little-endian float32, the arrays laid end to end in
:data:`EPISODE_FIELDS` order; the shapes come from the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from dexmimic.errors import InvalidInputError
from dexmimic.reward.metrics import relocate_success
from dexmimic.visual.train import DistillSamples

logger = structlog.get_logger(__name__)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
_BLOB_DTYPE = np.dtype("<f4")
EPISODE_FIELDS = ("observations", "clouds", "poses", "actions", "rewards", "object_positions")


@dataclass(eq=False)
class RolloutEpisode:
    """One recorded episode.

    ``poses[t]`` holds the [target, palm, tip_1..tip_j] frame poses as
    ``(x, y, z, qw, qx, qy, qz)`` rows at the time ``clouds[t]`` was rendered.
    ``object_positions[t]`` is the object position after action ``t``.
    """

    observations: np.ndarray
    clouds: np.ndarray
    poses: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    object_positions: np.ndarray
    stages: list[str]
    target_pos: np.ndarray
    success: bool
    sr10: bool
    sr3: bool
    final_distance: float
    containment: float | None = None
    seed: int = 0

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    def shapes(self) -> dict[str, list[int]]:
        return {name: list(getattr(self, name).shape) for name in EPISODE_FIELDS}

    def verify_success(self) -> bool:
        """True when the episode is marked successful and its stored outcome agrees."""
        if not self.success:
            return False
        if self.containment is not None:
            return self.containment >= 0.5
        sr10, sr3 = relocate_success(self.object_positions[-1], self.target_pos)
        return sr3 and sr10 == self.sr10 and sr3 == self.sr3


@dataclass(eq=False)
class Dataset:
    task: str
    n_points: int
    num_fingertips: int
    dof: int
    seed: int
    source_checkpoint: str = ""
    episodes: list[RolloutEpisode] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.episodes)

    def to_samples(self) -> DistillSamples:
        """Flatten every step; robot state is the (q, qd) prefix of the observation."""
        if not self.episodes:
            raise InvalidInputError("dataset has no episodes")
        state_dim = 2 * self.dof
        states = [e.observations[:, :state_dim] for e in self.episodes]
        return DistillSamples(
            clouds=np.concatenate([e.clouds for e in self.episodes]).astype(float),
            poses=np.concatenate([e.poses for e in self.episodes]).astype(float),
            states=np.concatenate(states).astype(float),
            actions=np.concatenate([e.actions for e in self.episodes]).astype(float),
            episode=np.concatenate([
                np.full(e.steps, i, dtype=int) for i, e in enumerate(self.episodes)
            ]),
        )


def _episode_blob(ep: RolloutEpisode) -> bytes:
    return b"".join(
        np.ascontiguousarray(getattr(ep, name), dtype=_BLOB_DTYPE).tobytes()
        for name in EPISODE_FIELDS
    )


def _episode_entry(ep: RolloutEpisode, file: str) -> dict[str, Any]:
    return {
        "file": file,
        "shapes": ep.shapes(),
        "stages": list(ep.stages),
        "target_pos": [float(v) for v in ep.target_pos],
        "success": bool(ep.success),
        "sr10": bool(ep.sr10),
        "sr3": bool(ep.sr3),
        "final_distance": float(ep.final_distance),
        "containment": None if ep.containment is None else float(ep.containment),
        "seed": int(ep.seed),
    }


def write_dataset(dataset: Dataset, directory: Path | str) -> Path:
    """Write manifest and blobs; the same dataset always produces the same bytes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ep in enumerate(dataset.episodes):
        name = f"episode_{i:05d}.bin"
        (directory / name).write_bytes(_episode_blob(ep))
        entries.append(_episode_entry(ep, name))
    manifest = {
        "format_version": FORMAT_VERSION,
        "task": dataset.task,
        "n_points": dataset.n_points,
        "num_fingertips": dataset.num_fingertips,
        "dof": dataset.dof,
        "seed": dataset.seed,
        "source_checkpoint": dataset.source_checkpoint,
        "dtype": "float32-le",
        "fields": list(EPISODE_FIELDS),
        "meta": dataset.meta,
        "episodes": entries,
    }
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("dataset_written", path=str(directory), episodes=len(entries))
    return path


def _read_episode(directory: Path, entry: dict[str, Any]) -> RolloutEpisode:
    path = directory / entry["file"]
    try:
        raw = np.frombuffer(path.read_bytes(), dtype=_BLOB_DTYPE)
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot read episode blob ({exc})") from exc
    arrays: dict[str, np.ndarray] = {}
    cursor = 0
    for name in EPISODE_FIELDS:
        shape = tuple(int(d) for d in entry["shapes"][name])
        count = int(np.prod(shape, dtype=np.int64))
        if cursor + count > raw.size:
            raise InvalidInputError(f"{path}: blob too short for field {name!r}")
        arrays[name] = raw[cursor:cursor + count].astype(np.float64).reshape(shape)
        cursor += count
    if cursor != raw.size:
        raise InvalidInputError(f"{path}: {raw.size - cursor} unexpected trailing values")
    containment = entry.get("containment")
    return RolloutEpisode(
        **arrays,
        stages=list(entry["stages"]),
        target_pos=np.array(entry["target_pos"], dtype=float),
        success=bool(entry["success"]),
        sr10=bool(entry["sr10"]),
        sr3=bool(entry["sr3"]),
        final_distance=float(entry["final_distance"]),
        containment=None if containment is None else float(containment),
        seed=int(entry.get("seed", 0)),
    )


def read_dataset(directory: Path | str) -> Dataset:
    directory = Path(directory)
    path = directory / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read dataset manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format {manifest.get('format_version')!r}")
    try:
        episodes = [_read_episode(directory, e) for e in manifest["episodes"]]
        dataset = Dataset(
            task=manifest["task"],
            n_points=int(manifest["n_points"]),
            num_fingertips=int(manifest["num_fingertips"]),
            dof=int(manifest["dof"]),
            seed=int(manifest["seed"]),
            source_checkpoint=manifest.get("source_checkpoint", ""),
            episodes=episodes,
            meta=manifest.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"{path}: malformed manifest ({exc})") from exc
    for i, ep in enumerate(dataset.episodes):
        if not ep.verify_success():
            raise InvalidInputError(f"{path}: episode {i} does not verify as successful")
    return dataset
