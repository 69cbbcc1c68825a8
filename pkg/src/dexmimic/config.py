"""Runtime settings from the environment and experiment configuration from JSON."""

from __future__ import annotations

import json
import math
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings

from dexmimic.augment.trajectory import AugmentSpec
from dexmimic.errors import InvalidInputError
from dexmimic.retarget.solver import RetargetConfig
from dexmimic.reward.terms import RewardConfig
from dexmimic.rl.ppo import PpoConfig
from dexmimic.sim.world import SimConfig
from dexmimic.visual.train import VisualTrainConfig


class Settings(BaseSettings):
    """Process-level knobs loaded from environment variables prefixed with DM_."""

    artifact_dir: Path = Path("artifacts")
    seed: int = 0
    torch_threads: int = 1
    log_level: str = "INFO"

    model_config = {"env_file": ".env", "env_prefix": "DM_"}


def get_settings() -> Settings:
    """Return a fresh Settings instance."""
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class HandSection(_Section):
    """``chain_file`` None selects the built-in desk hand."""

    chain_file: Path | None = None


class SceneSection(_Section):
    object: str = "box"
    object_xy: tuple[float, float] = (0.0, 0.0)
    container_position: tuple[float, float, float] = (0.15, 0.0, 0.06)


class CameraSection(_Section):
    target: tuple[float, float, float] = (0.0, 0.0, 0.05)
    distance: float = Field(0.8, gt=0.0)
    elevation_deg: float = 45.0
    azimuth_deg: float = 180.0
    fov_deg: float = Field(60.0, gt=0.0, lt=180.0)
    resolution: int = Field(64, ge=16)
    n_points: int = Field(256, ge=1)


class TaskSection(_Section):
    name: str = "relocate"
    episode_length: int | None = Field(None, ge=1)


class DemoSection(_Section):
    """Synthetic demonstration used when no keypoint file is given."""

    frames: int = Field(40, ge=8)
    seed: int = 0


class RolloutSection(_Section):
    required_successes: int = Field(100, ge=1)
    attempt_factor: int = Field(50, ge=1)
    workers: int = Field(1, ge=1)


class EvaluateSection(_Section):
    episodes: int = Field(300, ge=1)
    policy: str = Field("visual", pattern="^(state|visual)$")
    augment: bool = True
    workers: int = Field(1, ge=1)


class PipelineConfig(_Section):
    """Every experiment parameter, one section per module."""

    seed: int | None = None
    keypoints: Path | None = None
    hand: HandSection = Field(default_factory=HandSection)
    scene: SceneSection = Field(default_factory=SceneSection)
    demo: DemoSection = Field(default_factory=DemoSection)
    retarget: RetargetConfig = Field(default_factory=RetargetConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    camera: CameraSection = Field(default_factory=CameraSection)
    task: TaskSection = Field(default_factory=TaskSection)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    augment: AugmentSpec = Field(default_factory=AugmentSpec)
    ppo: PpoConfig = Field(default_factory=PpoConfig)
    visual: VisualTrainConfig = Field(default_factory=VisualTrainConfig)
    rollout: RolloutSection = Field(default_factory=RolloutSection)
    evaluate: EvaluateSection = Field(default_factory=EvaluateSection)

    def resolved_seed(self, settings: Settings | None = None) -> int:
        if self.seed is not None:
            return self.seed
        return (settings or get_settings()).seed


def camera_angles(section: CameraSection) -> tuple[float, float, float]:
    """(elevation, azimuth, fov) in radians."""
    return (
        math.radians(section.elevation_deg),
        math.radians(section.azimuth_deg),
        math.radians(section.fov_deg),
    )


def load_config(path: Path | str | None) -> PipelineConfig:
    """Validate a JSON config file; ``None`` gives all defaults.

    Validation problems surface as :class:`InvalidInputError` naming the file.
    """
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read config ({exc})") from exc
    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as exc:
        raise InvalidInputError(f"{path}: invalid config\n{exc}") from exc
