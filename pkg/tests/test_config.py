"""Tests for environment settings and JSON experiment configs."""

from __future__ import annotations

import json
import math

import pytest

from dexmimic.config import (
    CameraSection,
    PipelineConfig,
    Settings,
    camera_angles,
    get_settings,
    load_config,
)
from dexmimic.errors import InvalidInputError
from dexmimic.reward.terms import RewardVariant


@pytest.fixture(autouse=True)
def _no_dotenv(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for name in ("DM_SEED", "DM_ARTIFACT_DIR", "DM_LOG_LEVEL", "DM_TORCH_THREADS"):
        monkeypatch.delenv(name, raising=False)


class TestSettings:
    def test_defaults(self):
        settings = get_settings()
        assert settings.seed == 0
        assert settings.torch_threads == 1
        assert settings.log_level == "INFO"

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("DM_SEED", "7")
        monkeypatch.setenv("DM_ARTIFACT_DIR", "/tmp/runs")
        settings = Settings()
        assert settings.seed == 7
        assert str(settings.artifact_dir) == "/tmp/runs"

    def test_config_seed_falls_back_to_settings(self, monkeypatch):
        monkeypatch.setenv("DM_SEED", "11")
        assert PipelineConfig().resolved_seed() == 11
        assert PipelineConfig(seed=2).resolved_seed() == 2


class TestLoadConfig:
    def test_none_gives_defaults(self):
        config = load_config(None)
        assert config.task.name == "relocate"
        assert config.reward.coefficients.lambda_object == 10.0
        assert config.retarget.alpha == pytest.approx(4e-3)

    def test_nested_sections(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({
            "seed": 5,
            "task": {"name": "place_inside"},
            "ppo": {"num_envs": 2, "horizon": 32},
            "reward": {"variant": "no_pregrasp_hand"},
            "augment": {"rotation_z": [0.0, 0.0]},
        }))
        config = load_config(path)
        assert config.seed == 5
        assert config.ppo.num_envs == 2
        assert config.reward.variant is RewardVariant.NO_PREGRASP_HAND
        assert config.augment.rotation_z == (0.0, 0.0)

    def test_unknown_key_names_file(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"ppo": {"learning_rat": 1e-3}}))
        with pytest.raises(InvalidInputError, match="exp.json"):
            load_config(path)

    def test_out_of_range_value(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"camera": {"fov_deg": 200}}))
        with pytest.raises(InvalidInputError, match="invalid config"):
            load_config(path)

    def test_unreadable_json(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text("{")
        with pytest.raises(InvalidInputError, match="cannot read config"):
            load_config(path)

    def test_camera_angles_in_radians(self):
        elevation, azimuth, fov = camera_angles(CameraSection(elevation_deg=90, azimuth_deg=0))
        assert elevation == pytest.approx(math.pi / 2)
        assert azimuth == 0.0
        assert fov == pytest.approx(math.pi / 3)
