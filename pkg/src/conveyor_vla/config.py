"""Configuration: environment settings, YAML defaults and training config files."""

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any

import yaml
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from conveyor_vla.models.training import AblationConfig, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = Path(__file__).parent.parent.parent / "config"
MERGED_SECTIONS = ("model", "pretrain", "posttrain", "thresholds")


class Settings(BaseSettings):
    """Runtime settings from environment and .env (prefix CVLA_)."""

    model_config = SettingsConfigDict(
        env_prefix="CVLA_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Policy server
    host: str = Field(default="0.0.0.0", description="Bind host")
    port: int = Field(default=8000, description="Bind port")
    checkpoint_path: Path | None = Field(default=None, description="Checkpoint served by /act")

    # Data
    data_dir: Path = Field(default=Path("data"), description="Root for generated datasets")
    config_dir: Path | None = Field(default=None, description="Override for config/defaults.yaml")
    log_level: str = Field(default="INFO", description="Root log level")


def load_yaml_config(config_path: Path) -> dict[str, Any]:
    """Load YAML config file."""
    if not config_path.exists():
        return {}
    with config_path.open() as f:
        return yaml.safe_load(f) or {}


@lru_cache
def get_settings() -> Settings:
    """Cached settings instance."""
    return Settings()


@lru_cache
def get_defaults(config_dir_str: str = "") -> dict[str, Any]:
    """World constants, tiers and presets from defaults.yaml."""
    if config_dir_str:
        config_dir = Path(config_dir_str)
    else:
        config_dir = get_settings().config_dir or DEFAULT_CONFIG_DIR
    path = Path(config_dir) / "defaults.yaml"
    defaults = load_yaml_config(path)
    if not defaults:
        raise FileNotFoundError(f"no defaults found at {path}")
    return defaults


def world_config() -> dict[str, Any]:
    return get_defaults()["world"]


def render_config() -> dict[str, Any]:
    return get_defaults()["render"]


def tier_config(tier: str) -> dict[str, Any]:
    tiers = get_defaults()["tiers"]
    if tier not in tiers:
        raise KeyError(f"unknown tier {tier!r}; known: {sorted(tiers)}")
    return tiers[tier]


def _read_mapping(path: Path) -> dict[str, Any]:
    text = Path(path).read_text()
    if Path(path).suffix in (".yaml", ".yml"):
        return yaml.safe_load(text) or {}
    return json.loads(text)


def load_train_config(path: Path, **overrides: Any) -> TrainConfig:
    """TrainConfig from a JSON (or YAML) file; `overrides` win over file values."""
    data = _read_mapping(path)
    preset = data.pop("preset", None)
    if preset is not None:
        data = {**get_defaults()["presets"][preset], **data}
    data.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.model_validate(data)
    logger.info("Loaded %s config from %s", config.stage.value, path)
    return config


def load_ablation_config(path: Path | None = None, **overrides: Any) -> AblationConfig:
    """The `ablation` section of defaults.yaml, updated from `path` and `overrides`.

    Nested mappings (model, pretrain, posttrain, thresholds) merge one level deep.
    """
    data = dict(get_defaults().get("ablation", {}))
    updates = _read_mapping(path) if path is not None else {}
    updates.update({k: v for k, v in overrides.items() if v is not None})
    for key, value in updates.items():
        if key in MERGED_SECTIONS and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return AblationConfig.model_validate(data)
