"""
flakeloc Settings

Layered run configuration: keyword overrides from the command line, then
``FLAKELOC_*`` environment variables, then a ``.env`` file, then the YAML
config file (``config/flakeloc.yaml`` by default), then field defaults.
"""

from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    YamlConfigSettingsSource,
)

from .errors import InputValidationError
from .learning.evolve import GPConfig
from .metrics.features import FeatureSet

DEFAULT_CONFIG_PATH = Path("config/flakeloc.yaml")

_config_file: ContextVar[Optional[Path]] = ContextVar("flakeloc_config_file", default=None)


class VotingSettings(BaseModel):
    """Defaults for the voting ensemble."""

    top_n: int = Field(default=10, ge=1)
    family_a: FeatureSet = FeatureSet.SBFL_CHANGE
    family_b: FeatureSet = FeatureSet.SBFL_SIZE
    models_per_family: int = Field(default=30, ge=1)


class Settings(BaseSettings):
    """Run configuration shared by every command."""

    model_config = SettingsConfigDict(
        env_prefix="FLAKELOC_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="ignore",
    )

    output_dir: Path = Path("results")
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    log_json: bool = False
    dstar_exponent: float = Field(default=2.0, gt=0)
    catalog_file: Optional[Path] = None
    gp: GPConfig = Field(default_factory=GPConfig)
    voting: VotingSettings = Field(default_factory=VotingSettings)

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {value!r}")
        return level

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        sources = [init_settings, env_settings, dotenv_settings]
        config_file = _config_file.get()
        if config_file is not None:
            sources.append(YamlConfigSettingsSource(settings_cls, yaml_file=config_file))
        return tuple(sources)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a JSON-compatible dictionary."""
        return self.model_dump(mode="json")


def load_settings(config_path: Optional[Path] = None, **overrides: Any) -> Settings:
    """Load settings from the YAML file, environment and keyword overrides.

    A missing default config file is not an error; an explicit ``config_path``
    that does not exist is.
    """
    path = Path(config_path) if config_path is not None else DEFAULT_CONFIG_PATH
    if config_path is not None and not path.exists():
        raise InputValidationError("configuration file not found", str(path))

    if path.exists():
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise InputValidationError(f"unreadable configuration: {e}", str(path)) from e
        if loaded is not None and not isinstance(loaded, dict):
            raise InputValidationError("configuration must be a mapping", str(path))

    token = _config_file.set(path if path.exists() else None)
    try:
        return Settings(**{k: v for k, v in overrides.items() if v is not None})
    except ValidationError as e:
        raise InputValidationError(f"invalid configuration: {e}", str(path)) from e
    finally:
        _config_file.reset(token)
