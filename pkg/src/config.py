"""Experiment configuration loading."""

import copy
import os
import re
import sys
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import structlog
from pydantic import ValidationError

from src.errors import ConfigError
from src.models import ExperimentConfig

logger = structlog.get_logger(__name__)

CONFIG_ENV_VAR = "RATESEL_CONFIG"
DEFAULT_CONFIG_NAME = "experiment.toml"

# Overrides applied on top of the field defaults; a config file's own keys win.
PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "full": {
        "spec": {"epsilon": 1e-4, "delta": 0.05},
        "zeta": 2e-3,
        "r_min": 100,
        "m": 1_000_000,
        "d": 500,
        "d_test": 200,
        "redraws": 50,
        "n_ref": 100_000_000,
        "n_sweep": [0, 100, 1_000, 10_000, 100_000, 1_000_000],
    },
    "measurement": {
        "spec": {"epsilon": 1e-2, "delta": 0.05},
        "zeta": 0.4,
        "r_min": 50,
        "d": 50,
        "location_sampling": "uniform",
    },
}


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Return base updated recursively with override; nested tables merge key by key."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _format_location(loc: tuple[Any, ...]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


class ConfigLoader:
    """Loads and validates an experiment configuration from TOML.

    Search order: explicit path, the RATESEL_CONFIG environment variable,
    ``experiment.toml`` in the working directory. When none exists the
    built-in defaults (optionally with a preset) are used.
    """

    def __init__(self, config_path: Optional[Path] = None, preset: Optional[str] = None):
        """Initialize config loader.

        Args:
            config_path: Path to config file. If None, searches standard locations.
            preset: Preset applied beneath the file's own keys
        """
        self.preset = preset
        self.config_source: str
        if config_path is not None:
            self.config_path: Optional[Path] = config_path
            self.config_source = "explicit"
        else:
            self.config_path, self.config_source = self._find_config_file()
        self.config: Optional[ExperimentConfig] = None

    def _find_config_file(self) -> tuple[Optional[Path], str]:
        env_path = os.getenv(CONFIG_ENV_VAR)
        if env_path:
            return Path(env_path), "env"
        local = Path.cwd() / DEFAULT_CONFIG_NAME
        if local.exists():
            return local, "cwd"
        return None, "defaults"

    def load(self) -> ExperimentConfig:
        """Load, expand and validate the configuration.

        Raises:
            ConfigError: If the file is missing, not valid TOML, names an
                unknown preset or fails validation
        """
        raw: dict[str, Any] = {}
        if self.config_path is not None:
            if not self.config_path.exists():
                raise ConfigError(f"Configuration file not found: {self.config_path}")
            try:
                with open(self.config_path, "rb") as f:
                    raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"Invalid TOML syntax in {self.config_path}: {e}") from e

        raw = self._expand_env_vars(raw)
        self.config = self._parse_config(raw)
        logger.info(
            "config_loaded",
            source=self.config_source,
            path=str(self.config_path) if self.config_path else None,
            epsilon=self.config.spec.epsilon,
            redraws=self.config.redraws,
        )
        return self.config

    def _expand_env_vars(self, config: dict[str, Any]) -> dict[str, Any]:
        """Recursively expand ``${VAR_NAME}`` references in string values.

        Unset variables are left as written.
        """
        pattern = re.compile(r"\$\{([^}]+)\}")

        def expand_value(value: Any) -> Any:
            if isinstance(value, str):
                return pattern.sub(lambda m: os.getenv(m.group(1), m.group(0)), value)
            if isinstance(value, dict):
                return {k: expand_value(v) for k, v in value.items()}
            if isinstance(value, list):
                return [expand_value(item) for item in value]
            return value

        return expand_value(config)

    def _parse_config(self, raw: dict[str, Any]) -> ExperimentConfig:
        raw = dict(raw)
        preset_name = raw.pop("preset", None) or self.preset or "desk"
        if preset_name not in PRESETS:
            raise ConfigError(
                f"Unknown preset '{preset_name}'; choose one of {', '.join(PRESETS)}"
            )
        merged = deep_merge(PRESETS[preset_name], raw)
        try:
            return ExperimentConfig.model_validate(merged)
        except ValidationError as e:
            first = e.errors()[0]
            raise ConfigError(
                f"Invalid configuration value at '{_format_location(first['loc'])}': "
                f"{first['msg']} ({e.error_count()} error(s) in total)"
            ) from e
