"""Generate commented experiment configs and map hyperparameter blocks."""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel

from src.config import DEFAULT_CONFIG_NAME, PRESETS
from src.models import ConfigGenerationResult, ExperimentConfig, GpHyperParams

RULE = "# " + "=" * 77


def format_toml_value(value: Any) -> str:
    """Render a config value as a TOML literal."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return json.dumps(value.value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, Path):
        return json.dumps(value.as_posix())
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_toml_value(item) for item in value) + "]"
    raise TypeError(f"Cannot render {type(value).__name__} as TOML")


class ConfigGenerator:
    """Writes TOML documents whose keys mirror the configuration models."""

    def generate_default(
        self, output_path: Optional[Path] = None, preset: str = "desk"
    ) -> ConfigGenerationResult:
        """Write a config with every key set to its preset value and documented.

        Args:
            output_path: Where to write; defaults to ``experiment.toml``
            preset: Preset whose values are written

        Raises:
            ValueError: If the preset is unknown
        """
        if preset not in PRESETS:
            raise ValueError(f"Unknown preset '{preset}'; choose one of {', '.join(PRESETS)}")
        if output_path is None:
            output_path = Path(DEFAULT_CONFIG_NAME)

        cfg = ExperimentConfig.model_validate(PRESETS[preset])
        lines, keys = self._generate_toml(cfg, preset)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")

        return ConfigGenerationResult(
            success=True,
            config_file_path=str(output_path.absolute()),
            preset=preset,
            keys_written=keys,
            message=f"Configuration file generated with {keys} keys from preset '{preset}'",
        )

    def _generate_toml(self, cfg: ExperimentConfig, preset: str) -> tuple[list[str], int]:
        lines = [
            "# Rate selection experiment configuration",
            "#",
            f"# Values of the '{preset}' preset. Keys left out fall back to the preset,",
            "# string values may reference environment variables as ${VAR}.",
            "#",
            "",
            "# Preset applied beneath the keys of this file (desk, full, measurement)",
            f"preset = {format_toml_value(preset)}",
            "",
        ]
        body: list[str] = []
        keys = self._emit_model(cfg, "", body)
        lines.extend(body)
        return lines, keys + 1

    def _emit_model(self, model: BaseModel, prefix: str, lines: list[str]) -> int:
        """Append dotted-key lines for every field of model; nested models get a banner."""
        count = 0
        nested = []
        for name, field in type(model).model_fields.items():
            value = getattr(model, name)
            key = f"{prefix}{name}"
            if isinstance(value, BaseModel):
                nested.append((key, value, field.description))
                continue
            if field.description:
                lines.append(f"# {field.description}")
            if value is None:
                lines.append(f"# {key} =")
            else:
                lines.append(f"{key} = {format_toml_value(value)}")
                count += 1
            lines.append("")

        for key, value, description in nested:
            lines.extend([RULE, f"# {description or key}", RULE])
            count += self._emit_model(value, f"{key}.", lines)
        return count

    def generate_map_block(self, hyper: GpHyperParams, log_domain: bool) -> str:
        """``[hyperparameters]`` table of a persisted CDI map."""
        lines = ["# CDI map hyperparameters", "[hyperparameters]"]
        for name in type(hyper).model_fields:
            lines.append(f"{name} = {format_toml_value(getattr(hyper, name))}")
        lines.append(f"log_domain = {format_toml_value(log_domain)}")
        return "\n".join(lines) + "\n"
