import json
import logging
import os

from pydantic import ValidationError

from kecusp.core.run_config import RunConfig

logger = logging.getLogger(__name__)

PRESETS_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "presets")


class ConfigError(ValueError):
    """Raised for unreadable configs and unknown presets."""

    pass


def load_json(file_path):
    """Loads a JSON document from disk."""
    if not os.path.exists(file_path):
        raise ConfigError(f"Config file not found: {file_path}")
    with open(file_path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{file_path} is not valid JSON: {e}")


def available_presets():
    return sorted(
        name[: -len(".json")] for name in os.listdir(PRESETS_DIR) if name.endswith(".json")
    )


def load_config(file_path) -> RunConfig:
    """Parses and validates a run config; raises pydantic's ValidationError on bad fields."""
    config = RunConfig.model_validate(load_json(file_path))
    logger.info(f"[config] Loaded {config.command.value} config from {file_path}")
    return config


def load_preset(name) -> RunConfig:
    path = os.path.join(PRESETS_DIR, f"{name}.json")
    if not os.path.exists(path):
        raise ConfigError(
            f"Unknown preset '{name}'. Available presets: {', '.join(available_presets())}"
        )
    return RunConfig.model_validate(load_json(path))


def format_validation_error(error: ValidationError) -> str:
    """One line per failing field, with dotted field paths such as domain.t_min."""
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "config"
        lines.append(f"{path}: {item['msg']}")
    return "; ".join(lines)
