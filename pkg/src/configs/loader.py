"""Load, override and snapshot run configurations.

Usage::

    from src.configs.loader import load_run_config

    config = load_run_config("src/configs/desk.yaml", {"run": {"seed": 3}})
"""

from __future__ import annotations

import copy
import logging
import os
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from src.config import DATA_DIR_ENV_VAR, DESK_CONFIG_PATH
from src.configs.schemas import RunConfig
from src.errors import ConfigurationError


logger = logging.getLogger(__name__)


def _deep_merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Return *base* with *overrides* merged in, section by section."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Return the raw mapping stored in a YAML config file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigurationError(f"Config file not found: {config_path}")
    raw = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(
            f"Config file {config_path} must contain a mapping of sections, "
            f"got {type(raw).__name__}"
        )
    return raw


def validate_config(raw: dict[str, Any]) -> RunConfig:
    """Validate a raw mapping; pydantic errors become ``ConfigurationError``."""
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid configuration:\n{exc}") from exc
    if config.data.path is None and os.getenv(DATA_DIR_ENV_VAR):
        config.data.path = Path(os.environ[DATA_DIR_ENV_VAR])
        logger.info("Dataset path taken from %s: %s", DATA_DIR_ENV_VAR, config.data.path)
    return config


def load_run_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Load *path* (default: the desk preset), apply *overrides*, validate.

    Args:
        path: YAML file with one mapping per section.
        overrides: Nested mapping merged on top of the file, e.g.
            ``{"run": {"seed": 1}}``.

    Returns:
        The validated configuration.

    Raises:
        ConfigurationError: Missing file, unknown key or violated invariant.
    """
    raw = read_config_file(path if path is not None else DESK_CONFIG_PATH)
    if overrides:
        raw = _deep_merge(raw, overrides)
    return validate_config(raw)


def dump_config(config: RunConfig) -> dict[str, Any]:
    """Return a JSON-compatible snapshot of *config* (stored in checkpoints)."""
    return config.model_dump(mode="json")


def with_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Re-validate *config* with nested *overrides* merged in."""
    return validate_config(_deep_merge(dump_config(config), overrides))


__all__ = [
    "dump_config",
    "load_run_config",
    "read_config_file",
    "validate_config",
    "with_overrides",
]
