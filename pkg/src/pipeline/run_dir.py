"""Run directories and their ``metadata.json``.

A run directory is named ``<config hash[:12]>-<YYYYmmdd-HHMMSS>`` so any file
inside it traces back to the exact configuration that produced it.
"""

from __future__ import annotations

import json
import logging
import shlex
import sys
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any

from src.config import RUNS_DIR
from src.configs.loader import dump_config
from src.configs.schemas import RunConfig
from src.utils import config_hash


logger = logging.getLogger(__name__)

_TRACKED_PACKAGES = ("torch", "torchvision", "numpy", "scipy", "pandas", "plotly", "pydantic")


def run_config_hash(config: RunConfig) -> str:
    return config_hash(dump_config(config))


def create_run_dir(
    config: RunConfig,
    *,
    root: str | Path | None = None,
    label: str | None = None,
    now: datetime | None = None,
) -> Path:
    """Create and return a fresh run directory for *config*."""
    base = Path(root or config.run.output_root or RUNS_DIR)
    stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
    name = f"{run_config_hash(config)[:12]}-{stamp}"
    if label:
        name = f"{name}-{label}"
    candidate = base / name
    suffix = 1
    while candidate.exists():
        candidate = base / f"{name}.{suffix}"
        suffix += 1
    candidate.mkdir(parents=True)
    logger.info("Run directory: %s", candidate)
    return candidate


def package_versions() -> dict[str, str]:
    versions = {}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_metadata(
    run_dir: Path,
    config: RunConfig,
    *,
    command: list[str] | None = None,
    checkpoints: dict[str, str] | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write ``metadata.json`` with the exact command line and provenance hashes."""
    argv = command if command is not None else sys.argv
    payload = {
        "command": shlex.join(argv),
        "config_hash": run_config_hash(config),
        "seed": config.run.seed,
        "deterministic": config.run.deterministic,
        "checkpoints": checkpoints or {},
        "packages": package_versions(),
        "python": sys.version.split()[0],
        "config": dump_config(config),
        **(extra or {}),
    }
    path = run_dir / "metadata.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


__all__ = ["create_run_dir", "package_versions", "run_config_hash", "write_metadata"]
