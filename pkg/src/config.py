"""Project-wide configuration constants."""

from pathlib import Path


# Base directory of the ``src`` package
BASE_DIR = Path(__file__).resolve().parent

# Shipped YAML presets
CONFIGS_DIR = BASE_DIR / "configs"
DESK_CONFIG_PATH = CONFIGS_DIR / "desk.yaml"
FULL_SCALE_CONFIG_PATH = CONFIGS_DIR / "full_scale.yaml"

# Default root for run directories (one sub-directory per config hash + time)
RUNS_DIR = BASE_DIR.parent / "runs"

# Environment variable used as dataset-root fallback when a config omits a path
DATA_DIR_ENV_VAR: str = "TOK_DATA_DIR"

# ---------------------------------------------------------------------------
# Binary container identifiers
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC: bytes = b"RTCK"
CHECKPOINT_VERSION: int = 1

PACKED_DATASET_MAGIC: bytes = b"RTPK"

# PSNR reported for identical images (MSE == 0)
PSNR_CAP_DB: float = 99.0
