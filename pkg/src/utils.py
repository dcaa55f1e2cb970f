"""Utility functions shared by training, sampling and evaluation.

Device selection, seeding, determinism switches and the hashing helpers that
make every artifact traceable to (config hash, checkpoint hash, seed).
"""

# %%
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
from pathlib import Path
from typing import Any

import numpy as np
import torch


logger = logging.getLogger(__name__)


def get_device(provider: str = "auto") -> torch.device:
    """Return the torch device for *provider*.

    Args:
        provider: One of ``auto``, ``cpu``, ``cuda`` or ``mps``. ``auto`` picks
            CUDA, then MPS, then CPU.

    Returns:
        The selected device.

    Raises:
        ValueError: If an unsupported provider is specified or is unavailable.
    """
    if provider == "auto":
        if torch.cuda.is_available():
            return torch.device("cuda")
        if torch.backends.mps.is_available():
            return torch.device("mps")
        return torch.device("cpu")
    if provider == "cpu":
        return torch.device("cpu")
    if provider == "cuda":
        if not torch.cuda.is_available():
            raise ValueError("Device provider 'cuda' requested but CUDA is unavailable")
        return torch.device("cuda")
    if provider == "mps":
        if not torch.backends.mps.is_available():
            raise ValueError("Device provider 'mps' requested but MPS is unavailable")
        return torch.device("mps")
    raise ValueError(
        f"Unsupported device provider: {provider}. Supported providers are: "
        "auto, cpu, cuda, mps"
    )


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; return a dedicated CPU generator."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def enable_determinism(enabled: bool = True) -> None:
    """Force deterministic kernels and single-threaded math.

    Used by ``--deterministic`` runs so two invocations produce bit-identical
    metric files.
    """
    if not enabled:
        return
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(True)
    torch.backends.cudnn.benchmark = False
    torch.set_num_threads(1)
    logger.info("Deterministic mode: single-threaded, deterministic kernels")


def canonical_json(payload: Any) -> str:
    """Serialise *payload* with sorted keys and no whitespace variance."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(payload: dict[str, Any]) -> str:
    """Return the sha256 hex digest of a configuration snapshot."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_sha256(path: str | Path) -> str:
    """Return the sha256 hex digest of the file at *path*."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as fp:
        for block in iter(lambda: fp.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def state_dict_sha256(state: dict[str, torch.Tensor]) -> str:
    """Hash a state dict by parameter name order, dtype, shape and bytes."""
    digest = hashlib.sha256()
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tensor.dtype).encode("utf-8"))
        digest.update(str(tuple(tensor.shape)).encode("utf-8"))
        array = tensor.numpy()
        digest.update(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())
    return digest.hexdigest()


__all__ = [
    "canonical_json",
    "config_hash",
    "enable_determinism",
    "file_sha256",
    "get_device",
    "seed_everything",
    "state_dict_sha256",
]
