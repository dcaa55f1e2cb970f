"""Token and latent dumps.

Token files are little-endian ``u32``: a header ``(count, N, N_cb)`` then
``count`` rows of ``N + 1`` values (class id followed by ``N`` codebook ids).
Continuous latents are written as ``.npz`` with ``latents`` and ``class_ids``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from src.errors import InputError


_HEADER = struct.Struct("<III")


@dataclass(frozen=True)
class TokenFile:
    class_ids: torch.Tensor
    indices: torch.Tensor
    codebook_size: int

    @property
    def token_count(self) -> int:
        return int(self.indices.shape[1])


def write_tokens(
    path: str | Path,
    class_ids: torch.Tensor,
    indices: torch.Tensor,
    codebook_size: int,
) -> Path:
    if indices.ndim != 2 or class_ids.shape != (indices.shape[0],):
        raise InputError(
            f"Expected (count,) class ids and (count, N) indices, got "
            f"{tuple(class_ids.shape)} and {tuple(indices.shape)}"
        )
    if indices.numel() and (indices.min() < 0 or indices.max() >= codebook_size):
        raise InputError(f"Token ids must lie in [0, {codebook_size})")
    count, n = indices.shape
    rows = torch.cat([class_ids[:, None], indices], dim=1).cpu().numpy().astype("<u4")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(_HEADER.pack(count, n, codebook_size) + rows.tobytes())
    return out


def read_tokens(path: str | Path) -> TokenFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path} is too short to be a token file")
    count, n, codebook_size = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 4 * count * (n + 1)
    if len(raw) != expected:
        raise InputError(f"{path}: expected {expected} bytes, found {len(raw)}")
    rows = np.frombuffer(raw, dtype="<u4", offset=_HEADER.size).reshape(count, n + 1)
    rows = torch.from_numpy(rows.astype(np.int64))
    return TokenFile(class_ids=rows[:, 0].clone(), indices=rows[:, 1:].clone(), codebook_size=codebook_size)


def write_latents(path: str | Path, latents: torch.Tensor, class_ids: torch.Tensor) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, latents=latents.detach().cpu().numpy(), class_ids=class_ids.cpu().numpy())
    return out


def read_latents(path: str | Path) -> tuple[torch.Tensor, torch.Tensor]:
    with np.load(path) as data:
        return torch.from_numpy(data["latents"]), torch.from_numpy(data["class_ids"])


__all__ = ["TokenFile", "read_latents", "read_tokens", "write_latents", "write_tokens"]
