"""Per-channel latent statistics and the normalisation they define.

Normalised latents are wrapped in :class:`NormalizedLatents`, which records
the fingerprint of the statistics used; the flow trainer refuses raw tensors
and tensors normalised with different statistics.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch

from src.errors import InputError, NumericError


@dataclass(frozen=True)
class LatentStats:
    """Frozen per-channel ``mean`` and ``std`` over the training latents."""

    mean: torch.Tensor
    std: torch.Tensor
    sample_count: int
    fingerprint: str = field(init=False)

    def __post_init__(self) -> None:
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise InputError("LatentStats mean/std must be matching 1-D tensors")
        if not (self.std > 0).all():
            raise NumericError("Latent std must be strictly positive in every channel")
        digest = hashlib.sha256()
        for tensor in (self.mean, self.std):
            digest.update(tensor.detach().cpu().double().numpy().tobytes())
        object.__setattr__(self, "fingerprint", digest.hexdigest()[:16])

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict[str, object]:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> LatentStats:
        return cls(
            mean=torch.tensor(data["mean"], dtype=torch.float32),
            std=torch.tensor(data["std"], dtype=torch.float32),
            sample_count=int(data["sample_count"]),
        )


@dataclass(frozen=True)
class NormalizedLatents:
    values: torch.Tensor
    fingerprint: str


def compute_latent_stats(latents: torch.Tensor) -> LatentStats:
    """Statistics over every token of ``(S, N, d)`` (or ``(S, d)``) latents."""
    if latents.numel() == 0:
        raise InputError("Cannot compute statistics of an empty latent set")
    flat = latents.detach().reshape(-1, latents.shape[-1]).double()
    return LatentStats(
        mean=flat.mean(0).float(),
        std=flat.std(0, unbiased=False).float(),
        sample_count=latents.shape[0],
    )


def normalize_latents(z: torch.Tensor, stats: LatentStats) -> NormalizedLatents:
    """``(z − mean) / std`` per channel."""
    if z.shape[-1] != stats.dim:
        raise InputError(f"Latent width {z.shape[-1]} != stats width {stats.dim}")
    mean, std = stats.mean.to(z), stats.std.to(z)
    return NormalizedLatents((z - mean) / std, stats.fingerprint)


def denormalize_latents(z: NormalizedLatents | torch.Tensor, stats: LatentStats) -> torch.Tensor:
    """Inverse of :func:`normalize_latents`."""
    values = z.values if isinstance(z, NormalizedLatents) else z
    return values * stats.std.to(values) + stats.mean.to(values)


__all__ = [
    "LatentStats",
    "NormalizedLatents",
    "compute_latent_stats",
    "denormalize_latents",
    "normalize_latents",
]
