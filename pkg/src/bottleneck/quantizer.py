"""ℓ2-normalised codebook quantization with a straight-through estimator.

Both the incoming vectors and the codebook rows are normalised before the
nearest-neighbour search, so Euclidean argmin equals inner-product argmax.
Codebook learning is purely gradient based (codebook + commitment losses);
there is no EMA update and no dead-entry revival.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from src.errors import ConfigurationError, InputError


logger = logging.getLogger(__name__)


class Codebook(nn.Module):
    """Raw ``(N_cb, d_code)`` embedding table plus per-entry usage counters.

    Rows are unconstrained parameters; every read goes through
    :meth:`normalized`.
    """

    def __init__(self, size: int, dim: int, generator: torch.Generator | None = None) -> None:
        super().__init__()
        if size < 1 or dim < 1:
            raise ConfigurationError(f"Codebook needs size ≥ 1 and dim ≥ 1, got {size}×{dim}")
        self.embedding = nn.Parameter(torch.randn(size, dim, generator=generator))
        self.register_buffer("usage_counts", torch.zeros(size, dtype=torch.long))

    @classmethod
    def from_entries(cls, entries: torch.Tensor) -> Codebook:
        """Codebook holding exactly *entries* (used by fixtures and imports)."""
        if entries.ndim != 2 or entries.shape[0] == 0:
            raise ConfigurationError(f"Codebook entries must be (N≥1, d), got {tuple(entries.shape)}")
        book = cls(entries.shape[0], entries.shape[1]).to(entries.dtype)
        with torch.no_grad():
            book.embedding.copy_(entries)
        return book

    @property
    def size(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def normalized(self) -> torch.Tensor:
        """Unit-norm codebook rows ``ĉ``."""
        return F.normalize(self.embedding, dim=-1)

    def reset_usage(self) -> None:
        self.usage_counts.zero_()


@dataclass(frozen=True)
class DiscreteLatent:
    """Result of one quantization call.

    Attributes:
        indices: ``(..., N)`` codebook ids.
        quantized: Straight-through output; its values are the selected unit
            codebook rows, its gradient flows to ``z_normalized``.
        z_normalized: ``ẑ``, the normalised input the search ran on.
    """

    indices: torch.Tensor
    quantized: torch.Tensor
    z_normalized: torch.Tensor


@dataclass(frozen=True)
class VQLosses:
    """Codebook loss ``‖sg(ẑ) − ĉ‖²`` and weighted commitment ``β‖sg(ĉ) − ẑ‖²``."""

    codebook: torch.Tensor
    commitment: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.codebook + self.commitment


def nearest_indices(z_normalized: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """Argmin of squared distance over unit vectors; ties pick the lowest id."""
    distances = (
        z_normalized.pow(2).sum(-1, keepdim=True)
        + codes.pow(2).sum(-1)
        - 2.0 * z_normalized @ codes.T
    )
    return distances.argmin(dim=-1)


def quantize(
    z: torch.Tensor,
    codebook: Codebook,
    *,
    beta: float = 0.25,
    track_usage: bool = True,
) -> tuple[DiscreteLatent, VQLosses]:
    """Map each row of *z* to its nearest normalised codebook entry.

    Args:
        z: ``(..., d_code)`` down-projected tokens.
        codebook: The codebook; its usage counters are updated in place
            when *track_usage* is set.
        beta: Commitment weight.

    Raises:
        ConfigurationError: Empty codebook or width mismatch.
        InputError: Non-finite input.
    """
    if codebook.size == 0:
        raise ConfigurationError("Cannot quantize against an empty codebook")
    if z.shape[-1] != codebook.dim:
        raise ConfigurationError(f"Input width {z.shape[-1]} != code dim {codebook.dim}")
    if not torch.isfinite(z).all():
        raise InputError("quantize received non-finite vectors")
    z_normalized = F.normalize(z, dim=-1)
    codes = codebook.normalized()
    indices = nearest_indices(z_normalized.detach(), codes.detach())
    selected = codes[indices]
    quantized = z_normalized + (selected - z_normalized).detach()
    losses = VQLosses(
        codebook=F.mse_loss(selected, z_normalized.detach()),
        commitment=beta * F.mse_loss(selected.detach(), z_normalized),
    )
    if track_usage:
        with torch.no_grad():
            codebook.usage_counts.add_(
                torch.bincount(indices.reshape(-1), minlength=codebook.size)
            )
    return DiscreteLatent(indices, quantized, z_normalized), losses


def dequantize(indices: torch.Tensor, codebook: Codebook) -> torch.Tensor:
    """Look up normalised codebook rows for *indices* (``(..., N)`` → ``(..., N, d)``).

    Raises:
        InputError: Non-integer or out-of-range ids.
    """
    if indices.dtype.is_floating_point or indices.dtype == torch.bool:
        raise InputError(f"Codebook indices must be integers, got {indices.dtype}")
    if indices.numel() and (indices.min() < 0 or indices.max() >= codebook.size):
        raise InputError(
            f"Codebook index out of range [0, {codebook.size}): "
            f"min={indices.min().item()} max={indices.max().item()}"
        )
    return codebook.normalized()[indices]


class UsageTracker:
    """Streaming distinct-id counter for codebook utilisation."""

    def __init__(self, codebook_size: int) -> None:
        if codebook_size < 1:
            raise ConfigurationError(f"codebook_size must be positive, got {codebook_size}")
        self.codebook_size = codebook_size
        self.seen = torch.zeros(codebook_size, dtype=torch.bool)
        self.tokens = 0

    def update(self, indices: torch.Tensor) -> float:
        """Mark *indices* as used and return the running usage fraction."""
        flat = indices.detach().reshape(-1).cpu().long()
        if flat.numel() and (flat.min() < 0 or flat.max() >= self.codebook_size):
            raise InputError(f"Index outside [0, {self.codebook_size}) in usage stream")
        self.seen[flat] = True
        self.tokens += flat.numel()
        return self.fraction

    @property
    def fraction(self) -> float:
        return self.seen.sum().item() / self.codebook_size


def codebook_usage(index_stream: Iterable[torch.Tensor] | torch.Tensor, codebook_size: int) -> float:
    """Fraction of codebook entries that appear at least once in *index_stream*.

    Raises:
        InputError: The stream holds no indices.
    """
    chunks = [index_stream] if isinstance(index_stream, torch.Tensor) else index_stream
    tracker = UsageTracker(codebook_size)
    for chunk in chunks:
        tracker.update(torch.as_tensor(chunk))
    if tracker.tokens == 0:
        raise InputError("codebook_usage needs a non-empty index stream")
    logger.debug("usage %.4f over %d tokens", tracker.fraction, tracker.tokens)
    return tracker.fraction


__all__ = [
    "Codebook",
    "DiscreteLatent",
    "UsageTracker",
    "VQLosses",
    "codebook_usage",
    "dequantize",
    "nearest_indices",
    "quantize",
]
