"""Codebook utilisation report: usage fraction and per-entry histogram."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import pandas as pd
import torch

from src.bottleneck.quantizer import codebook_usage
from src.errors import InputError


@dataclass(frozen=True)
class UsageReport:
    fraction: float
    counts: torch.Tensor
    stream_length: int

    @property
    def codebook_size(self) -> int:
        return int(self.counts.numel())

    def to_frame(self) -> pd.DataFrame:
        """One row per codebook entry: ``entry, count``."""
        return pd.DataFrame({"entry": range(self.codebook_size), "count": self.counts.tolist()})

    def write_csv(self, path: str | Path) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(out, index=False)
        return out


def usage_report(index_stream: Iterable[torch.Tensor] | torch.Tensor, codebook_size: int) -> UsageReport:
    """Count every id in *index_stream* and the fraction of entries used."""
    chunks = [index_stream] if isinstance(index_stream, torch.Tensor) else list(index_stream)
    flat = (
        torch.cat([torch.as_tensor(c).reshape(-1).long().cpu() for c in chunks])
        if chunks
        else torch.empty(0, dtype=torch.long)
    )
    fraction = codebook_usage(flat, codebook_size)
    if flat.min() < 0 or flat.max() >= codebook_size:
        raise InputError(f"Index outside [0, {codebook_size}) in usage stream")
    counts = torch.bincount(flat, minlength=codebook_size)
    return UsageReport(fraction=fraction, counts=counts, stream_length=int(flat.numel()))


__all__ = ["UsageReport", "usage_report"]
