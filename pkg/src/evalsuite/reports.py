"""Metric report rows and their CSV serialisation.

Every row carries the provenance needed to trace a number back to its inputs:
``metric, value, split, checkpoint_hash, proxy_hash, seed``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd


logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("metric", "value", "split", "checkpoint_hash", "proxy_hash", "seed")


@dataclass(frozen=True)
class MetricRow:
    metric: str
    value: float
    split: str
    checkpoint_hash: str
    proxy_hash: str
    seed: int


@dataclass
class MetricReport:
    """Accumulates rows sharing one provenance (checkpoint, proxy, seed)."""

    checkpoint_hash: str
    proxy_hash: str
    seed: int
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, metric: str, value: float, split: str) -> None:
        self.rows.append(
            MetricRow(metric, float(value), split, self.checkpoint_hash, self.proxy_hash, self.seed)
        )

    def extend(self, values: dict[str, float], split: str) -> None:
        for metric, value in values.items():
            self.add(metric, value, split)

    def value(self, metric: str, split: str) -> float:
        for row in self.rows:
            if row.metric == metric and row.split == split:
                return row.value
        raise KeyError(f"No {metric!r} row for split {split!r}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=list(METRIC_COLUMNS))

    def write_csv(self, path: str | Path) -> Path:
        """Write the report; values use ``repr``-exact float formatting."""
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(out, index=False, float_format="%.17g")
        logger.info("Wrote %d metric rows to %s", len(self.rows), out)
        return out


def read_metric_csv(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"checkpoint_hash": str, "proxy_hash": str})
    missing = set(METRIC_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{path} is not a metric report, missing columns {sorted(missing)}")
    return frame


__all__ = ["METRIC_COLUMNS", "MetricReport", "MetricRow", "read_metric_csv"]
