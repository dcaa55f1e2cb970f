"""Loss-curve figures written next to the CSV logs."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import pandas as pd
import plotly.graph_objects as go


def loss_figure(log: pd.DataFrame, columns: Sequence[str], title: str) -> go.Figure:
    fig = go.Figure()
    for column in columns:
        if column in log and log[column].notna().any():
            fig.add_trace(go.Scatter(x=log["step"], y=log[column], mode="lines", name=column))
    fig.update_layout(title=title, xaxis_title="step", yaxis_title="loss", template="plotly_white")
    return fig


def write_loss_plot(log: pd.DataFrame, columns: Sequence[str], path: str | Path, title: str) -> Path:
    """Save an HTML loss plot; plotly.js is loaded from its CDN."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    loss_figure(log, columns, title).write_html(out, include_plotlyjs="cdn")
    return out


__all__ = ["loss_figure", "write_loss_plot"]
