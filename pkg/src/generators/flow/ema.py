"""Exponential moving average of model parameters."""

from __future__ import annotations

import copy

import torch
from torch import nn


def make_ema(model: nn.Module) -> nn.Module:
    """Frozen deep copy of *model* to hold the averaged weights."""
    ema = copy.deepcopy(model)
    ema.requires_grad_(False)
    return ema.eval()


@torch.no_grad()
def ema_update(model: nn.Module, ema_model: nn.Module, decay: float) -> nn.Module:
    """``ema ← decay·ema + (1 − decay)·model`` for every parameter; buffers are copied."""
    for ema_param, param in zip(ema_model.parameters(), model.parameters(), strict=True):
        ema_param.mul_(decay).add_(param.detach(), alpha=1.0 - decay)
    for ema_buffer, buffer in zip(ema_model.buffers(), model.buffers(), strict=True):
        ema_buffer.copy_(buffer)
    return ema_model


__all__ = ["ema_update", "make_ema"]
