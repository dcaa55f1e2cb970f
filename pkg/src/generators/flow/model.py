"""Plain pre-norm transformer predicting flow velocities over latent tokens."""

from __future__ import annotations

import torch
from torch import nn

from src.configs.schemas import FlowConfig
from src.errors import InputError
from src.modules.blocks import TransformerBlock, sinusoidal_embedding


class FlowDenoiser(nn.Module):
    """``v_θ(z_t, t, class)`` for ``(B, N, d_lat)`` latents.

    The timestep enters through sinusoidal features and an MLP; the class
    through an embedding table whose last row is the null class. Both are
    added to every token.
    """

    def __init__(
        self,
        config: FlowConfig,
        *,
        latent_dim: int,
        token_count: int,
        num_classes: int,
    ) -> None:
        super().__init__()
        self.config = config
        self.latent_dim = latent_dim
        self.token_count = token_count
        self.num_classes = num_classes
        self.null_class = num_classes
        width = config.width
        self.in_proj = nn.Linear(latent_dim, width)
        self.pos_embed = nn.Parameter(torch.zeros(1, token_count, width))
        self.time_mlp = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))
        self.class_embed = nn.Embedding(num_classes + 1, width)
        self.blocks = nn.ModuleList(
            TransformerBlock(width, config.heads, config.mlp_ratio) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(width)
        self.out_proj = nn.Linear(width, latent_dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.class_embed.weight, std=0.02)

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, class_ids: torch.Tensor) -> torch.Tensor:
        if z_t.shape[1:] != (self.token_count, self.latent_dim):
            raise InputError(
                f"Expected latents (B, {self.token_count}, {self.latent_dim}), got {tuple(z_t.shape)}"
            )
        if class_ids.numel() and (class_ids.min() < 0 or class_ids.max() > self.num_classes):
            raise InputError(f"Class id outside [0, {self.num_classes}]")
        # Scale t so sinusoidal features resolve differences of 1e-3.
        time = self.time_mlp(sinusoidal_embedding(t * 1000.0, self.config.width).to(z_t))
        cond = (time + self.class_embed(class_ids))[:, None, :]
        x = self.in_proj(z_t) + self.pos_embed + cond
        for block in self.blocks:
            x = block(x)
        return self.out_proj(self.norm(x))


__all__ = ["FlowDenoiser"]
