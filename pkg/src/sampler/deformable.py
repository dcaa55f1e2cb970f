"""Multi-level deformable cross-attention from anchor queries to a feature pyramid.

Every query predicts, per head and per pyramid level, ``K`` offsets around its
reference point plus one attention logit per sampled point. Values are read by
bilinear interpolation with border replication and combined with a softmax
over all ``L·K`` points of that head.

Tensor layouts used throughout:

- levels: channel-last grids ``(B, H, W, D)``
- offsets: ``(B, N, M, L, K, 2)`` in grid-cell units, ``(x, y)`` order
- weights: ``(B, N, M, L, K)``, softmax over the trailing ``L·K`` entries
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from src.configs.schemas import SamplerConfig
from src.encoder.pyramid import FeaturePyramid
from src.errors import ConfigurationError
from src.modules.blocks import Mlp
from src.sampler.anchors import AnchorQuerySet, init_anchor_grid


logger = logging.getLogger(__name__)


def bilinear_sample(grid: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Bilinearly interpolate a channel-last grid at unit-square points.

    Cell ``(r, c)`` of an ``H×W`` grid is centred at
    ``((c + 0.5) / W, (r + 0.5) / H)``; coordinates outside the span of the
    cell centres are clamped to the border.

    Args:
        grid: ``(H, W, D)`` or ``(B, H, W, D)``.
        points: ``(2,)``, ``(P, 2)`` or ``(B, P, 2)`` as ``(x, y)``.

    Returns:
        ``(D,)``, ``(P, D)`` or ``(B, P, D)`` matching the inputs.
    """
    unbatched = grid.ndim == 3
    single = points.ndim == 1
    if unbatched:
        grid = grid.unsqueeze(0)
    if single:
        points = points.view(1, 2)
    if points.ndim == 2:
        points = points.unsqueeze(0).expand(grid.shape[0], -1, -1)
    source = grid.permute(0, 3, 1, 2)
    coords = (2.0 * points - 1.0).unsqueeze(2).to(source.dtype)
    sampled = F.grid_sample(
        source, coords, mode="bilinear", padding_mode="border", align_corners=False
    )
    out = sampled.squeeze(-1).transpose(1, 2)  # (B, P, D)
    if unbatched:
        out = out.squeeze(0)
    if single:
        out = out.squeeze(-2)
    return out


class DeformableLayer(nn.Module):
    """One pre-norm deformable cross-attention layer followed by a feed-forward block.

    ``offset_head`` and ``weight_head`` start at zero, so an untrained layer
    samples every level exactly at the reference points with uniform weights.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        num_levels: int,
        points: int,
        ffn_ratio: float = 4.0,
    ) -> None:
        super().__init__()
        if num_levels * points == 0:
            raise ConfigurationError(
                f"Deformable attention needs L·K > 0, got L={num_levels} K={points}"
            )
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.num_levels = num_levels
        self.points = points
        self.head_dim = dim // heads
        self.norm_query = nn.LayerNorm(dim)
        self.offset_head = nn.Linear(dim, heads * num_levels * points * 2)
        self.weight_head = nn.Linear(dim, heads * num_levels * points)
        self.value_proj = nn.Linear(dim, dim)
        self.output_proj = nn.Linear(dim, dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = Mlp(dim, int(dim * ffn_ratio))
        self.reset_sampling_heads()

    @torch.no_grad()
    def reset_sampling_heads(self) -> None:
        """Zero offsets and uniform weights: pure reference-point sampling."""
        for head in (self.offset_head, self.weight_head):
            head.weight.zero_()
            head.bias.zero_()

    def sampling_offsets(self, queries: torch.Tensor) -> torch.Tensor:
        """Raw offsets ``(B, N, M, L, K, 2)`` in grid-cell units."""
        B, N, _ = queries.shape
        return self.offset_head(queries).view(
            B, N, self.heads, self.num_levels, self.points, 2
        )

    def sampling_weights(self, queries: torch.Tensor) -> torch.Tensor:
        """Softmax weights ``(B, N, M, L, K)`` summing to one per (query, head)."""
        B, N, _ = queries.shape
        logits = self.weight_head(queries).view(B, N, self.heads, -1)
        weights = F.softmax(logits, dim=-1)
        return weights.view(B, N, self.heads, self.num_levels, self.points)

    def attend(
        self,
        queries: torch.Tensor,
        reference_points: torch.Tensor,
        levels: Sequence[torch.Tensor],
    ) -> torch.Tensor:
        """Deformable cross-attention without residual, norm or feed-forward.

        Args:
            queries: ``(B, N, D)``.
            reference_points: ``(N, 2)`` in ``[0, 1]²``.
            levels: ``L`` grids ``(B, H_l, W_l, D)``.

        Returns:
            ``output_proj(Σ weight · value)`` of shape ``(B, N, D)``.
        """
        if len(levels) != self.num_levels:
            raise ConfigurationError(
                f"Layer built for {self.num_levels} levels, got {len(levels)}"
            )
        B, N, D = queries.shape
        M, hd = self.heads, self.head_dim
        offsets = self.sampling_offsets(queries)
        weights = self.sampling_weights(queries)
        aggregated = queries.new_zeros(B * M, hd, N)
        for index, level in enumerate(levels):
            if level.shape[-1] != D:
                raise ConfigurationError(
                    f"Level {index} width {level.shape[-1]} != query width {D}"
                )
            _, H, W, _ = level.shape
            values = self.value_proj(level).view(B, H, W, M, hd)
            values = values.permute(0, 3, 4, 1, 2).reshape(B * M, hd, H, W)
            scale = offsets.new_tensor([W, H])
            locations = reference_points[None, :, None, None, :] + offsets[:, :, :, index] / scale
            coords = (2.0 * locations - 1.0).permute(0, 2, 1, 3, 4).reshape(B * M, N, -1, 2)
            sampled = F.grid_sample(
                values, coords, mode="bilinear", padding_mode="border", align_corners=False
            )  # (B·M, hd, N, K)
            level_weights = weights[:, :, :, index].permute(0, 2, 1, 3).reshape(B * M, 1, N, -1)
            aggregated = aggregated + (sampled * level_weights).sum(-1)
        out = aggregated.view(B, M, hd, N).permute(0, 3, 1, 2).reshape(B, N, D)
        return self.output_proj(out)

    def forward(
        self,
        queries: torch.Tensor,
        reference_points: torch.Tensor,
        levels: Sequence[torch.Tensor],
    ) -> torch.Tensor:
        x = queries + self.attend(self.norm_query(queries), reference_points, levels)
        return x + self.ffn(self.norm_ffn(x))


def sample_regions(
    pyramid: FeaturePyramid,
    anchors: AnchorQuerySet,
    layers: Sequence[DeformableLayer],
) -> torch.Tensor:
    """Refine anchor queries through *layers* against *pyramid*.

    Reference points stay fixed; only query contents change from layer to
    layer. No locality is guaranteed: after training, token ``i`` may depend
    on image content far from its reference point.

    Returns:
        Region-adaptive tokens ``Z_r`` of shape ``(B, N, D)``.
    """
    if not layers:
        raise ConfigurationError("sample_regions needs at least one deformable layer")
    grids = [level.grid for level in pyramid.levels]
    if grids[0].shape[-1] != anchors.dim:
        raise ConfigurationError(
            f"Pyramid width {grids[0].shape[-1]} != anchor width {anchors.dim}"
        )
    x = anchors.expand(grids[0].shape[0])
    for layer in layers:
        x = layer(x, anchors.reference_points, grids)
    return x


def plain_grid_tokens(pyramid: FeaturePyramid) -> torch.Tensor:
    """Deepest level flattened row-major to ``(B, H·W, D)`` (pilot grid mode)."""
    grid = pyramid.deepest.grid
    B, H, W, D = grid.shape
    return grid.reshape(B, H * W, D)


class RegionSampler(nn.Module):
    """Anchor set plus a stack of ``depth`` deformable layers."""

    def __init__(
        self,
        config: SamplerConfig,
        dim: int,
        num_levels: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.config = config
        self.anchors = init_anchor_grid(config.token_count, dim, generator=generator)
        self.layers = nn.ModuleList(
            DeformableLayer(dim, config.heads, num_levels, config.points, config.ffn_ratio)
            for _ in range(config.depth)
        )
        logger.debug(
            "RegionSampler: N=%d d1=%d M=%d K=%d L=%d",
            config.token_count,
            config.depth,
            config.heads,
            config.points,
            num_levels,
        )

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        return sample_regions(pyramid, self.anchors, self.layers)


__all__ = [
    "DeformableLayer",
    "RegionSampler",
    "bilinear_sample",
    "plain_grid_tokens",
    "sample_regions",
]
