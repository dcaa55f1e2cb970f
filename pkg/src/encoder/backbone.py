"""Frozen ViT encoder producing multi-level patch features.

The encoder stands in for a large pre-trained vision foundation model: a
patch-embedding ViT whose intermediate layers are tapped, normalised and split
into a spatial grid plus a global CLS vector per level. It is only ever used
frozen; :func:`extract_multilevel` refuses trainable parameters.

Run a quick shape check with::

    uv run -m src.encoder.backbone
"""

# %%
from __future__ import annotations

import logging
from collections.abc import Sequence

import torch
from torch import nn

from src.configs.schemas import EncoderConfig
from src.encoder.pyramid import FeaturePyramid, PyramidLevel
from src.errors import ConfigurationError, InputError, UsageError
from src.modules.blocks import TransformerBlock


logger = logging.getLogger(__name__)


class FrozenViTEncoder(nn.Module):
    """Patch-4 ViT with CLS, optional built-in registers and layer taps."""

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        width = config.width
        grid = config.grid_size
        self.patch_embed = nn.Conv2d(
            3, width, kernel_size=config.patch_size, stride=config.patch_size
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, width))
        self.registers = (
            nn.Parameter(torch.zeros(1, config.register_count, width))
            if config.register_count
            else None
        )
        # Registers carry no position, as in register-augmented ViTs.
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + grid * grid, width))
        self.blocks = nn.ModuleList(
            TransformerBlock(width, config.heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(width)
        mean = torch.tensor(config.pixel_mean).view(1, 3, 1, 1)
        std = torch.tensor(config.pixel_std).view(1, 3, 1, 1)
        self.register_buffer("pixel_mean", mean, persistent=False)
        self.register_buffer("pixel_std", std, persistent=False)
        self._init_weights()

    def _init_weights(self) -> None:
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        if self.registers is not None:
            nn.init.trunc_normal_(self.registers, std=0.02)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=0.02)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)

    @property
    def is_frozen(self) -> bool:
        """True when no parameter requires gradients."""
        return not any(p.requires_grad for p in self.parameters())

    def freeze(self) -> FrozenViTEncoder:
        """Disable gradients and switch to eval mode permanently."""
        self.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True) -> FrozenViTEncoder:
        # A frozen encoder stays in eval mode even inside a training model.
        return super().train(mode and not self.is_frozen)

    def standardize(self, images: torch.Tensor) -> torch.Tensor:
        """Map [0, 1] pixels to the fixed per-channel mean/std."""
        return (images - self.pixel_mean) / self.pixel_std

    def embed(
        self,
        images: torch.Tensor,
        patch_mask: torch.Tensor | None = None,
        mask_token: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Token sequence ``[CLS | registers | patches]`` before the first block.

        ``patch_mask`` (B, H·W) replaces masked patch embeddings by
        ``mask_token`` (used only by the masked-patch warm-up).
        """
        patches = self.patch_embed(self.standardize(images)).flatten(2).transpose(1, 2)
        if patch_mask is not None and mask_token is not None:
            patches = torch.where(patch_mask[..., None], mask_token.to(patches), patches)
        B = patches.shape[0]
        cls = self.cls_token.expand(B, -1, -1)
        tokens = torch.cat([cls, patches], dim=1) + self.pos_embed
        if self.registers is not None:
            regs = self.registers.expand(B, -1, -1)
            tokens = torch.cat([tokens[:, :1], regs, tokens[:, 1:]], dim=1)
        return tokens

    def forward_features(
        self,
        images: torch.Tensor,
        taps: Sequence[int] | None = None,
        patch_mask: torch.Tensor | None = None,
        mask_token: torch.Tensor | None = None,
    ) -> FeaturePyramid:
        """Run blocks up to the deepest requested tap and collect each tap.

        Gradients flow to *images* (the perceptual proxy and the discriminator
        trunk rely on this); parameters are frozen separately.
        """
        taps = tuple(taps) if taps is not None else tuple(self.config.tap_layers)
        _check_taps(taps, self.config.depth)
        grid = self.config.grid_size
        skip = 1 + self.config.register_count
        x = self.embed(images, patch_mask, mask_token)
        levels: list[PyramidLevel] = []
        for index, block in enumerate(self.blocks[: taps[-1]], start=1):
            x = block(x)
            if index in taps:
                normed = self.norm(x)
                cells = normed[:, skip:].reshape(x.shape[0], grid, grid, -1)
                levels.append(PyramidLevel(grid=cells, cls=normed[:, 0]))
        return FeaturePyramid(
            levels=tuple(levels),
            target=levels[-1].grid,
            source_resolution=self.config.image_size,
            taps=taps,
        )


def _check_taps(taps: Sequence[int], depth: int) -> None:
    if not taps:
        raise ConfigurationError("At least one tap layer is required")
    if any(b <= a for a, b in zip(taps, taps[1:], strict=False)):
        raise ConfigurationError(f"Tap layers must be strictly increasing: {taps}")
    if taps[0] < 1 or taps[-1] > depth:
        raise ConfigurationError(f"Tap layers {taps} must lie in [1, {depth}]")


def _check_images(images: torch.Tensor, config: EncoderConfig) -> torch.Tensor:
    if images.ndim == 3:
        images = images.unsqueeze(0)
    expected = (3, config.image_size, config.image_size)
    if images.ndim != 4 or tuple(images.shape[1:]) != expected:
        raise ConfigurationError(
            f"Image batch shape {tuple(images.shape)} does not match "
            f"(B, {expected[0]}, {expected[1]}, {expected[2]})"
        )
    if not torch.isfinite(images).all():
        raise InputError("Image contains non-finite pixel values")
    return images


def extract_multilevel(
    images: torch.Tensor,
    encoder: FrozenViTEncoder,
    taps: Sequence[int] | None = None,
) -> FeaturePyramid:
    """Extract one pyramid level per tap layer from a frozen encoder.

    Args:
        images: ``(B, 3, S, S)`` or ``(3, S, S)`` pixels in [0, 1].
        encoder: A frozen :class:`FrozenViTEncoder`.
        taps: Optional tap override; any strictly increasing subset of
            ``[1, depth]``. Defaults to the configured tap layers.

    Returns:
        The pyramid; ``pyramid.target`` is the deepest level's grid.

    Raises:
        ConfigurationError: Image shape mismatch or invalid taps.
        InputError: Non-finite pixels.
        UsageError: The encoder still has trainable parameters.
    """
    if not encoder.is_frozen:
        raise UsageError("extract_multilevel requires a frozen encoder; call freeze()")
    images = _check_images(images, encoder.config)
    with torch.no_grad():
        return encoder.forward_features(images, taps)


def build_encoder(config: EncoderConfig) -> FrozenViTEncoder:
    """Construct a frozen encoder initialised according to ``config.init``.

    ``random`` freezes at initialisation; ``external`` loads weights through
    the manifest adapter. ``warmup`` is handled by the caller because it needs
    data (see :func:`src.encoder.warmup.masked_patch_warmup`).
    """
    encoder = FrozenViTEncoder(config)
    if config.init == "external":
        from src.encoder.weights import load_encoder_weights

        load_encoder_weights(encoder, config.weights_manifest)
    if config.init != "warmup":
        encoder.freeze()
    logger.info(
        "Encoder ready: depth=%d width=%d patch=%d taps=%s init=%s",
        config.depth,
        config.width,
        config.patch_size,
        config.tap_layers,
        config.init,
    )
    return encoder


__all__ = ["FrozenViTEncoder", "build_encoder", "extract_multilevel"]


if __name__ == "__main__":  # pragma: no cover
    logging.basicConfig(level=logging.INFO)
    enc = build_encoder(EncoderConfig())
    pyramid = extract_multilevel(torch.rand(2, 3, 32, 32), enc)
    for tap, level in zip(pyramid.taps, pyramid.levels, strict=True):
        logger.info("tap %d → grid %s cls %s", tap, tuple(level.grid.shape), tuple(level.cls.shape))
