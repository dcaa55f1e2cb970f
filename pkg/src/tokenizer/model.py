"""Region-adaptive tokenizer: frozen encoder → projector → sampler → bottleneck → dual decoder.

Two bottlenecks are supported:

- ``discrete``: down-projection to ``code_dim`` and ℓ2-normalised codebook
  lookup; latent tokens are codebook ids.
- ``continuous``: per-level CLS fusion before sampling and a linear
  projection to ``latent_dim``; latent tokens are vectors.

``sampler.mode == "grid"`` replaces the deformable sampler by the flattened
deepest projected level (pilot configuration).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn

from src.bottleneck.continuous import ContinuousProjection, DownProjection, project_continuous
from src.bottleneck.quantizer import Codebook, VQLosses, dequantize, quantize
from src.configs.schemas import TokenizerConfig, TokenizerMode
from src.decoder.dual_decoder import DualDecoder
from src.encoder.backbone import FrozenViTEncoder, build_encoder, extract_multilevel
from src.encoder.projector import LevelProjector, fuse_cls_per_level, project_levels
from src.encoder.pyramid import FeaturePyramid
from src.errors import ConfigurationError, InputError, ModeError
from src.sampler.deformable import RegionSampler, plain_grid_tokens


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncodedImages:
    """Latent tokens of a batch plus what the losses need from encoding.

    ``latent`` is the decoder input: straight-through quantized vectors in
    discrete mode, continuous tokens otherwise. ``indices`` is ``None`` in
    continuous mode and ``vq`` is ``None`` unless discrete.
    """

    latent: torch.Tensor
    indices: torch.Tensor | None
    vq: VQLosses | None
    pyramid: FeaturePyramid


@dataclass(frozen=True)
class TokenizerOutput:
    recon: torch.Tensor
    features: torch.Tensor | None
    target: torch.Tensor
    cls: torch.Tensor
    encoded: EncodedImages


class RegionTokenizer(nn.Module):
    """Full tokenizer built from a :class:`TokenizerConfig`."""

    def __init__(
        self,
        config: TokenizerConfig,
        encoder: FrozenViTEncoder | None = None,
        *,
        beta: float | None = None,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.config = config
        enc_cfg = config.encoder
        self.encoder = encoder if encoder is not None else build_encoder(enc_cfg)
        if self.encoder.config.width != enc_cfg.width:
            raise ConfigurationError("Supplied encoder width differs from config.encoder.width")
        self.level_indices = (
            list(config.sampler.levels)
            if config.sampler.levels is not None
            else list(range(len(enc_cfg.tap_layers)))
        )
        n_levels = len(self.level_indices)
        self.projector = LevelProjector(
            [enc_cfg.width] * n_levels,
            enc_cfg.projector_dim,
            shared=enc_cfg.shared_projector,
            activation=enc_cfg.projector_activation,
        )
        self.sampler = (
            RegionSampler(config.sampler, enc_cfg.projector_dim, n_levels, generator=generator)
            if config.sampler.mode == "region"
            else None
        )
        bottleneck = config.bottleneck
        self.beta = bottleneck.beta if beta is None else beta
        if self.mode == "discrete":
            self.down = DownProjection(enc_cfg.projector_dim, bottleneck.code_dim)
            self.codebook = Codebook(bottleneck.codebook_size, bottleneck.code_dim, generator)
            self.continuous = None
            latent_dim = bottleneck.code_dim
        else:
            self.down = None
            self.codebook = None
            self.continuous = ContinuousProjection(enc_cfg.projector_dim, bottleneck.latent_dim)
            latent_dim = bottleneck.latent_dim
        self.latent_dim = latent_dim
        self.decoder = DualDecoder(
            config.decoder,
            latent_dim=latent_dim,
            grid_size=enc_cfg.grid_size,
            image_size=enc_cfg.image_size,
            feature_dim=enc_cfg.width,
        )
        logger.info(
            "RegionTokenizer: mode=%s sampler=%s N=%d levels=%s latent_dim=%d",
            self.mode,
            config.sampler.mode,
            self.token_count,
            self.level_indices,
            latent_dim,
        )

    @property
    def mode(self) -> TokenizerMode:
        return self.config.mode

    @property
    def token_count(self) -> int:
        return self.config.token_count

    @property
    def codebook_size(self) -> int:
        if self.codebook is None:
            raise ModeError("Continuous tokenizers have no codebook")
        return self.codebook.size

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Every parameter except the frozen encoder's."""
        return [p for p in self.parameters() if p.requires_grad]

    def extract(self, images: torch.Tensor) -> FeaturePyramid:
        return extract_multilevel(images, self.encoder)

    def region_tokens(self, pyramid: FeaturePyramid) -> torch.Tensor:
        """``Z_r`` of shape ``(B, N, projector_dim)`` from a raw pyramid."""
        selected = pyramid.select(self.level_indices)
        projected = project_levels(selected, self.projector)
        if self.mode == "continuous":
            projected = fuse_cls_per_level(projected, self.mode)
        if self.sampler is None:
            return plain_grid_tokens(projected)
        return self.sampler(projected)

    def encode(self, images: torch.Tensor, *, track_usage: bool = False) -> EncodedImages:
        """Tokenize a batch of ``(B, 3, S, S)`` images in [0, 1]."""
        pyramid = self.extract(images)
        z_r = self.region_tokens(pyramid)
        if self.mode == "discrete":
            latent, vq = quantize(
                self.down(z_r), self.codebook, beta=self.beta, track_usage=track_usage
            )
            return EncodedImages(latent.quantized, latent.indices, vq, pyramid)
        latent = project_continuous(z_r, self.continuous, self.mode)
        return EncodedImages(latent.tokens, None, None, pyramid)

    def _check_tokens(self, count: int) -> None:
        if count != self.token_count:
            raise InputError(f"Expected {self.token_count} latent tokens, got {count}")

    def decode_indices(self, indices: torch.Tensor) -> torch.Tensor:
        """Images from ``(B, N)`` codebook ids (discrete mode only)."""
        if self.mode != "discrete":
            raise ModeError("decode_indices requires a discrete tokenizer")
        if indices.ndim == 1:
            indices = indices.unsqueeze(0)
        self._check_tokens(indices.shape[1])
        codes = dequantize(indices, self.codebook)
        return self.decoder(codes, with_features=False).image

    def decode_latents(self, tokens: torch.Tensor) -> torch.Tensor:
        """Images from ``(B, N, latent_dim)`` continuous tokens (continuous mode only)."""
        if self.mode != "continuous":
            raise ModeError("decode_latents requires a continuous tokenizer")
        if tokens.ndim == 2:
            tokens = tokens.unsqueeze(0)
        self._check_tokens(tokens.shape[1])
        if tokens.shape[-1] != self.latent_dim:
            raise InputError(f"Latent width {tokens.shape[-1]} != {self.latent_dim}")
        return self.decoder(tokens, with_features=False).image

    def forward(self, images: torch.Tensor, *, with_features: bool = True) -> TokenizerOutput:
        encoded = self.encode(images, track_usage=self.training)
        out = self.decoder(encoded.latent, with_features=with_features)
        return TokenizerOutput(
            recon=out.image,
            features=out.features,
            target=encoded.pyramid.target,
            cls=out.cls,
            encoded=encoded,
        )

    @torch.no_grad()
    def reconstruct(self, images: torch.Tensor) -> torch.Tensor:
        """Encode then decode without feature prediction."""
        return self(images, with_features=False).recon

    @torch.no_grad()
    def probe_features(self, images: torch.Tensor) -> torch.Tensor:
        """Decoder CLS outputs ``(B, D)`` used by the linear probe."""
        return self(images, with_features=False).cls


__all__ = ["EncodedImages", "RegionTokenizer", "TokenizerOutput"]
