"""Class-conditional causal transformer over codebook indices.

Vocabulary layout of the input embedding table::

    [0, N_cb)                       codebook ids
    [N_cb, N_cb + num_classes)      class-condition tokens
    N_cb + num_classes              null class (dropped condition)

The output head predicts codebook ids only. Positions enter through 2D
rotary embeddings alone; there is no absolute position table.
"""

from __future__ import annotations

import logging

import torch
from torch import nn

from src.configs.schemas import ARConfig
from src.errors import InputError
from src.generators.ar.rope import Rope2D, sequence_positions
from src.modules.blocks import TransformerBlock


logger = logging.getLogger(__name__)


class ARTransformer(nn.Module):
    """``[class | idx_0 … idx_{T-1}]`` → logits for ``idx_0 … idx_T``."""

    def __init__(
        self,
        config: ARConfig,
        *,
        codebook_size: int,
        num_classes: int,
        token_count: int,
    ) -> None:
        super().__init__()
        self.config = config
        self.codebook_size = codebook_size
        self.num_classes = num_classes
        self.token_count = token_count
        self.null_class = num_classes
        self.embed = nn.Embedding(codebook_size + num_classes + 1, config.width)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.width, config.heads, config.mlp_ratio, config.dropout)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(config.width)
        self.head = nn.Linear(config.width, codebook_size)
        self.rope = Rope2D(sequence_positions(token_count), config.rope_base)
        nn.init.normal_(self.embed.weight, std=0.02)
        logger.debug(
            "ARTransformer: vocab=%d+%d+1 depth=%d width=%d N=%d",
            codebook_size,
            num_classes,
            config.depth,
            config.width,
            token_count,
        )

    def check_classes(self, class_ids: torch.Tensor, *, allow_null: bool = True) -> None:
        upper = self.num_classes + (1 if allow_null else 0)
        if class_ids.numel() and (class_ids.min() < 0 or class_ids.max() >= upper):
            raise InputError(f"Class id outside [0, {upper}): {class_ids.tolist()}")

    def check_tokens(self, tokens: torch.Tensor) -> None:
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.codebook_size):
            raise InputError(f"Token id outside [0, {self.codebook_size})")
        if tokens.shape[-1] > self.token_count:
            raise InputError(f"Sequence of {tokens.shape[-1]} exceeds N={self.token_count}")

    def input_ids(self, class_ids: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        prefix = (self.codebook_size + class_ids).unsqueeze(1)
        return torch.cat([prefix, tokens], dim=1)

    def forward(self, class_ids: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Logits ``(B, T + 1, N_cb)``; row ``j`` predicts image token ``j``.

        ``class_ids`` may contain :attr:`null_class`.
        """
        self.check_classes(class_ids)
        self.check_tokens(tokens)
        x = self.drop(self.embed(self.input_ids(class_ids, tokens)))
        for block in self.blocks:
            x = block(x, causal=True, rotary=self.rope)
        return self.head(self.norm(x))


__all__ = ["ARTransformer"]
