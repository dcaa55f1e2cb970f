"""Proxy feature extractor standing in for an Inception-style network.

A small convolutional classifier is trained once on the evaluation dataset,
then frozen. Its penultimate activations feed the Fréchet distance and
precision/recall, its logits feed the classifier score, and its
``version_hash`` is written into every metric report so numbers are only ever
compared against the same proxy.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from src.errors import InputError, UsageError
from src.evalsuite.metrics import classifier_score_from_logits
from src.utils import state_dict_sha256


logger = logging.getLogger(__name__)


class ProxyExtractor(nn.Module):
    """Three strided conv stages, global average pool, linear classifier."""

    def __init__(self, num_classes: int, width: int = 32, feature_dim: int = 128) -> None:
        super().__init__()
        if num_classes < 2:
            raise InputError(f"Proxy classifier needs at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.width = width
        self.feature_dim = feature_dim
        self.trunk = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.BatchNorm2d(width),
            nn.ReLU(),
            nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
            nn.BatchNorm2d(width * 2),
            nn.ReLU(),
            nn.Conv2d(width * 2, feature_dim, 3, stride=2, padding=1),
            nn.BatchNorm2d(feature_dim),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.classifier = nn.Linear(feature_dim, num_classes)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """Penultimate activations ``(B, feature_dim)``."""
        return self.trunk(images)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(images))

    def freeze(self) -> ProxyExtractor:
        self.eval()
        self.requires_grad_(False)
        return self

    @property
    def frozen(self) -> bool:
        return not self.training and not any(p.requires_grad for p in self.parameters())

    @property
    def version_hash(self) -> str:
        """Short sha256 of the serialised parameters and buffers."""
        return state_dict_sha256(self.state_dict())[:16]


def train_proxy_extractor(
    images: torch.Tensor,
    labels: torch.Tensor,
    num_classes: int,
    *,
    epochs: int = 5,
    batch_size: int = 128,
    lr: float = 1e-3,
    generator: torch.Generator | None = None,
) -> ProxyExtractor:
    """Train a proxy classifier on ``(n, 3, H, W)`` images and return it frozen."""
    if images.shape[0] != labels.shape[0] or images.shape[0] == 0:
        raise InputError(
            f"Need matching non-empty images/labels, got {images.shape[0]} and {labels.shape[0]}"
        )
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InputError(f"Labels must lie in [0, {num_classes})")
    proxy = ProxyExtractor(num_classes)
    optimizer = torch.optim.AdamW(proxy.parameters(), lr=lr)
    loader = DataLoader(
        TensorDataset(images, labels.long()),
        batch_size=batch_size,
        shuffle=True,
        generator=generator,
    )
    proxy.train()
    for epoch in range(epochs):
        total, correct, loss_sum = 0, 0, 0.0
        for batch, target in loader:
            logits = proxy(batch)
            loss = F.cross_entropy(logits, target)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * batch.shape[0]
            correct += (logits.argmax(1) == target).sum().item()
            total += batch.shape[0]
        logger.info(
            "proxy epoch %d/%d: loss %.4f acc %.3f", epoch + 1, epochs, loss_sum / total, correct / total
        )
    proxy.freeze()
    logger.info("Proxy extractor frozen, version %s", proxy.version_hash)
    return proxy


@torch.no_grad()
def extract_proxy_outputs(
    proxy: ProxyExtractor,
    images: torch.Tensor,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Features and logits of *images* as float64 arrays, batch by batch."""
    if not proxy.frozen:
        raise UsageError("Proxy extractor must be frozen before computing metrics")
    device = next(proxy.parameters()).device
    feats, logits = [], []
    for start in range(0, images.shape[0], batch_size):
        batch = images[start : start + batch_size].to(device)
        f = proxy.features(batch)
        feats.append(f.double().cpu())
        logits.append(proxy.classifier(f).double().cpu())
    if not feats:
        raise InputError("No images to extract proxy features from")
    return torch.cat(feats).numpy(), torch.cat(logits).numpy()


def inception_style_score(images: torch.Tensor, proxy: ProxyExtractor) -> float:
    """Classifier score of *images* under the proxy's softmax."""
    _, logits = extract_proxy_outputs(proxy, images)
    return classifier_score_from_logits(logits)


__all__ = [
    "ProxyExtractor",
    "extract_proxy_outputs",
    "inception_style_score",
    "train_proxy_extractor",
]
