"""Linear probing of frozen representations.

Discrete tokenizers are probed on the decoder's CLS output; continuous ones on
mean-pooled latent tokens. Only a single ``nn.Linear`` is trained, on features
standardised with the training split's statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from src.errors import InputError
from src.tokenizer.model import RegionTokenizer


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    train_accuracy: float
    train_size: int
    test_size: int


@torch.no_grad()
def probe_representation(
    tokenizer: RegionTokenizer,
    images: torch.Tensor,
    batch_size: int = 256,
) -> torch.Tensor:
    """Frozen ``(n, D)`` representation of *images* for probing."""
    was_training = tokenizer.training
    tokenizer.eval()
    device = next(tokenizer.parameters()).device
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        batch = images[start : start + batch_size].to(device)
        if tokenizer.mode == "discrete":
            chunks.append(tokenizer.probe_features(batch).cpu())
        else:
            chunks.append(tokenizer.encode(batch).latent.mean(dim=1).cpu())
    tokenizer.train(was_training)
    return torch.cat(chunks)


def split_for_probe(
    count: int,
    eval_fraction: float,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Random disjoint (train, test) index split."""
    n_test = max(1, round(count * eval_fraction))
    if n_test >= count:
        raise InputError(f"Cannot hold out {n_test} of {count} samples")
    order = torch.randperm(count, generator=generator)
    return order[n_test:], order[:n_test]


def linear_probe(
    train_feats: torch.Tensor,
    train_labels: torch.Tensor,
    test_feats: torch.Tensor,
    test_labels: torch.Tensor,
    *,
    num_classes: int,
    epochs: int = 200,
    lr: float = 1e-2,
    generator: torch.Generator | None = None,
) -> ProbeResult:
    """Fit a full-batch linear classifier and report held-out top-1 accuracy."""
    if train_feats.ndim != 2 or test_feats.ndim != 2 or train_feats.shape[1] != test_feats.shape[1]:
        raise InputError(
            f"Probe features must be (n, d) with equal d: {tuple(train_feats.shape)} "
            f"vs {tuple(test_feats.shape)}"
        )
    if train_feats.shape[0] != train_labels.shape[0] or test_feats.shape[0] != test_labels.shape[0]:
        raise InputError("Feature and label counts differ")
    x_train = train_feats.detach().float()
    x_test = test_feats.detach().float()
    mean = x_train.mean(0, keepdim=True)
    std = x_train.std(0, unbiased=False, keepdim=True).clamp_min(1e-6)
    x_train, x_test = (x_train - mean) / std, (x_test - mean) / std
    y_train, y_test = train_labels.long(), test_labels.long()

    head = nn.Linear(x_train.shape[1], num_classes)
    if generator is not None:
        with torch.no_grad():
            bound = 1 / x_train.shape[1] ** 0.5
            head.weight.uniform_(-bound, bound, generator=generator)
            head.bias.zero_()
    optimizer = torch.optim.Adam(head.parameters(), lr=lr)
    for _ in range(epochs):
        loss = F.cross_entropy(head(x_train), y_train)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

    with torch.no_grad():
        train_acc = (head(x_train).argmax(1) == y_train).float().mean().item()
        test_acc = (head(x_test).argmax(1) == y_test).float().mean().item()
    logger.info("linear probe: train acc %.4f, held-out acc %.4f", train_acc, test_acc)
    return ProbeResult(test_acc, train_acc, int(x_train.shape[0]), int(x_test.shape[0]))


__all__ = ["ProbeResult", "linear_probe", "probe_representation", "split_for_probe"]
