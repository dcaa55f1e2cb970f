"""Reconstruction and distribution metrics.

Pixel metrics (PSNR, SSIM) take ``(B, C, H, W)`` or ``(C, H, W)`` tensors in
[0, 1]. Distribution metrics work on feature / logit arrays produced by the
proxy extractor and are computed in float64.
"""

# %%
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg, special
from scipy.spatial.distance import cdist

from src.config import PSNR_CAP_DB
from src.errors import InputError


logger = logging.getLogger(__name__)

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _as_batch(image: torch.Tensor, recon: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if image.shape != recon.shape:
        raise InputError(f"Image shapes differ: {tuple(image.shape)} vs {tuple(recon.shape)}")
    if image.ndim == 3:
        image, recon = image.unsqueeze(0), recon.unsqueeze(0)
    if image.ndim != 4:
        raise InputError(f"Expected (B, C, H, W) or (C, H, W) images, got {tuple(image.shape)}")
    return image.detach().double(), recon.detach().double()


def psnr(image: torch.Tensor, recon: torch.Tensor, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over the whole batch, capped at 99 dB."""
    a, b = _as_batch(image, recon)
    mse = torch.mean((a - b) ** 2).item()
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_value**2 / mse))


def psnr_per_image(image: torch.Tensor, recon: torch.Tensor) -> list[float]:
    a, b = _as_batch(image, recon)
    return [psnr(x, y) for x, y in zip(a, b, strict=True)]


def ssim(image: torch.Tensor, recon: torch.Tensor) -> float:
    """Windowed SSIM with an 8×8 uniform window, averaged over windows and channels."""
    a, b = _as_batch(image, recon)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise InputError(f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}")

    def window_mean(x: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(x, SSIM_WINDOW, stride=1)

    mu_a, mu_b = window_mean(a), window_mean(b)
    var_a = window_mean(a * a) - mu_a * mu_a
    var_b = window_mean(b * b) - mu_b * mu_b
    cov = window_mean(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (numerator / denominator).mean().item()


def symmetric_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix.

    Eigenvalues below the rank tolerance ``n·eps·max|λ|`` (negatives included)
    clamp to 0, so null directions of low-rank covariances contribute nothing.
    """
    eigvals, eigvecs = linalg.eigh(mat)
    if eigvals.size:
        tol = eigvals.size * np.finfo(eigvals.dtype).eps * np.abs(eigvals).max()
        eigvals = np.where(eigvals > tol, eigvals, 0.0)
    root = np.sqrt(eigvals)
    return (eigvecs * root) @ eigvecs.T


def trace_sqrt_product(cov1: np.ndarray, cov2: np.ndarray) -> float:
    """``tr((Σ1 Σ2)^{1/2})`` via ``tr((A Σ2 A)^{1/2})`` with ``A = Σ1^{1/2}``."""
    root = symmetric_sqrt(cov1)
    inner = root @ cov2 @ root
    inner = (inner + inner.T) / 2
    return float(np.trace(symmetric_sqrt(inner)))


def frechet_distance(
    mu1: np.ndarray,
    cov1: np.ndarray,
    mu2: np.ndarray,
    cov2: np.ndarray,
) -> float:
    """Fréchet distance between two Gaussians, clamped at 0."""
    mu1, mu2 = np.asarray(mu1, np.float64), np.asarray(mu2, np.float64)
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, np.float64)), np.atleast_2d(np.asarray(cov2, np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape != (mu1.size, mu1.size):
        raise InputError(
            f"Incompatible Gaussian shapes: mu {mu1.shape}/{mu2.shape}, cov {cov1.shape}/{cov2.shape}"
        )
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * trace_sqrt_product(cov1, cov2))
    return max(value, 0.0)


def gaussian_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of ``(n, d)`` features."""
    feats = np.asarray(features, np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise InputError(f"Need at least 2 feature rows of shape (n, d), got {feats.shape}")
    return feats.mean(axis=0), np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])


def frechet_distance_from_features(real: np.ndarray, fake: np.ndarray) -> float:
    return frechet_distance(*gaussian_stats(real), *gaussian_stats(fake))


def classifier_score_from_logits(logits: np.ndarray) -> float:
    """``exp(E_x KL(p(y|x) ‖ p(y)))`` from ``(n, C)`` logits."""
    values = np.asarray(logits, np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise InputError(f"Expected non-empty (n, C) logits, got {values.shape}")
    probs = special.softmax(values, axis=1)
    marginal = probs.mean(axis=0, keepdims=True)
    kl = special.rel_entr(probs, marginal).sum(axis=1)
    return float(np.exp(kl.mean()))


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float


def knn_radii(features: np.ndarray, k: int) -> np.ndarray:
    """Distance from each row to its k-th nearest other row."""
    if features.shape[0] <= k:
        raise InputError(f"k={k} needs more than {k} feature rows, got {features.shape[0]}")
    distances = cdist(features, features)
    # Column 0 of the sorted rows is the point itself.
    return np.sort(distances, axis=1)[:, k]


def manifold_coverage(reference: np.ndarray, queries: np.ndarray, k: int) -> float:
    """Fraction of *queries* inside the union of k-NN balls around *reference*."""
    radii = knn_radii(reference, k)
    inside = cdist(queries, reference) <= radii[None, :]
    return float(inside.any(axis=1).mean())


def precision_recall(real_feats: np.ndarray, fake_feats: np.ndarray, k: int = 3) -> PrecisionRecall:
    """k-NN manifold precision (fidelity) and recall (diversity)."""
    real = np.asarray(real_feats, np.float64)
    fake = np.asarray(fake_feats, np.float64)
    if real.ndim != 2 or fake.ndim != 2 or real.shape[1] != fake.shape[1]:
        raise InputError(f"Feature sets must be (n, d) with equal d: {real.shape} vs {fake.shape}")
    result = PrecisionRecall(
        precision=manifold_coverage(real, fake, k),
        recall=manifold_coverage(fake, real, k),
    )
    logger.debug("precision=%.4f recall=%.4f (k=%d)", result.precision, result.recall, k)
    return result


__all__ = [
    "PrecisionRecall",
    "classifier_score_from_logits",
    "frechet_distance",
    "frechet_distance_from_features",
    "gaussian_stats",
    "knn_radii",
    "manifold_coverage",
    "precision_recall",
    "psnr",
    "psnr_per_image",
    "ssim",
    "symmetric_sqrt",
    "trace_sqrt_product",
]
