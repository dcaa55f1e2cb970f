"""Tests for pixel metrics, distribution metrics, probing and reports.

Usage:
    uv run -m pytest src/evalsuite/test_evalsuite.py -v
"""

import math

import numpy as np
import pytest
import torch

from src.errors import InputError, UsageError
from src.evalsuite.metrics import (
    classifier_score_from_logits,
    frechet_distance,
    frechet_distance_from_features,
    knn_radii,
    precision_recall,
    psnr,
    ssim,
)
from src.evalsuite.probe import linear_probe, probe_representation, split_for_probe
from src.evalsuite.proxy import (
    ProxyExtractor,
    extract_proxy_outputs,
    inception_style_score,
    train_proxy_extractor,
)
from src.evalsuite.reports import METRIC_COLUMNS, MetricReport, read_metric_csv
from src.evalsuite.usage import usage_report
from src.tokenizer.model import RegionTokenizer
from src.tokenizer.test_tokenizer import tiny_config


def _random_spd(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(dim, dim))
    return a @ a.T + 0.1 * np.eye(dim)


class TestPSNR:
    """Closed-form values, cap and monotonicity."""

    def test_identical_images_hit_cap(self):
        image = torch.rand(2, 3, 16, 16)
        assert psnr(image, image.clone()) == 99.0

    def test_known_mse(self):
        image = torch.zeros(3, 8, 8, dtype=torch.float64)
        assert psnr(image, image + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_monotone_in_noise(self):
        gen = torch.Generator().manual_seed(0)
        image = torch.rand(1, 3, 16, 16, generator=gen)
        noise = torch.randn(1, 3, 16, 16, generator=gen)
        values = [psnr(image, image + s * noise) for s in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            psnr(torch.zeros(3, 8, 8), torch.zeros(3, 8, 9))


class TestSSIM:
    """Identity, anti-correlation and symmetry."""

    def test_identical_is_one(self):
        image = torch.rand(2, 3, 16, 16)
        assert ssim(image, image.clone()) == pytest.approx(1.0, abs=1e-12)

    def test_negative_of_binary_image_is_negative(self):
        rows = torch.arange(16)[:, None]
        cols = torch.arange(16)[None, :]
        board = ((rows + cols) % 2).double().expand(3, 16, 16)
        assert ssim(board, 1 - board) < 0

    def test_symmetric(self):
        gen = torch.Generator().manual_seed(1)
        a = torch.rand(2, 3, 12, 12, generator=gen)
        b = torch.rand(2, 3, 12, 12, generator=gen)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_too_small_for_window(self):
        with pytest.raises(InputError):
            ssim(torch.rand(3, 7, 7), torch.rand(3, 7, 7))


class TestFrechetDistance:
    """Closed forms, symmetry and an eigenvalue oracle."""

    def test_identical_gaussians(self):
        rng = np.random.default_rng(0)
        mu, cov = rng.normal(size=4), _random_spd(4, rng)
        assert frechet_distance(mu, cov, mu, cov) == pytest.approx(0.0, abs=1e-8)

    def test_mean_shift_only(self):
        rng = np.random.default_rng(1)
        cov = _random_spd(3, rng)
        mu = np.zeros(3)
        assert frechet_distance(mu, cov, mu + np.array([3.0, 0, 0]), cov) == pytest.approx(9.0, abs=1e-6)

    def test_matches_eigenvalue_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            mu1, mu2 = rng.normal(size=4), rng.normal(size=4)
            cov1, cov2 = _random_spd(4, rng), _random_spd(4, rng)
            # Σ1Σ2 is similar to a PSD matrix, so its eigenvalues are real and >= 0.
            eig = np.linalg.eigvals(cov1 @ cov2).real
            oracle = (
                np.sum((mu1 - mu2) ** 2)
                + np.trace(cov1)
                + np.trace(cov2)
                - 2 * np.sum(np.sqrt(np.clip(eig, 0, None)))
            )
            assert frechet_distance(mu1, cov1, mu2, cov2) == pytest.approx(oracle, abs=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = (rng.normal(size=5), _random_spd(5, rng))
        b = (rng.normal(size=5), _random_spd(5, rng))
        assert frechet_distance(*a, *b) == pytest.approx(frechet_distance(*b, *a), abs=1e-8)

    def test_identical_feature_sets(self):
        feats = np.random.default_rng(4).normal(size=(50, 6))
        assert frechet_distance_from_features(feats, feats.copy()) == pytest.approx(0.0, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            frechet_distance(np.zeros(3), np.eye(3), np.zeros(2), np.eye(2))


class TestClassifierScore:
    """Classifier score closed forms."""

    def test_identical_predictions_score_one(self):
        logits = np.tile(np.array([[0.3, -1.0, 2.0]]), (6, 1))
        assert classifier_score_from_logits(logits) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_one_hot_scores_class_count(self):
        logits = np.tile(1e4 * np.eye(5), (4, 1))
        assert classifier_score_from_logits(logits) == pytest.approx(5.0, rel=1e-12)

    def test_at_least_one(self):
        logits = np.random.default_rng(5).normal(size=(40, 7))
        assert classifier_score_from_logits(logits) >= 1.0


class TestPrecisionRecall:
    """k-NN manifold estimator against a brute-force oracle."""

    def test_identical_sets(self):
        feats = np.random.default_rng(6).normal(size=(30, 4))
        result = precision_recall(feats, feats.copy(), k=3)
        assert (result.precision, result.recall) == (1.0, 1.0)

    def test_far_shift_has_zero_precision(self):
        real = np.random.default_rng(7).normal(size=(30, 4))
        result = precision_recall(real, real + 100.0, k=3)
        assert result.precision == 0.0
        assert result.recall == 0.0

    def test_rings_match_brute_force(self):
        rng = np.random.default_rng(8)

        def ring(n: int, radius: float) -> np.ndarray:
            theta = rng.uniform(0, 2 * np.pi, n)
            r = radius + 0.1 * rng.normal(size=n)
            return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)

        real, fake = ring(40, 1.0), ring(35, 1.3)
        k = 3

        def coverage(ref: np.ndarray, queries: np.ndarray) -> float:
            radii = []
            for i in range(len(ref)):
                dists = sorted(math.dist(ref[i], ref[j]) for j in range(len(ref)) if j != i)
                radii.append(dists[k - 1])
            hits = 0
            for q in queries:
                hits += any(math.dist(q, ref[j]) <= radii[j] for j in range(len(ref)))
            return hits / len(queries)

        result = precision_recall(real, fake, k=k)
        assert result.precision == coverage(real, fake)
        assert result.recall == coverage(fake, real)

    def test_needs_more_points_than_k(self):
        with pytest.raises(InputError):
            knn_radii(np.zeros((3, 2)), 3)


class TestLinearProbe:
    """Separable data, chance level and split contract."""

    def test_separable_features_reach_full_accuracy(self):
        gen = torch.Generator().manual_seed(9)
        labels = torch.arange(200) % 4
        feats = 5.0 * torch.eye(4)[labels] + 0.1 * torch.randn(200, 4, generator=gen)
        train, test = split_for_probe(200, 0.25, gen)
        result = linear_probe(
            feats[train], labels[train], feats[test], labels[test], num_classes=4, generator=gen
        )
        assert result.accuracy == 1.0
        assert result.train_size + result.test_size == 200

    def test_random_labels_stay_near_chance(self):
        gen = torch.Generator().manual_seed(10)
        n_train, n_test, classes = 2000, 1000, 10
        feats = torch.randn(n_train + n_test, 16, generator=gen)
        labels = torch.randint(0, classes, (n_train + n_test,), generator=gen)
        result = linear_probe(
            feats[:n_train],
            labels[:n_train],
            feats[n_train:],
            labels[n_train:],
            num_classes=classes,
            epochs=100,
            generator=gen,
        )
        sigma = math.sqrt(0.1 * 0.9 / n_test)
        assert abs(result.accuracy - 0.1) < 3 * sigma

    def test_split_is_disjoint_and_complete(self):
        train, test = split_for_probe(50, 0.2, torch.Generator().manual_seed(0))
        assert len(test) == 10
        assert sorted(torch.cat([train, test]).tolist()) == list(range(50))

    def test_mismatched_widths(self):
        with pytest.raises(InputError):
            linear_probe(
                torch.zeros(4, 3), torch.zeros(4), torch.zeros(2, 5), torch.zeros(2), num_classes=2
            )

    @pytest.mark.parametrize(("kind", "width"), [("discrete", 32), ("continuous", 16)])
    def test_tokenizer_representation_width(self, kind, width):
        tokenizer = RegionTokenizer(tiny_config(kind))
        feats = probe_representation(tokenizer, torch.rand(3, 3, 32, 32), batch_size=2)
        assert feats.shape == (3, width)


class TestUsageReport:
    """Histogram format and recount oracle."""

    def test_histogram_matches_recount(self, tmp_path):
        gen = torch.Generator().manual_seed(11)
        stream = [torch.randint(0, 12, (4, 9), generator=gen) for _ in range(3)]
        report = usage_report(stream, codebook_size=16)
        flat = torch.cat([s.reshape(-1) for s in stream]).tolist()
        assert report.counts.tolist() == [flat.count(i) for i in range(16)]
        assert report.counts.sum().item() == report.stream_length == 108
        assert report.fraction == len(set(flat)) / 16

        path = report.write_csv(tmp_path / "usage.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "entry,count"
        assert len(lines) == 1 + 16

    def test_empty_stream(self):
        with pytest.raises(InputError):
            usage_report([], codebook_size=4)


class TestMetricReport:
    """CSV schema and byte-stable output."""

    def test_columns_and_reproducible_bytes(self, tmp_path):
        def build() -> MetricReport:
            report = MetricReport(checkpoint_hash="abc123", proxy_hash="0f0f", seed=7)
            report.extend({"psnr": 23.456789123456789, "ssim": 0.8123}, split="val")
            report.add("frechet", 1.0 / 3.0, split="gen")
            return report

        first = build().write_csv(tmp_path / "a.csv")
        second = build().write_csv(tmp_path / "b.csv")
        assert first.read_bytes() == second.read_bytes()
        frame = read_metric_csv(first)
        assert tuple(frame.columns) == METRIC_COLUMNS
        assert frame["value"].iloc[2] == 1.0 / 3.0
        assert frame["proxy_hash"].iloc[0] == "0f0f"

    def test_lookup(self):
        report = MetricReport(checkpoint_hash="x", proxy_hash="y", seed=0)
        report.add("psnr", 30.0, "val")
        assert report.value("psnr", "val") == 30.0
        with pytest.raises(KeyError):
            report.value("psnr", "train")


class TestProxyExtractor:
    """Training, freezing and the version hash."""

    def test_unfrozen_proxy_rejected(self):
        with pytest.raises(UsageError):
            extract_proxy_outputs(ProxyExtractor(3), torch.rand(2, 3, 32, 32))

    def test_trained_proxy_is_frozen_and_hash_stable(self):
        torch.manual_seed(12)
        gen = torch.Generator().manual_seed(12)
        labels = torch.arange(32) % 2
        images = labels.float()[:, None, None, None].expand(32, 3, 16, 16) * 0.8 + 0.1
        proxy = train_proxy_extractor(images, labels, 2, epochs=2, batch_size=8, generator=gen)
        assert proxy.frozen
        assert proxy.version_hash == proxy.version_hash
        assert len(proxy.version_hash) == 16
        feats, logits = extract_proxy_outputs(proxy, images)
        assert feats.shape == (32, 128)
        assert logits.shape == (32, 2)
        assert inception_style_score(images, proxy) >= 1.0

    def test_labels_out_of_range(self):
        with pytest.raises(InputError):
            train_proxy_extractor(torch.rand(4, 3, 16, 16), torch.tensor([0, 1, 2, 3]), 3)
