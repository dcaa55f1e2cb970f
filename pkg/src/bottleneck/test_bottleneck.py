"""Tests for codebook quantization, projections and usage statistics.

Usage:
    uv run -m pytest src/bottleneck/test_bottleneck.py -v
"""

import pytest
import torch
import torch.nn.functional as F

from src.bottleneck.continuous import (
    ContinuousProjection,
    DownProjection,
    UpProjection,
    down_project,
    project_continuous,
    up_project,
)
from src.bottleneck.quantizer import (
    Codebook,
    UsageTracker,
    codebook_usage,
    dequantize,
    quantize,
)
from src.errors import ConfigurationError, InputError, ModeError


class TestQuantize:
    """Nearest-neighbour search over normalised vectors."""

    def test_axis_aligned_nearest(self):
        book = Codebook.from_entries(torch.tensor([[1.0, 0.0], [0.0, 1.0]]))
        latent, _ = quantize(torch.tensor([[2.0, 0.0]]), book)
        assert latent.indices.tolist() == [0]
        assert latent.quantized.tolist() == [[1.0, 0.0]]

    def test_tie_picks_lowest_index(self):
        entries = torch.tensor([[-1.0, 0.0]] * 10)
        entries[3] = torch.tensor([0.0, 1.0])
        entries[7] = torch.tensor([0.0, -1.0])
        book = Codebook.from_entries(entries)
        latent, _ = quantize(torch.tensor([[1.0, 0.0]]), book)
        assert latent.indices.item() == 3

    def test_matches_exhaustive_scan(self):
        gen = torch.Generator().manual_seed(0)
        book = Codebook.from_entries(torch.randn(16, 12, generator=gen, dtype=torch.float64))
        z = torch.randn(64, 12, generator=gen, dtype=torch.float64)
        latent, _ = quantize(z, book)
        codes = book.normalized()
        for row, index in zip(F.normalize(z, dim=-1), latent.indices.tolist(), strict=True):
            distances = [torch.sum((row - c) ** 2).item() for c in codes]
            assert index == min(range(16), key=lambda j: (distances[j], j))

    def test_argmin_distance_equals_argmax_inner_product(self):
        gen = torch.Generator().manual_seed(1)
        book = Codebook(32, 8, generator=gen)
        z = torch.randn(100, 8, generator=gen)
        latent, _ = quantize(z, book)
        expected = (F.normalize(z, dim=-1) @ book.normalized().T).argmax(-1)
        assert torch.equal(latent.indices, expected)

    def test_quantized_rows_are_unit_norm(self):
        book = Codebook(64, 12, generator=torch.Generator().manual_seed(2))
        latent, _ = quantize(torch.randn(3, 10, 12), book)
        torch.testing.assert_close(latent.quantized.norm(dim=-1), torch.ones(3, 10))
        assert latent.indices.shape == (3, 10)

    def test_nan_input_rejected(self):
        book = Codebook(4, 2)
        with pytest.raises(InputError):
            quantize(torch.tensor([[float("nan"), 0.0]]), book)

    def test_empty_codebook_rejected(self):
        with pytest.raises(ConfigurationError):
            Codebook.from_entries(torch.empty(0, 2))
        with pytest.raises(ConfigurationError):
            Codebook(0, 12)


class TestStraightThrough:
    """Gradient routing and loss values."""

    def test_gradient_passes_unchanged(self):
        book = Codebook(8, 4, generator=torch.Generator().manual_seed(3))
        z = torch.randn(2, 4, requires_grad=True)
        latent, _ = quantize(z, book)
        latent.z_normalized.retain_grad()
        latent.quantized.retain_grad()
        downstream = torch.randn(2, 4)
        (latent.quantized * downstream).sum().backward()
        assert torch.equal(latent.z_normalized.grad, latent.quantized.grad)
        assert z.grad is not None

    def test_losses_zero_iff_exact_match(self):
        entries = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        book = Codebook.from_entries(entries)
        _, exact = quantize(torch.tensor([[3.0, 0.0], [0.0, 0.5]]), book)
        assert exact.total.item() == 0.0
        _, off = quantize(torch.tensor([[1.0, 0.2]]), book)
        assert off.total.item() > 0.0

    def test_commitment_is_beta_times_codebook_loss(self):
        book = Codebook(8, 4, generator=torch.Generator().manual_seed(4))
        _, losses = quantize(torch.randn(5, 4), book, beta=0.25)
        torch.testing.assert_close(losses.commitment, 0.25 * losses.codebook)

    def test_codebook_loss_trains_codebook_only(self):
        book = Codebook(8, 4, generator=torch.Generator().manual_seed(5))
        z = torch.randn(5, 4, requires_grad=True)
        _, losses = quantize(z, book)
        losses.codebook.backward()
        assert book.embedding.grad is not None
        assert z.grad is None


class TestDequantize:
    """Lookups and the quantize/dequantize fixed point."""

    def test_repeated_index(self):
        book = Codebook(6, 3, generator=torch.Generator().manual_seed(6))
        rows = dequantize(torch.tensor([0, 0, 0]), book)
        for row in rows:
            assert torch.equal(row, book.normalized()[0])

    def test_round_trip_indices(self):
        book = Codebook(64, 12, generator=torch.Generator().manual_seed(7))
        indices = torch.randint(0, 64, (4, 16), generator=torch.Generator().manual_seed(8))
        latent, _ = quantize(dequantize(indices, book), book)
        assert torch.equal(latent.indices, indices)

    def test_round_trip_distance_bounded_by_nearest(self):
        gen = torch.Generator().manual_seed(9)
        book = Codebook(16, 4, generator=gen)
        z = torch.randn(50, 4, generator=gen)
        latent, _ = quantize(z, book)
        z_hat = F.normalize(z, dim=-1)
        gaps = (dequantize(latent.indices, book) - z_hat).norm(dim=-1)
        nearest = torch.cdist(z_hat, book.normalized()).min(dim=-1).values
        torch.testing.assert_close(gaps, nearest, rtol=1e-5, atol=1e-5)
        assert gaps.max() <= nearest.max() + 1e-6

    def test_out_of_range_rejected(self):
        book = Codebook(4, 2)
        with pytest.raises(InputError):
            dequantize(torch.tensor([4]), book)
        with pytest.raises(InputError):
            dequantize(torch.tensor([-1]), book)


class TestUsage:
    """Usage fraction and per-entry counters."""

    def test_full_coverage(self):
        assert codebook_usage(torch.arange(512), 512) == 1.0

    def test_single_repeated_id(self):
        assert codebook_usage(torch.full((100,), 7), 512) == 1 / 512

    def test_matches_set_recount(self):
        stream = torch.randint(0, 512, (300,), generator=torch.Generator().manual_seed(10))
        assert codebook_usage(stream, 512) == len(set(stream.tolist())) / 512

    def test_monotone_over_stream(self):
        tracker = UsageTracker(64)
        gen = torch.Generator().manual_seed(11)
        fractions = [tracker.update(torch.randint(0, 64, (8,), generator=gen)) for _ in range(20)]
        assert fractions == sorted(fractions)

    def test_empty_stream_rejected(self):
        with pytest.raises(InputError):
            codebook_usage([], 16)

    def test_counts_sum_to_tokens(self):
        book = Codebook(32, 4, generator=torch.Generator().manual_seed(12))
        quantize(torch.randn(7, 9, 4), book)
        assert book.usage_counts.sum().item() == 63
        assert (book.usage_counts >= 0).all()


class TestProjections:
    """Down/up projections and the continuous path."""

    def test_identity_down_projection(self):
        proj = DownProjection(12, 12)
        proj.init_identity()
        z = torch.randn(3, 12)
        torch.testing.assert_close(down_project(z, proj), z)

    def test_shape_chain(self):
        z = torch.randn(2, 64, 128)
        code = down_project(z, DownProjection(128, 12))
        assert code.shape == (2, 64, 12)
        assert up_project(code, UpProjection(12, 96)).shape == (2, 64, 96)

    def test_up_projection_jacobian(self):
        proj = UpProjection(3, 5).double()
        latent = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda x: up_project(x, proj), (latent,), rtol=1e-4)

    def test_continuous_zero_input_gives_bias(self):
        proj = ContinuousProjection(16)
        latent = project_continuous(torch.zeros(1, 4, 16), proj)
        torch.testing.assert_close(latent.tokens, proj.proj.bias.expand(1, 4, 32))

    def test_continuous_default_width(self):
        latent = project_continuous(torch.randn(2, 64, 128), ContinuousProjection(128))
        assert latent.dim == 32

    def test_continuous_linearity(self):
        proj = ContinuousProjection(8, 4).double()
        x, y = torch.randn(2, 8, dtype=torch.float64).unbind(0)
        a, b = 1.7, -0.4
        bias = proj.proj.bias

        def f0(v: torch.Tensor) -> torch.Tensor:
            return proj(v) - bias

        combined = project_continuous(a * x + b * y, proj).tokens
        torch.testing.assert_close(combined, a * f0(x) + b * f0(y) + bias)

    def test_continuous_rejects_discrete_mode(self):
        with pytest.raises(ModeError):
            project_continuous(torch.zeros(1, 2, 8), ContinuousProjection(8), mode="discrete")
