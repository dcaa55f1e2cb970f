"""Tests for anchor grids, bilinear sampling and deformable cross-attention.

The loop oracles below recompute sampling and aggregation one scalar at a
time so that the vectorised ``grid_sample`` path is checked against plain
arithmetic.

Usage:
    uv run -m pytest src/sampler/test_sampler.py -v
"""

import math

import pytest
import torch
from torch.func import functional_call

from src.configs.schemas import SamplerConfig
from src.encoder.pyramid import FeaturePyramid, PyramidLevel
from src.errors import ConfigurationError
from src.sampler.anchors import init_anchor_grid
from src.sampler.deformable import (
    DeformableLayer,
    RegionSampler,
    bilinear_sample,
    plain_grid_tokens,
    sample_regions,
)


def _oracle_bilinear(grid: torch.Tensor, x: float, y: float) -> torch.Tensor:
    H, W, _ = grid.shape
    px = min(max(x * W - 0.5, 0.0), W - 1.0)
    py = min(max(y * H - 0.5, 0.0), H - 1.0)
    x0, y0 = math.floor(px), math.floor(py)
    x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
    fx, fy = px - x0, py - y0
    return (
        (1 - fx) * (1 - fy) * grid[y0, x0]
        + fx * (1 - fy) * grid[y0, x1]
        + (1 - fx) * fy * grid[y1, x0]
        + fx * fy * grid[y1, x1]
    )


def _pyramid(grids: list[torch.Tensor]) -> FeaturePyramid:
    levels = tuple(PyramidLevel(g, g.mean(dim=(1, 2))) for g in grids)
    return FeaturePyramid(
        levels=levels, target=grids[-1], source_resolution=8, taps=tuple(range(1, len(grids) + 1))
    )


def _randomize_heads(layer: DeformableLayer, scale: float = 0.5) -> None:
    with torch.no_grad():
        for head in (layer.offset_head, layer.weight_head):
            head.weight.normal_(0.0, scale)
            head.bias.normal_(0.0, scale)


def _identity_projections(layer: DeformableLayer) -> None:
    with torch.no_grad():
        for proj in (layer.value_proj, layer.output_proj):
            proj.weight.copy_(torch.eye(layer.dim, dtype=proj.weight.dtype))
            proj.bias.zero_()


class TestAnchorGrid:
    """Reference points are fixed cell centres in row-major order."""

    def test_single_anchor_is_centre(self):
        anchors = init_anchor_grid(1, 8)
        assert anchors.reference_points.tolist() == [[0.5, 0.5]]

    def test_four_anchors(self):
        anchors = init_anchor_grid(4, 8)
        assert anchors.reference_points.tolist() == [
            [0.25, 0.25],
            [0.75, 0.25],
            [0.25, 0.75],
            [0.75, 0.75],
        ]

    def test_sixteen_by_sixteen(self):
        points = init_anchor_grid(256, 4).reference_points
        assert points.shape == (256, 2)
        assert points.min().item() == pytest.approx(1 / 32)
        assert points.max().item() == pytest.approx(31 / 32)

    def test_non_square_rejected(self):
        with pytest.raises(ConfigurationError):
            init_anchor_grid(10, 8)

    def test_reference_points_are_not_trainable(self):
        anchors = init_anchor_grid(4, 8)
        names = {name for name, _ in anchors.named_parameters()}
        assert names == {"queries"}

    def test_queries_small_variance(self):
        anchors = init_anchor_grid(64, 32, generator=torch.Generator().manual_seed(0))
        assert anchors.queries.std().item() < 0.05


class TestBilinearSample:
    """Bilinear interpolation with border replication."""

    def test_cell_centre_returns_cell(self):
        grid = torch.randn(4, 4, 3)
        value = bilinear_sample(grid, torch.tensor([(2 + 0.5) / 4, (1 + 0.5) / 4]))
        torch.testing.assert_close(value, grid[1, 2])

    def test_midpoint_of_four_cells_is_mean(self):
        grid = torch.randn(4, 4, 3)
        value = bilinear_sample(grid, torch.tensor([0.5, 0.5]))
        torch.testing.assert_close(value, grid[1:3, 1:3].mean(dim=(0, 1)))

    def test_matches_loop_oracle(self):
        gen = torch.Generator().manual_seed(3)
        grid = torch.randn(5, 7, 4, generator=gen, dtype=torch.float64)
        points = torch.rand(50, 2, generator=gen, dtype=torch.float64) * 1.4 - 0.2
        values = bilinear_sample(grid, points)
        for point, value in zip(points, values, strict=True):
            expected = _oracle_bilinear(grid, point[0].item(), point[1].item())
            torch.testing.assert_close(value, expected, rtol=0, atol=1e-6)

    def test_outside_points_replicate_border(self):
        grid = torch.randn(3, 3, 2)
        value = bilinear_sample(grid, torch.tensor([-1.0, -1.0]))
        torch.testing.assert_close(value, grid[0, 0])

    def test_differentiable_in_grid_and_point(self):
        grid = torch.randn(3, 3, 2, requires_grad=True)
        point = torch.tensor([0.4, 0.55], requires_grad=True)
        bilinear_sample(grid, point).sum().backward()
        assert grid.grad is not None
        assert point.grad is not None


class TestDeformableAttend:
    """Closed-form collapses and the exhaustive loop oracle."""

    def test_zero_offsets_uniform_weights_average_levels(self):
        torch.manual_seed(0)
        layer = DeformableLayer(dim=6, heads=2, num_levels=3, points=4)
        _identity_projections(layer)
        anchors = init_anchor_grid(4, 6)
        grids = [torch.randn(1, 4, 4, 6) for _ in range(3)]
        out = layer.attend(torch.randn(1, 4, 6), anchors.reference_points, grids)
        expected = torch.stack(
            [bilinear_sample(g, anchors.reference_points) for g in grids]
        ).mean(0)
        torch.testing.assert_close(out, expected, rtol=0, atol=1e-6)

    def test_constant_pyramid_ignores_offsets(self):
        torch.manual_seed(1)
        layer = DeformableLayer(dim=4, heads=2, num_levels=2, points=3)
        _randomize_heads(layer, scale=2.0)
        v = torch.randn(4)
        grids = [v.expand(2, 3, 3, 4).clone() for _ in range(2)]
        anchors = init_anchor_grid(9, 4)
        out = layer.attend(torch.randn(2, 9, 4), anchors.reference_points, grids)
        expected = layer.output_proj(layer.value_proj(v)).expand_as(out)
        torch.testing.assert_close(out, expected, rtol=0, atol=1e-5)

    def test_matches_unrolled_loop_oracle(self):
        torch.manual_seed(2)
        N, L, M, K, D = 4, 2, 2, 2, 4
        layer = DeformableLayer(dim=D, heads=M, num_levels=L, points=K).double()
        _randomize_heads(layer)
        anchors = init_anchor_grid(N, D).double()
        queries = torch.randn(1, N, D, dtype=torch.float64)
        grids = [torch.randn(1, 3, 3, D, dtype=torch.float64) for _ in range(L)]
        out = layer.attend(queries, anchors.reference_points, grids)

        offsets = layer.sampling_offsets(queries)[0]
        weights = layer.sampling_weights(queries)[0]
        values = [layer.value_proj(g)[0] for g in grids]
        hd = D // M
        rows = []
        for n in range(N):
            heads = []
            for m in range(M):
                acc = torch.zeros(hd, dtype=torch.float64)
                for lvl in range(L):
                    for k in range(K):
                        x = anchors.reference_points[n, 0].item() + offsets[n, m, lvl, k, 0].item() / 3
                        y = anchors.reference_points[n, 1].item() + offsets[n, m, lvl, k, 1].item() / 3
                        sample = _oracle_bilinear(values[lvl][..., m * hd : (m + 1) * hd], x, y)
                        acc = acc + weights[n, m, lvl, k] * sample
                heads.append(acc)
            rows.append(torch.cat(heads))
        expected = layer.output_proj(torch.stack(rows))
        torch.testing.assert_close(out[0], expected, rtol=0, atol=1e-5)

    def test_weights_sum_to_one(self):
        torch.manual_seed(3)
        layer = DeformableLayer(dim=8, heads=2, num_levels=3, points=4)
        _randomize_heads(layer, scale=3.0)
        weights = layer.sampling_weights(torch.randn(2, 5, 8))
        assert (weights >= 0).all()
        torch.testing.assert_close(
            weights.sum(dim=(-2, -1)), torch.ones(2, 5, 2), rtol=0, atol=1e-6
        )

    def test_level_permutation_symmetry(self):
        torch.manual_seed(4)
        M, L, K, D = 2, 3, 2, 4
        layer = DeformableLayer(dim=D, heads=M, num_levels=L, points=K).double()
        _randomize_heads(layer)
        permuted = DeformableLayer(dim=D, heads=M, num_levels=L, points=K).double()
        permuted.load_state_dict(layer.state_dict())
        order = torch.tensor([2, 0, 1])
        with torch.no_grad():
            permuted.offset_head.weight.copy_(
                layer.offset_head.weight.view(M, L, K, 2, D)[:, order].reshape(-1, D)
            )
            permuted.offset_head.bias.copy_(
                layer.offset_head.bias.view(M, L, K, 2)[:, order].reshape(-1)
            )
            permuted.weight_head.weight.copy_(
                layer.weight_head.weight.view(M, L, K, D)[:, order].reshape(-1, D)
            )
            permuted.weight_head.bias.copy_(
                layer.weight_head.bias.view(M, L, K)[:, order].reshape(-1)
            )
        anchors = init_anchor_grid(4, D).double()
        grids = [torch.randn(1, 4, 4, D, dtype=torch.float64) for _ in range(L)]
        queries = torch.randn(1, 4, D, dtype=torch.float64)
        out = layer(queries, anchors.reference_points, grids)
        out_permuted = permuted(
            queries, anchors.reference_points, [grids[i] for i in order.tolist()]
        )
        torch.testing.assert_close(out, out_permuted, rtol=0, atol=1e-10)

    def test_zero_sampling_points_rejected(self):
        with pytest.raises(ConfigurationError):
            DeformableLayer(dim=4, heads=2, num_levels=2, points=0)

    def test_level_count_mismatch(self):
        layer = DeformableLayer(dim=4, heads=2, num_levels=2, points=1)
        anchors = init_anchor_grid(4, 4)
        with pytest.raises(ConfigurationError):
            layer.attend(torch.randn(1, 4, 4), anchors.reference_points, [torch.randn(1, 2, 2, 4)])


class TestSampleRegions:
    """Stacking layers over fixed reference points."""

    def test_single_layer_equals_one_call(self):
        torch.manual_seed(5)
        anchors = init_anchor_grid(4, 8)
        layer = DeformableLayer(dim=8, heads=2, num_levels=2, points=2)
        pyramid = _pyramid([torch.randn(2, 4, 4, 8) for _ in range(2)])
        out = sample_regions(pyramid, anchors, [layer])
        direct = layer(anchors.expand(2), anchors.reference_points, [lv.grid for lv in pyramid.levels])
        assert torch.equal(out, direct)

    def test_output_shape_independent_of_content(self):
        sampler = RegionSampler(SamplerConfig(token_count=16, depth=2), dim=8, num_levels=2)
        for fill in (0.0, 1.0):
            pyramid = _pyramid([torch.full((3, 4, 4, 8), fill) for _ in range(2)])
            assert tuple(sampler(pyramid).shape) == (3, 16, 8)

    def test_reference_points_unchanged_by_training(self):
        torch.manual_seed(6)
        sampler = RegionSampler(SamplerConfig(token_count=4, depth=2), dim=8, num_levels=1)
        before = sampler.anchors.reference_points.clone()
        optimizer = torch.optim.SGD(sampler.parameters(), lr=0.1)
        pyramid = _pyramid([torch.randn(2, 4, 4, 8)])
        for _ in range(3):
            optimizer.zero_grad()
            sampler(pyramid).pow(2).sum().backward()
            optimizer.step()
        assert torch.equal(before, sampler.anchors.reference_points)

    def test_gradient_of_offset_head_matches_finite_differences(self):
        torch.manual_seed(7)
        sampler = RegionSampler(
            SamplerConfig(token_count=4, depth=1, heads=2, points=2), dim=4, num_levels=2
        ).double()
        _randomize_heads(sampler.layers[0], scale=0.3)
        pyramid = _pyramid([torch.randn(1, 3, 3, 4, dtype=torch.float64) for _ in range(2)])
        weight = sampler.layers[0].offset_head.weight.detach().clone().requires_grad_()

        def energy(w: torch.Tensor) -> torch.Tensor:
            out = functional_call(sampler, {"layers.0.offset_head.weight": w}, (pyramid,))
            return out.pow(2).sum()

        assert torch.autograd.gradcheck(energy, (weight,), eps=1e-6, atol=1e-5, rtol=1e-3)

    def test_width_mismatch(self):
        anchors = init_anchor_grid(4, 8)
        layer = DeformableLayer(dim=8, heads=2, num_levels=1, points=1)
        with pytest.raises(ConfigurationError):
            sample_regions(_pyramid([torch.randn(1, 2, 2, 6)]), anchors, [layer])


class TestPlainGridTokens:
    """Pilot mode flattens the deepest level."""

    def test_two_by_two_row_major(self):
        grid = torch.arange(8, dtype=torch.float32).view(1, 2, 2, 2)
        tokens = plain_grid_tokens(_pyramid([torch.zeros(1, 2, 2, 2), grid]))
        assert tokens[0].tolist() == [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [6.0, 7.0]]

    def test_token_count_is_cell_count(self):
        tokens = plain_grid_tokens(_pyramid([torch.randn(2, 8, 8, 5)]))
        assert tuple(tokens.shape) == (2, 64, 5)
