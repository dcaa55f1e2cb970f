from src.sampler.anchors import AnchorQuerySet, grid_reference_points, init_anchor_grid
from src.sampler.deformable import (
    DeformableLayer,
    RegionSampler,
    bilinear_sample,
    plain_grid_tokens,
    sample_regions,
)


__all__ = [
    "AnchorQuerySet",
    "DeformableLayer",
    "RegionSampler",
    "bilinear_sample",
    "grid_reference_points",
    "init_anchor_grid",
    "plain_grid_tokens",
    "sample_regions",
]
