from src.encoder.backbone import FrozenViTEncoder, build_encoder, extract_multilevel
from src.encoder.projector import (
    LevelMLP,
    LevelProjector,
    fuse_cls_per_level,
    project_levels,
)
from src.encoder.pyramid import FeaturePyramid, PyramidLevel
from src.encoder.warmup import masked_patch_warmup
from src.encoder.weights import export_encoder_weights, load_encoder_weights


__all__ = [
    "FeaturePyramid",
    "FrozenViTEncoder",
    "LevelMLP",
    "LevelProjector",
    "PyramidLevel",
    "build_encoder",
    "export_encoder_weights",
    "extract_multilevel",
    "fuse_cls_per_level",
    "load_encoder_weights",
    "masked_patch_warmup",
    "project_levels",
]
