from src.bottleneck.continuous import (
    ContinuousLatent,
    ContinuousProjection,
    DownProjection,
    UpProjection,
    down_project,
    project_continuous,
    up_project,
)
from src.bottleneck.quantizer import (
    Codebook,
    DiscreteLatent,
    UsageTracker,
    VQLosses,
    codebook_usage,
    dequantize,
    nearest_indices,
    quantize,
)


__all__ = [
    "Codebook",
    "ContinuousLatent",
    "ContinuousProjection",
    "DiscreteLatent",
    "DownProjection",
    "UpProjection",
    "UsageTracker",
    "VQLosses",
    "codebook_usage",
    "dequantize",
    "down_project",
    "nearest_indices",
    "project_continuous",
    "quantize",
    "up_project",
]
