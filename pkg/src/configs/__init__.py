from src.configs.loader import dump_config, load_run_config
from src.configs.schemas import (
    ARConfig,
    BottleneckConfig,
    DataConfig,
    DecoderConfig,
    EncoderConfig,
    EvalConfig,
    FlowConfig,
    LossWeights,
    OptimizerConfig,
    RunConfig,
    SamplerConfig,
    SweepConfig,
    TokenizerConfig,
)


__all__ = [
    "ARConfig",
    "BottleneckConfig",
    "DataConfig",
    "DecoderConfig",
    "EncoderConfig",
    "EvalConfig",
    "FlowConfig",
    "LossWeights",
    "OptimizerConfig",
    "RunConfig",
    "SamplerConfig",
    "SweepConfig",
    "TokenizerConfig",
    "dump_config",
    "load_run_config",
]
