from src.evalsuite.metrics import (
    PrecisionRecall,
    classifier_score_from_logits,
    frechet_distance,
    frechet_distance_from_features,
    gaussian_stats,
    precision_recall,
    psnr,
    ssim,
)
from src.evalsuite.probe import ProbeResult, linear_probe, probe_representation, split_for_probe
from src.evalsuite.proxy import (
    ProxyExtractor,
    extract_proxy_outputs,
    inception_style_score,
    train_proxy_extractor,
)
from src.evalsuite.reports import METRIC_COLUMNS, MetricReport, MetricRow, read_metric_csv
from src.evalsuite.usage import UsageReport, usage_report


__all__ = [
    "METRIC_COLUMNS",
    "MetricReport",
    "MetricRow",
    "PrecisionRecall",
    "ProbeResult",
    "ProxyExtractor",
    "UsageReport",
    "classifier_score_from_logits",
    "extract_proxy_outputs",
    "frechet_distance",
    "frechet_distance_from_features",
    "gaussian_stats",
    "inception_style_score",
    "linear_probe",
    "precision_recall",
    "probe_representation",
    "psnr",
    "read_metric_csv",
    "split_for_probe",
    "ssim",
    "train_proxy_extractor",
    "usage_report",
]
