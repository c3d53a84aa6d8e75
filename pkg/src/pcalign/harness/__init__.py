from .sampling import augment, sample_points
from .train import TrainConfig, TrainResult, bn_momentum_at, lr_at, train
from .metrics import (
    BINS,
    DISTANCE_FILTERS,
    FilterReport,
    MetricsReport,
    Prediction,
    VelocityReport,
    evaluate,
    format_report_text,
    read_predictions,
    velocity_rmse,
    write_predictions,
    write_report_csv,
    write_report_json,
)
from .bench import BenchReport, bench, bench_icp

__all__ = [
    "augment",
    "sample_points",
    "TrainConfig",
    "TrainResult",
    "bn_momentum_at",
    "lr_at",
    "train",
    "BINS",
    "DISTANCE_FILTERS",
    "FilterReport",
    "MetricsReport",
    "Prediction",
    "VelocityReport",
    "evaluate",
    "format_report_text",
    "read_predictions",
    "velocity_rmse",
    "write_predictions",
    "write_report_csv",
    "write_report_json",
    "BenchReport",
    "bench",
    "bench_icp",
]
