"""Weakly-supervised stacked Indian Buffet Process with spatial and
factorial MRF priors: learning, inference, downstream tasks and metrics."""

from .core import (
    AppearanceModel,
    Bag,
    BagPosterior,
    ConfigError,
    CorrelationMatrix,
    DatasetError,
    DatasetHandle,
    DimensionMismatchError,
    EdgeIndexError,
    EmptyDatasetError,
    FormatError,
    ModelConfig,
    VocabMismatchError,
    WeakLabels,
    WsibpError,
    expected_pi,
    validate_dataset,
)
from .generative import SyntheticDataset, plant_correlation, sample_dataset
from .inference import (
    FitResult,
    StickBoundCache,
    fit,
    fit_transductive,
    infer_test,
    stick_bound,
)

__all__ = [
    "AppearanceModel",
    "Bag",
    "BagPosterior",
    "ConfigError",
    "CorrelationMatrix",
    "DatasetError",
    "DatasetHandle",
    "DimensionMismatchError",
    "EdgeIndexError",
    "EmptyDatasetError",
    "FitResult",
    "FormatError",
    "ModelConfig",
    "StickBoundCache",
    "SyntheticDataset",
    "VocabMismatchError",
    "WeakLabels",
    "WsibpError",
    "expected_pi",
    "fit",
    "fit_transductive",
    "infer_test",
    "plant_correlation",
    "sample_dataset",
    "stick_bound",
    "validate_dataset",
]
