"""Python access to the QuickTumorNet core."""

from ._core import (
    NUM_CLASSES,
    ConfigError,
    DataError,
    DivergenceError,
    FormatError,
    IoError,
    Model,
    ModelConfig,
    ShapeError,
    block_names,
    dice,
    loss,
    parameter_count,
    read_image,
    read_mask,
    roc_auc,
    synth,
)

__all__ = [
    "NUM_CLASSES",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "FormatError",
    "IoError",
    "Model",
    "ModelConfig",
    "ShapeError",
    "block_names",
    "dice",
    "loss",
    "parameter_count",
    "read_image",
    "read_mask",
    "roc_auc",
    "synth",
]
