"""Reverse-mode tensor core and the two-stage detector network."""

from .model import (
    BackboneConfig,
    FeatureMaps,
    ModelConfig,
    SecondStageOutput,
    SlotDetectorNet,
    extract_patches,
)
from .tensor import Tensor

__all__ = [
    "BackboneConfig",
    "FeatureMaps",
    "ModelConfig",
    "SecondStageOutput",
    "SlotDetectorNet",
    "Tensor",
    "extract_patches",
]
