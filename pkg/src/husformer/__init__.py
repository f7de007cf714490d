"""Multi-modal fusion transformer on a small reverse-mode autodiff core."""

from .ablations import build_variant, describe_variant
from .data import Dataset, read_dataset, synthesize_dataset, write_dataset
from .model import Husformer, ModalitySpec, ModelConfig
from .training import TrainConfig, cross_validate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Husformer",
    "ModalitySpec",
    "ModelConfig",
    "TrainConfig",
    "build_variant",
    "cross_validate",
    "describe_variant",
    "evaluate",
    "read_dataset",
    "synthesize_dataset",
    "train",
    "write_dataset",
]
