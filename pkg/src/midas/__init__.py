"""Imbalance-aware multimodal training on misaligned samples."""

from .autodiff import SGD, Tape, Tensor, grad_check
from .config import ConfigError, ExperimentConfig, load_config
from .core import AlphaState, MisalignedPlan, MisalignedSample, train
from .data import FeatureDataset, SyntheticSpec, batch_iter, generate_synthetic
from .metrics import EvalReport, evaluate_model
from .model import EncoderSpec, MultimodalModel, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "SGD", "Tape", "Tensor", "grad_check",
    "ConfigError", "ExperimentConfig", "load_config",
    "AlphaState", "MisalignedPlan", "MisalignedSample", "train",
    "FeatureDataset", "SyntheticSpec", "batch_iter", "generate_synthetic",
    "EvalReport", "evaluate_model",
    "EncoderSpec", "MultimodalModel", "load_checkpoint", "save_checkpoint",
    "__version__",
]
