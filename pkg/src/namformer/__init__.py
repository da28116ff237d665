"""NAMformer: a tabular transformer with identifiable marginal feature effects."""

from .encoding import EncoderState, FeatureSpec, fit_encoders
from .model import ModelConfig, NAMformer, extract_shape_function
from .simulation import SimConfig, generate
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EncoderState",
    "FeatureSpec",
    "ModelConfig",
    "NAMformer",
    "SimConfig",
    "TrainConfig",
    "extract_shape_function",
    "fit_encoders",
    "generate",
    "train",
]
