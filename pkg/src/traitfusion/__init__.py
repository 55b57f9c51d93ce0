"""traitfusion: multimodal OCEAN-trait regression at desk scale.

Rule-based behaviour encoding from keypoint streams, cross-attention fusion
of face/context/audio/metadata features, chunked LSTM temporal aggregation,
and a transcript-fused regression head, all built on a small reverse-mode
tensor core so every gradient is verifiable by finite differences.
"""

from .errors import (
    DataError,
    DimensionError,
    ParameterError,
    TraitFusionError,
    UsageError,
)
from .tensor import Tape, Tensor, grad_check, load_tensor, parameter, save_tensor

__all__ = [
    "Tape",
    "Tensor",
    "parameter",
    "grad_check",
    "save_tensor",
    "load_tensor",
    "TraitFusionError",
    "DimensionError",
    "ParameterError",
    "DataError",
    "UsageError",
]

__version__ = "0.1.0"
