"""Time-domain speech enhancement with feedback stages, self-contained.

The package carries its own differentiable tensor engine (ftnet.tensor),
the network and its analyzers (ftnet.model), WAV and framing utilities
(ftnet.audio), SNR-controlled pair generation (ftnet.mixer), the training
harness (ftnet.training, ftnet.checkpoint), and a CLI (ftnet.cli).
"""

from .errors import (
    ConfigError,
    DegenerateSignalError,
    FormatError,
    FTNetError,
    ShapeError,
    UsageError,
)
from .model import ModelConfig, analyze_structure, build_model, multistage_forward
from .tensor import Parameter, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "FTNetError",
    "ConfigError",
    "ShapeError",
    "UsageError",
    "FormatError",
    "DegenerateSignalError",
    "ModelConfig",
    "build_model",
    "multistage_forward",
    "analyze_structure",
    "Tensor",
    "Parameter",
    "no_grad",
    "__version__",
]
