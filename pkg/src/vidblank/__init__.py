"""Fill-in-the-blank word prediction for captioned video clips.

Twin LSTMs encode the sentence fragments on either side of the blank,
spatial attention pools per-region video features against the merged
sentence vector, and a softmax head names the missing word. Includes the
full Adagrad training pipeline (end-to-end and incremental regimes), binary
feature/checkpoint formats, and a synthetic-corpus generator for desk-scale
verification.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    IntegrityError,
    NumericError,
)
from .tensor import Tensor, grad_check, no_grad

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "IntegrityError",
    "NumericError",
    "Tensor",
    "grad_check",
    "no_grad",
    "__version__",
]
