"""Self-supervised audio-visual representation learning.

A numpy implementation, with optional numba-compiled kernels, of masked
audio-visual pre-training: tube/random masking, twin transformer encoders
joined by a bidirectional cross-attention fusion stage, lightweight
decoders fed by layer-wise skip connections, a layer-wise cross-modal
contrastive loss, and multi-layer feature fusion for fine-tuning.
"""

from .config import TrainConfig, build_config
from .errors import ConfigError, DataError, FormatError, NumericError
from .models import (FineTuneModel, ModelConfig, PretrainModel, get_config,
                     param_count)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "FormatError", "NumericError",
    "ModelConfig", "PretrainModel", "FineTuneModel", "get_config",
    "param_count", "TrainConfig", "build_config", "__version__",
]
