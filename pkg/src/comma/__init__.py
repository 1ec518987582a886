"""comma: contrastive multilayer multimodal attention for narration grounding.

A self-contained float64 implementation of masked cross-/self-attention over
word + video-region token sequences, sentence- and word-level contrastive
training, attention-rollout inference, and pointing-accuracy evaluation on a
seeded synthetic benchmark.
"""

from .masks import AttentionMask, ModalityLayout, SelfAttentionVariant
from .model import CommaConfig, CommaModel, CommaParams
from .synthetic import GroundingSample, SynthConfig
from .tensor import Gradients, Tensor
from .training import LossMode, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Tensor",
    "Gradients",
    "ModalityLayout",
    "AttentionMask",
    "SelfAttentionVariant",
    "CommaConfig",
    "CommaModel",
    "CommaParams",
    "TrainConfig",
    "LossMode",
    "SynthConfig",
    "GroundingSample",
]
