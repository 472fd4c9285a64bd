"""videodub: lip-synchronized non-autoregressive speech synthesis.

Synthesizes mel-spectrograms from a phoneme sequence whose timing is
controlled by a video-frame sequence, with an optional image-based
speaker embedding for timbre control, plus training and audio-visual
sync evaluation.
"""

from .config import GenerateConfig, LossWeights, ModelConfig, TrainConfig
from .data import FrameGeometry, compute_upsample_factor, reconcile_lengths
from .model import DubbingModel

__version__ = "0.1.0"

__all__ = [
    "DubbingModel",
    "FrameGeometry",
    "GenerateConfig",
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
    "compute_upsample_factor",
    "reconcile_lengths",
    "__version__",
]
