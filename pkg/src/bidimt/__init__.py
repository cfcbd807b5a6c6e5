"""Single-model bidirectional sequence generation for translation.

One transformer encoder-decoder is trained to decode both left-to-right
and right-to-left, signalled by two learned start tokens; inference
generates candidates in both directions, rescores each under the opposite
direction, and keeps the candidate with the best summed log-likelihood.
"""

from .inference import DecodeConfig, Hypothesis, ScoredCandidate, translate
from .model import ModelConfig, Parameters
from .training import TrainConfig, bidirectional_loss, train
from .vocab import EOS, L2R, PAD, R2L, SOS_L2R, SOS_R2L, UNK, Vocab

__all__ = [
    "DecodeConfig", "Hypothesis", "ScoredCandidate", "translate",
    "ModelConfig", "Parameters", "TrainConfig", "bidirectional_loss", "train",
    "Vocab", "PAD", "UNK", "EOS", "SOS_L2R", "SOS_R2L", "L2R", "R2L",
]

__version__ = "0.1.0"
