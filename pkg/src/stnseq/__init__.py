"""Cluttered digit-sequence classification with differentiable affine attention.

A self-contained numpy stack: tensor ops, layers with hand-written backward
passes, an affine grid sampler, a gated recurrent cell, three model variants,
a canvas dataset generator, RMSprop training, and finite-difference gradient
verification. See the README for the command-line surface.
"""

from . import config
from .estimator import SequenceDigitClassifier
from .models import ModelConfig, ModelOutput, build, predict
from .stn import bilinear_sample, make_grid, output_extent, transform_grid
from .training import per_digit_error, sequence_loss

__version__ = "0.1.0"

__all__ = [
    "config",
    "SequenceDigitClassifier",
    "ModelConfig",
    "ModelOutput",
    "build",
    "predict",
    "bilinear_sample",
    "make_grid",
    "output_extent",
    "transform_grid",
    "per_digit_error",
    "sequence_loss",
    "__version__",
]
