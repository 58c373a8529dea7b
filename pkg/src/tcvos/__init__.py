"""Two-stream video object segmentation at desk scale.

A shared transformer trunk encodes both the RGB frame and its rendered
optical flow; small low-rank collateral branches specialize the motion path.
Decoding runs twice: the first pass produces a saliency map that guides a
cosine-confidence refinement of the level-4 features before the second pass
emits the final mask. Everything runs on an in-package numpy autodiff
engine, trained against synthetic sequences with analytic ground truth.
"""

from .config import ModelConfig, load_config, tiny_config
from .model import SegModel, build_model
from .tensor import Tape, Tensor, backward, parameter

__all__ = [
    "ModelConfig", "load_config", "tiny_config",
    "SegModel", "build_model",
    "Tape", "Tensor", "backward", "parameter",
]

__version__ = "0.1.0"
