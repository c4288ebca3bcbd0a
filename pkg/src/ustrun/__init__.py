"""Mixed-domain semi-supervised segmentation with a mean teacher, unified copy-paste,
symmetric pseudo-label guidance, progress-aware amplitude mixup and reliability filtering.

Everything runs on numpy/scipy at desk scale (64x64 synthetic images).
"""
from .trainer import TrainConfig, evaluate, infer, train

__all__ = ["TrainConfig", "train", "evaluate", "infer"]
__version__ = "0.1.0"
