"""Weakly pre-learnt saliency prediction.

Pipeline: graph-based weak labels -> entropy filtering -> CNN
pretraining on the selected labels -> fine-tuning on ground-truth
maps -> six-metric fixation evaluation.
"""

from .gbvs import gbvs_saliency
from .metrics import evaluate
from .train import TrainConfig, predict, train_stage
from .weakset import entropy, select_low_entropy

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "entropy",
    "evaluate",
    "gbvs_saliency",
    "predict",
    "select_low_entropy",
    "train_stage",
    "__version__",
]
