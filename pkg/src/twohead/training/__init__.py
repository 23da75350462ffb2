"""
Training Module - standard and free adversarial training
"""

from .models import EpochRecord, RunMetrics
from .optimizer import SGD, lr_at
from .results_manager import ResultsManager
from .trainer import Trainer, train_clean_encoder, train_free, train_standard

__all__ = [
    'EpochRecord',
    'RunMetrics',
    'SGD',
    'lr_at',
    'ResultsManager',
    'Trainer',
    'train_clean_encoder',
    'train_free',
    'train_standard',
]
