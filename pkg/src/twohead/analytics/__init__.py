"""
Analytics Module - defenses, loss surfaces and sweeps
"""

from .defense import (
    EvaluationReport,
    GalleryIndex,
    build_gallery,
    evaluate,
    knn_classify,
    knn_confidence,
    sample_loss,
    softmax_classify,
)
from .surface import SurfaceResult, SurfaceSpec, adversarial_direction, loss_grid, rademacher_direction

__all__ = [
    'EvaluationReport',
    'GalleryIndex',
    'build_gallery',
    'evaluate',
    'knn_classify',
    'knn_confidence',
    'sample_loss',
    'softmax_classify',
    'SurfaceResult',
    'SurfaceSpec',
    'adversarial_direction',
    'loss_grid',
    'rademacher_direction',
]
