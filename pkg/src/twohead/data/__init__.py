"""
Dataset Module - IDX files and synthetic Gaussian mixtures
"""

from .datasets import DatasetHandle, gen_synthetic, load_dataset, parse_idx, split_train_test, write_idx

__all__ = [
    'DatasetHandle',
    'gen_synthetic',
    'load_dataset',
    'parse_idx',
    'split_train_test',
    'write_idx',
]
