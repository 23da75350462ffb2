"""
Robust two-head encoders

A desk-scale toolkit for training a two-head robust encoder against a clean
encoder, attacking it with PGD, and evaluating softmax and nearest-neighbor
defenses.
"""

__version__ = "1.0.0"
__author__ = "twohead developers"

__all__ = [
    "__version__",
    "__author__",
    "get_settings",
]


def get_settings(config_path=None, **overrides):
    """Lazy load settings so importing the package stays cheap."""
    from .config.settings import load_settings
    return load_settings(config_path, **overrides)
