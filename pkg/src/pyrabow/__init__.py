"""Bag-of-visual-words image classification on dense SIFT descriptors."""

__version__ = "0.1.0"

from ._native import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
