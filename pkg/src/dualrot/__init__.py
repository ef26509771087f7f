"""Semi-supervised camouflaged object segmentation with dual-rotation consistency."""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
