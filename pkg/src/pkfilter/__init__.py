"""Pseudo-knockoff filters for fixed-design variable selection with FDR control."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
