"""Potential-theoretic Helmholtz decomposition on a graph-perturbed half space."""

from .geometry import BoundaryFunction, BoxField, BoxGrid, PerturbedHalfSpace
from .kernels import KernelContext

__all__ = [
    "BoundaryFunction",
    "BoxField",
    "BoxGrid",
    "KernelContext",
    "PerturbedHalfSpace",
]

__version__ = "0.1.0"
