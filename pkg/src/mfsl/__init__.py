"""Multi-fidelity learned semi-Lagrangian finite-volume solvers."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
