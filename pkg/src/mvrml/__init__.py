"""Multi-view regularized meta-learning toolkit for small dense classifiers.

Trains dense networks on multi-domain data with ERM, Reptile, or the
multi-view regularized meta-learning scheme (trajectory averaging plus an
interpolated outer update), evaluates multi-view test-time predictions, and
ships diagnostics: prediction-change rate, sharpness probes, loss-surface
planes, and a uniform-stability generalization-bound evaluator.

The hot kernels (dense forward/backward) have a compiled Cython core with a
NumPy fallback; ``mvrml.backend_name()`` reports which one is active.
"""

from ._backend import BACKEND, COMPILED
from .rng import RngStream

__version__ = "0.1.0"


def backend_name() -> str:
    """Active kernel backend: ``"cython"`` or ``"numpy"``."""
    return BACKEND


__all__ = ["BACKEND", "COMPILED", "RngStream", "backend_name", "__version__"]
