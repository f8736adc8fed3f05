"""Kernel backend selection.

The compiled Cython kernels are preferred when the extension built; the
NumPy reference in ``_kernels_py`` is the fallback and the semantic
authority. Set ``MVRML_PURE_PYTHON=1`` to force the reference implementation
(useful for the backend-agreement tests and the kernel benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("MVRML_PURE_PYTHON"):
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False

BACKEND = "cython" if COMPILED else "numpy"

forward_eval = _impl.forward_eval
forward_train = _impl.forward_train
loss_grad = _impl.loss_grad
