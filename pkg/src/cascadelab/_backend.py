"""Kernel backend selection.

``CASCADELAB_BACKEND=python`` forces the numpy kernels, ``cython`` makes a
missing compiled module an error, anything else (default ``auto``) prefers
the compiled module when it imports.
"""

import os

from . import _pykernels

_choice = os.environ.get("CASCADELAB_BACKEND", "auto").strip().lower()

if _choice == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        kernels = _pykernels
        BACKEND = "python"
