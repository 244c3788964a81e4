"""Kernel backend selection.

SEGATTACK_BACKEND picks the convolution kernels:

  auto   (default) use numba if it imports, else fall back to numpy
  numba  require the jitted kernels
  numpy  force the pure-numpy fallback (also skips the numba import)

The choice is made once, on first use.
"""

import os

from .errors import ValidationError

_module = None
_name = None


def kernels():
    """Return the active kernel module, loading it on first call."""
    global _module, _name
    if _module is not None:
        return _module
    choice = os.environ.get("SEGATTACK_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValidationError(
            f"SEGATTACK_BACKEND must be auto, numba or numpy, got {choice!r}")
    if choice == "numpy":
        from . import _conv_numpy as mod
        _module, _name = mod, "numpy"
    elif choice == "numba":
        from . import _conv_numba as mod
        _module, _name = mod, "numba"
    else:
        try:
            from . import _conv_numba as mod
            _module, _name = mod, "numba"
        except ImportError:
            from . import _conv_numpy as mod
            _module, _name = mod, "numpy"
    return _module


def backend_name():
    kernels()
    return _name
