"""Backend selection for the batched kernels.

The compiled extension (``_ckern``) is preferred when it imported cleanly;
otherwise the numpy reference kernels are used. Set ``SETMATCH_BACKEND`` to
``numpy`` or ``cython`` to force one side (forcing an unavailable compiled
backend is a configuration error).

Both backends implement the same function set with identical signatures and
agree to ~1e-12; ``tests/test_backends.py`` pins that equivalence.
"""

import os

from ..errors import ConfigurationError
from . import numpy_backend

try:
    from . import _ckern as cython_backend
except ImportError:
    cython_backend = None


def available_backends():
    names = ["numpy"]
    if cython_backend is not None:
        names.append("cython")
    return names


def get_backend(name=None):
    if name is None:
        name = os.environ.get("SETMATCH_BACKEND", "")
    if name in ("", "auto"):
        return cython_backend if cython_backend is not None else numpy_backend
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        if cython_backend is None:
            raise ConfigurationError(
                "compiled backend requested but the extension is not built"
            )
        return cython_backend
    raise ConfigurationError(f"unknown backend {name!r}")


active = get_backend()
