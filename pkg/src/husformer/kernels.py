"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the NumPy
fallback is loaded. ``use_backend`` switches explicitly, which the tests and
the benchmark rely on to compare both.
"""

import functools

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "softmax_forward",
    "softmax_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "conv1d_forward",
    "conv1d_backward",
)

BACKEND = None


def _contiguous(fn):
    # the typed memoryviews in the extension reject strided views
    @functools.wraps(fn)
    def wrapper(*args):
        return fn(*(np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a for a in args))

    return wrapper


def available_backends():
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def use_backend(name):
    """Route all kernel calls through ``"compiled"`` or ``"python"``."""
    global BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        source = {fn: _contiguous(getattr(_ckernels, fn)) for fn in _NAMES}
    elif name == "python":
        source = {fn: getattr(_pykernels, fn) for fn in _NAMES}
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    for fn in _NAMES:
        globals()[fn] = source[fn]
    BACKEND = name


use_backend("compiled" if _ckernels is not None else "python")
