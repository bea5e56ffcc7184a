"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly, unless the environment
variable ``UCAP_KERNELS=numpy`` forces the pure-numpy path. :func:`use`
switches at runtime (tests and the benchmark rely on that).
"""

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}
try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None
else:
    _BACKENDS["numba"] = _numba

_NAMES = (
    "sigmoid",
    "lstm_forward",
    "lstm_backward",
    "log_softmax_forward",
    "log_softmax_backward",
    "adam_update",
)

backend = None


def available():
    return sorted(_BACKENDS)


def use(name):
    """Select the kernel backend ("numba" or "numpy")."""
    global backend
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available()}")
    mod = _BACKENDS[name]
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    backend = name


use(os.environ.get("UCAP_KERNELS", "numba" if _numba is not None else "numpy"))
