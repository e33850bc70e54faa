"""Hot numeric kernels with a switchable backend.

``THINICE_BACKEND`` picks the implementation at import time:

* ``numba`` (default when numba imports): compiled loops from ``_numba``.
* ``numpy``: the vectorised reference path in ``_numpy``.

Both paths accumulate in float64. They agree to rounding, not bit for bit,
so a run is only byte-reproducible against itself on a fixed backend.
"""

import logging
import os

from . import _numpy

logger = logging.getLogger(__name__)

BACKENDS = {"numpy": _numpy}

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
else:
    BACKENDS["numba"] = _numba


def _select(name=None):
    name = (name or os.environ.get("THINICE_BACKEND") or ("numba" if _numba else "numpy")).lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown THINICE_BACKEND {name!r}; expected one of {sorted(BACKENDS)}")
    return name


BACKEND = _select()
_impl = BACKENDS[BACKEND]
logger.debug("kernel backend: %s", BACKEND)

matmul = _impl.matmul
conv2d_forward = _impl.conv2d_forward
conv2d_backward_weight = _impl.conv2d_backward_weight
conv2d_backward_input = _impl.conv2d_backward_input
midranks = _impl.midranks
gaussian_binomial = _impl.gaussian_binomial

__all__ = [
    "BACKEND",
    "BACKENDS",
    "matmul",
    "conv2d_forward",
    "conv2d_backward_weight",
    "conv2d_backward_input",
    "midranks",
    "gaussian_binomial",
]
