"""Backend selection for the hot elementwise kernels.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is imported. Set ``ARCHFORGE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("ARCHFORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
    else:
        BACKEND = "cython"
else:
    _impl = _kernels_py

rmsprop_update = _impl.rmsprop_update
sgd_update = _impl.sgd_update
tanh_backward = _impl.tanh_backward
relu_backward = _impl.relu_backward
error_correlation = _impl.error_correlation


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
