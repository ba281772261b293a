"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; setting
``DDCMIX_PURE_PYTHON=1`` forces the numpy fallback.  ``BACKEND`` records
which one is active.
"""

import os

from . import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("DDCMIX_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels

counter_uniforms = _impl.counter_uniforms
draw_categorical = _impl.draw_categorical
softmax_rows = _impl.softmax_rows
logsumexp_rows = _impl.logsumexp_rows
givens_step = _impl.givens_step

__all__ = [
    "BACKEND",
    "counter_uniforms",
    "draw_categorical",
    "softmax_rows",
    "logsumexp_rows",
    "givens_step",
]
