"""Backend selection for the hot solver kernel.

The compiled Cython kernel is preferred when it was built; otherwise the
numpy implementation is used. Set ``FORDN_BACKEND=python`` to force the
fallback (e.g. for benchmarking), or ``FORDN_BACKEND=compiled`` to fail
loudly when the extension is missing.
"""

import os

from . import _kernels_py

_requested = os.environ.get("FORDN_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _kernels_py
    HAVE_COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = _kernels_py
        HAVE_COMPILED = False


def backend_name():
    return "compiled" if _impl is not _kernels_py else "python"


def nn_weighted_l1_batch(*args, **kwargs):
    """Dispatch to the active backend. See ``_kernels_py`` for the contract."""
    return _impl.nn_weighted_l1_batch(*args, **kwargs)
