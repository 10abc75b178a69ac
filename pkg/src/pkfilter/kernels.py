"""Backend selection for the hot loops.

The compiled extension ``pkfilter._kernels`` is used when it imports; otherwise
(or when ``PKFILTER_PURE_PYTHON=1`` is set) the NumPy implementation in
``pkfilter._kernels_py`` is used.  ``BACKEND`` names the active choice.
"""
import os

from . import _kernels_py

if os.environ.get("PKFILTER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

cd_lasso_gram = _impl.cd_lasso_gram
min_log_bound = _impl.min_log_bound


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
