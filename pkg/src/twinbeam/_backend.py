"""Select the compiled kernels when available, NumPy fallback otherwise.

Set TWINBEAM_FORCE_PYTHON=1 to force the fallback (useful for the kernel
benchmark and for debugging).
"""

import os

_force_py = os.environ.get("TWINBEAM_FORCE_PYTHON", "").strip() not in ("", "0")

if not _force_py:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"
else:
    from . import _kernels_py as _impl
    BACKEND = "python"

xcorr_cross = _impl.xcorr_cross
deposit = _impl.deposit


def backend_info() -> dict:
    """Which kernel implementation this process is running."""
    return {"kernel_backend": BACKEND, "forced_python": _force_py}
