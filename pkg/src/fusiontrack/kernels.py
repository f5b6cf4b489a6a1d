"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``FUSIONTRACK_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FUSIONTRACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

clip = _impl.clip
iou3d_batch = _impl.iou3d_batch
iou3d_aligned_matrix = _impl.iou3d_aligned_matrix
jpda_marginals = _impl.jpda_marginals

# reference implementations, always available for cross-checks and benchmarks
python_impl = _kernels_py


def compiled_impl():
    """Return the compiled module or ``None`` if it is not built."""
    try:
        from . import _kernels_c
    except ImportError:
        return None
    return _kernels_c
