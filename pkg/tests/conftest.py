import sys
from pathlib import Path

import pytest

from fusiontrack import kernels

sys.path.insert(0, str(Path(__file__).parent))

BACKENDS = ["python"] + (["cython"] if kernels.compiled_impl() is not None else [])
_NAMES = ("clip", "iou3d_batch", "iou3d_aligned_matrix", "jpda_marginals")


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    impl = kernels.python_impl if request.param == "python" else kernels.compiled_impl()
    for name in _NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param
