"""The compiled kernels must agree with the pure-Python reference."""
import numpy as np
import pytest

from fusiontrack import kernels
from fusiontrack._kernels_py import footprint

py = kernels.python_impl
cy = kernels.compiled_impl()
needs_compiled = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def _boxes(rng, n):
    out = np.empty((n, 7))
    out[:, [0, 2]] = rng.uniform(-1, 1, (n, 2))
    out[:, 1] = rng.uniform(-0.3, 0.3, n)
    out[:, 3:6] = rng.uniform(0.3, 2.0, (n, 3))
    out[:, 6] = rng.uniform(-np.pi, np.pi, n)
    return out


@needs_compiled
def test_iou3d_batch_agrees():
    rng = np.random.default_rng(0)
    a, b = _boxes(rng, 2000), _boxes(rng, 2000)
    assert np.abs(py.iou3d_batch(a, b) - cy.iou3d_batch(a, b)).max() <= 1e-12


@needs_compiled
def test_aligned_matrix_agrees():
    rng = np.random.default_rng(1)
    a, b = _boxes(rng, 40), _boxes(rng, 30)
    assert np.abs(py.iou3d_aligned_matrix(a, b) - cy.iou3d_aligned_matrix(a, b)).max() <= 1e-12


@needs_compiled
def test_clip_agrees():
    rng = np.random.default_rng(2)
    for r, s in zip(_boxes(rng, 300), _boxes(rng, 300)):
        p = footprint(r[0], r[2], r[3], r[4], r[6])
        q = footprint(s[0], s[2], s[3], s[4], s[6])
        a, b = py.clip(p, q), cy.clip(p, q)
        assert len(a) == len(b)
        assert np.allclose(np.array(a).reshape(-1, 2), np.array(b).reshape(-1, 2), atol=1e-12)


@needs_compiled
def test_jpda_agrees():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k, n = rng.integers(1, 5), rng.integers(1, 6)
        lr = rng.normal(0, 2, (k, n))
        gate = rng.random((k, n)) < 0.7
        a = py.jpda_marginals(lr, gate, 100_000)
        b = cy.jpda_marginals(lr, gate, 100_000)
        assert np.abs(a - b).max() <= 1e-12


@pytest.mark.parametrize("impl", [py] + ([cy] if cy is not None else []), ids=lambda m: m.__name__)
def test_jpda_event_cap(impl):
    lr = np.zeros((4, 4))
    gate = np.ones((4, 4), bool)
    # 209 events for a full 4x4 gate
    assert impl.jpda_marginals(lr, gate, 208) is None
    assert impl.jpda_marginals(lr, gate, 209) is not None


@pytest.mark.parametrize("impl", [py] + ([cy] if cy is not None else []), ids=lambda m: m.__name__)
def test_jpda_no_tracks(impl):
    out = impl.jpda_marginals(np.zeros((0, 3)), np.zeros((0, 3), bool), 10)
    assert out.shape == (0, 4)


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")
