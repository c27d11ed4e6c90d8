import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depcalab import _pykernels, kernels

try:
    from depcalab import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def test_backend_flag():
    assert kernels.BACKEND == ("cython" if _ckernels is not None else "python")


def _arrays(seed, W, q):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(W, q, q)) * 0.5
    h = rng.normal(size=(W, q))
    P = rng.normal(size=(W, q, q))
    return C, h, P


@needs_ext
@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 4))
def test_sweeps_agree(seed, W, q):
    C, h, P = _arrays(seed, W, q)
    assert np.allclose(_ckernels.projected_sweep_forward(C, h, P), _pykernels.projected_sweep_forward(C, h, P), atol=1e-12)
    assert np.allclose(_ckernels.projected_sweep_backward(C, h, P), _pykernels.projected_sweep_backward(C, h, P), atol=1e-12)


@needs_ext
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 12), st.integers(1, 3))
def test_chain_products_agree(seed, B, L, q):
    rng = np.random.default_rng(seed)
    steps = rng.normal(size=(B, L, q, q))
    init = rng.normal(size=(B, q, q))
    assert np.allclose(_ckernels.chain_products(steps, init), _pykernels.chain_products(steps, init), rtol=1e-12, atol=1e-12)


@needs_ext
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_remote_variation_agrees(seed, q):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(200, q))
    shifts = np.arange(0, 30, dtype=np.int64)
    idx = np.arange(10, 150, dtype=np.int64)
    a = _ckernels.remote_variation(values, shifts, idx)
    b = _pykernels.remote_variation(values, shifts, idx)
    assert np.allclose(a, b, atol=1e-14)
    assert a[0] == 0.0


@needs_ext
def test_readonly_inputs_accepted():
    C, h, P = _arrays(0, 10, 2)
    for arr in (C, h, P):
        arr.setflags(write=False)
    _ckernels.projected_sweep_forward(C, h, P)
    _ckernels.projected_sweep_backward(np.broadcast_to(C[0], C.shape), h, P)


def test_forward_sweep_scalar_geometric():
    W = 30
    C = np.full((W, 1, 1), 0.5)
    h = np.ones((W, 1))
    P = np.ones((W, 1, 1))
    s = kernels.projected_sweep_forward(C, h, P)
    assert s[-1, 0] == pytest.approx(2 * (1 - 0.5 ** (W - 1)))
