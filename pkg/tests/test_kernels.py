"""The compiled kernels and the NumPy fallback must agree."""

import numpy as np
import pytest

from husformer import _pykernels, kernels

pytestmark = pytest.mark.skipif(
    "compiled" not in kernels.available_backends(), reason="extension not built"
)


@pytest.fixture
def ck():
    from husformer import _ckernels

    return _ckernels


def test_softmax(ck, rng):
    x = rng.normal(size=(7, 5)) * 10
    gy = rng.normal(size=(7, 5))
    y = _pykernels.softmax_forward(x)
    np.testing.assert_allclose(ck.softmax_forward(x), y, atol=1e-14)
    np.testing.assert_allclose(ck.softmax_backward(y, gy), _pykernels.softmax_backward(y, gy), atol=1e-14)


def test_layer_norm(ck, rng):
    x = rng.normal(size=(6, 8))
    g, b = rng.normal(size=8), rng.normal(size=8)
    py = _pykernels.layer_norm_forward(x, g, b, 1e-5)
    cy = ck.layer_norm_forward(x, g, b, 1e-5)
    for p, c in zip(py, cy):
        np.testing.assert_allclose(c, p, atol=1e-12)
    gy = rng.normal(size=(6, 8))
    for p, c in zip(_pykernels.layer_norm_backward(gy, py[1], py[2], g),
                    ck.layer_norm_backward(gy, py[1], py[2], g)):
        np.testing.assert_allclose(c, p, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv1d(ck, rng, k):
    x = rng.normal(size=(3, 4, 11))
    w = rng.normal(size=(2, 4, k))
    np.testing.assert_allclose(ck.conv1d_forward(x, w), _pykernels.conv1d_forward(x, w), atol=1e-12)
    gy = rng.normal(size=(3, 2, 11))
    for p, c in zip(_pykernels.conv1d_backward(gy, x, w), ck.conv1d_backward(gy, x, w)):
        np.testing.assert_allclose(c, p, atol=1e-12)


def test_use_backend_switches():
    previous = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.softmax_forward is _pykernels.softmax_forward
        kernels.use_backend("compiled")
        assert kernels.softmax_forward is not _pykernels.softmax_forward
    finally:
        kernels.use_backend(previous)
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")
