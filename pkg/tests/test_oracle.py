import numpy as np
import pytest

from mobiface import oracle
from mobiface.ops import ConvParams, DwConvParams, FcParams


def test_hand_case():
    x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
    k = np.array([[1, 0], [0, 1]], np.float32).reshape(1, 1, 2, 2)
    out = oracle.naive_conv2d(x, ConvParams(k))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 5.0


def test_identity_kernels_copy_input(rng):
    x = rng.standard_normal((2, 4, 6, 5), dtype=np.float32)
    eye = np.eye(4, dtype=np.float32).reshape(4, 4, 1, 1)
    assert oracle.naive_conv2d(x, ConvParams(eye)).tobytes() == x.tobytes()
    delta = np.zeros((4, 1, 3, 3), np.float32)
    delta[:, 0, 1, 1] = 1
    assert oracle.naive_dwconv2d(x, DwConvParams(delta, 1, 1)).tobytes() == x.tobytes()
    w = np.eye(6, dtype=np.float32)
    v = x.ravel()[:6]
    np.testing.assert_array_equal(oracle.naive_fc(v, FcParams(w, np.zeros(6, np.float32))), v)


def test_errors():
    x = np.zeros((1, 2, 4, 4), np.float32)
    with pytest.raises(ValueError):
        oracle.naive_conv2d(x, ConvParams(np.zeros((1, 3, 1, 1), np.float32)))
    with pytest.raises(ValueError):
        oracle.naive_dwconv2d(x, DwConvParams(np.zeros((3, 1, 3, 3), np.float32)))
    with pytest.raises(ValueError):
        oracle.naive_fc(np.zeros(3, np.float32), FcParams(np.zeros((2, 4), np.float32), np.zeros(2, np.float32)))
    with pytest.raises(ValueError):
        oracle.naive_conv2d(np.zeros((1, 1, 2, 2), np.float32), ConvParams(np.zeros((1, 1, 3, 3), np.float32)))
