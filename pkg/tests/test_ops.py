import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobiface import ops, oracle
from mobiface.ops import BatchNormParams, ConvParams, DwConvParams, FcParams, PReLUParams
from mobiface.tensor import ShapeError


def _bn(c, gamma=1.0, beta=0.0, mean=0.0, var=1.0, eps=0.0):
    f = lambda v: np.full(c, v, np.float32)  # noqa: E731
    return BatchNormParams(f(gamma), f(beta), f(mean), f(var), eps)


def _random_bn(rng, c):
    return BatchNormParams(
        rng.uniform(0.5, 1.5, c).astype(np.float32),
        rng.standard_normal(c, dtype=np.float32),
        rng.standard_normal(c, dtype=np.float32),
        rng.uniform(0.1, 2.0, c).astype(np.float32),
    )


# -- convolutions -------------------------------------------------------------


def test_conv2d_stem_shape(rng):
    x = rng.standard_normal((1, 3, 112, 112), dtype=np.float32)
    p = ConvParams(rng.standard_normal((64, 3, 3, 3), dtype=np.float32), stride=2, padding=1)
    assert ops.conv2d(x, p).shape == (1, 64, 56, 56)


def test_conv2d_hand_case():
    x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
    k = np.array([[1, 0], [0, 1]], np.float32).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(ops.conv2d(x, ConvParams(k)), [[[[5.0]]]])


def test_pointwise_identity(rng):
    x = rng.standard_normal((2, 5, 7, 3), dtype=np.float32)
    out = ops.conv2d(x, ConvParams(np.eye(5, dtype=np.float32).reshape(5, 5, 1, 1)))
    assert out.tobytes() == x.tobytes()


def test_conv2d_errors(rng):
    x = np.zeros((1, 3, 4, 4), np.float32)
    with pytest.raises(ShapeError, match="channels"):
        ops.conv2d(x, ConvParams(np.zeros((2, 4, 1, 1), np.float32)))
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((1, 3, 2, 2), np.float32), ConvParams(np.zeros((1, 3, 3, 3), np.float32)))
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((3, 4, 4), np.float32), ConvParams(np.zeros((1, 3, 1, 1), np.float32)))


@pytest.mark.parametrize("c,h,stride,expected", [(64, 56, 1, 56), (128, 56, 2, 28)])
def test_dwconv_shapes(rng, c, h, stride, expected):
    x = rng.standard_normal((1, c, h, h), dtype=np.float32)
    p = DwConvParams(rng.standard_normal((c, 1, 3, 3), dtype=np.float32), stride, 1)
    assert ops.dwconv2d(x, p).shape == (1, c, expected, expected)


def test_dwconv_delta_identity(rng):
    x = rng.standard_normal((2, 6, 9, 9), dtype=np.float32)
    delta = np.zeros((6, 1, 3, 3), np.float32)
    delta[:, 0, 1, 1] = 1
    assert ops.dwconv2d(x, DwConvParams(delta, 1, 1)).tobytes() == x.tobytes()


def test_dwconv_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.dwconv2d(np.zeros((1, 3, 4, 4), np.float32), DwConvParams(np.zeros((4, 1, 3, 3), np.float32)))


@given(size=st.integers(1, 40), k=st.sampled_from([1, 3]), stride=st.integers(1, 3), pad=st.integers(0, 2))
def test_output_size_formula(size, k, stride, pad):
    expected = (size + 2 * pad - k) // stride + 1
    if expected < 1:
        with pytest.raises(ShapeError):
            ops.conv_output_size(size, k, stride, pad)
        return
    assert ops.conv_output_size(size, k, stride, pad) == expected
    x = np.ones((1, 2, size, size), np.float32)
    out = ops.conv2d(x, ConvParams(np.ones((3, 2, k, k), np.float32), None, stride, pad))
    assert out.shape == (1, 3, expected, expected)
    out = ops.dwconv2d(x, DwConvParams(np.ones((2, 1, k, k), np.float32), stride, pad))
    assert out.shape == (1, 2, expected, expected)


conv_cases = st.fixed_dictionaries(dict(
    n=st.integers(1, 2), cin=st.integers(1, 8), cout=st.integers(1, 8),
    h=st.integers(3, 16), w=st.integers(3, 16), k=st.sampled_from([1, 3]),
    stride=st.sampled_from([1, 2]), pad=st.sampled_from([0, 1]), seed=st.integers(0, 2**32 - 1),
))


@settings(max_examples=40, deadline=None)
@given(conv_cases)
def test_conv_matches_oracle(case):
    rng = np.random.default_rng(case["seed"])
    x = rng.standard_normal((case["n"], case["cin"], case["h"], case["w"]), dtype=np.float32)
    k = rng.standard_normal((case["cout"], case["cin"], case["k"], case["k"]), dtype=np.float32)
    bias = rng.standard_normal(case["cout"], dtype=np.float32)
    p = ConvParams(k, bias, case["stride"], case["pad"])
    np.testing.assert_allclose(ops.conv2d(x, p), oracle.naive_conv2d(x, p), atol=1e-5, rtol=0)


@settings(max_examples=40, deadline=None)
@given(conv_cases)
def test_dwconv_matches_oracle_and_block_diagonal_conv(case):
    rng = np.random.default_rng(case["seed"])
    c = case["cin"]
    x = rng.standard_normal((case["n"], c, case["h"], case["w"]), dtype=np.float32)
    k = rng.standard_normal((c, 1, case["k"], case["k"]), dtype=np.float32)
    p = DwConvParams(k, case["stride"], case["pad"])
    out = ops.dwconv2d(x, p)
    # Same accumulation order as the oracle, so the match is exact.
    assert out.tobytes() == oracle.naive_dwconv2d(x, p).tobytes()

    # Dense path sums in BLAS order; unit-range values keep outputs where 1e-6 is a few ulps.
    xs = rng.uniform(-1, 1, x.shape).astype(np.float32)
    ks = rng.uniform(-1, 1, k.shape).astype(np.float32)
    full = np.zeros((c, c, case["k"], case["k"]), np.float32)
    full[np.arange(c), np.arange(c)] = ks[:, 0]
    dense = ops.conv2d(xs, ConvParams(full, None, case["stride"], case["pad"]))
    depthwise = ops.dwconv2d(xs, DwConvParams(ks, case["stride"], case["pad"]))
    np.testing.assert_allclose(depthwise, dense, atol=1e-6, rtol=0)


# -- batch norm -----------------------------------------------------------------


def test_batchnorm_identity_and_affine(rng):
    x = rng.standard_normal((2, 3, 4, 4), dtype=np.float32)
    assert ops.batchnorm(x, _bn(3)).tobytes() == x.tobytes()
    out = ops.batchnorm(np.full((1, 3, 2, 2), 3.0, np.float32), _bn(3, gamma=2, beta=1))
    np.testing.assert_array_equal(out, 7.0)


def test_batchnorm_matches_formula(rng):
    x = rng.standard_normal((2, 4, 3, 3), dtype=np.float32)
    p = _random_bn(rng, 4)
    expected = (p.gamma[:, None, None] * (x.astype(np.float64) - p.running_mean[:, None, None])
                / np.sqrt(p.running_var[:, None, None] + p.epsilon) + p.beta[:, None, None])
    np.testing.assert_allclose(ops.batchnorm(x, p), expected, atol=1e-5)


def test_batchnorm_errors():
    x = np.zeros((1, 2, 2, 2), np.float32)
    with pytest.raises(ValueError):
        ops.batchnorm(x, _bn(2, var=-1.0))
    with pytest.raises(ShapeError):
        ops.batchnorm(x, _bn(3))


def test_fold_bn_identity_and_degenerate(rng):
    conv = ConvParams(rng.standard_normal((3, 2, 3, 3), dtype=np.float32), None, 1, 1)
    folded = ops.fold_bn(conv, _bn(3))
    assert folded.kernel.tobytes() == conv.kernel.tobytes()
    np.testing.assert_array_equal(folded.bias, 0)
    zero = ops.fold_bn(conv, _bn(3, gamma=0.0, beta=1.5))
    assert not zero.kernel.any()
    np.testing.assert_array_equal(zero.bias, 1.5)


def test_fold_bn_channel_mismatch(rng):
    conv = ConvParams(np.zeros((3, 2, 1, 1), np.float32))
    with pytest.raises(ShapeError):
        ops.fold_bn(conv, _bn(4))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depthwise=st.booleans(), stride=st.sampled_from([1, 2]))
def test_fold_bn_equivalence(seed, depthwise, stride):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, 8, 8), dtype=np.float32)
    bn = _random_bn(rng, 3 if depthwise else 5)
    if depthwise:
        conv = DwConvParams(rng.standard_normal((3, 1, 3, 3), dtype=np.float32), stride, 1)
        run = ops.dwconv2d
    else:
        conv = ConvParams(rng.standard_normal((5, 3, 3, 3), dtype=np.float32), None, stride, 1)
        run = ops.conv2d
    np.testing.assert_allclose(run(x, ops.fold_bn(conv, bn)), ops.batchnorm(run(x, conv), bn), atol=1e-5, rtol=0)


# -- activations, fc, residual, flatten -------------------------------------------


def test_prelu(rng):
    x = rng.standard_normal((2, 3, 4, 4), dtype=np.float32)
    assert ops.prelu(x, PReLUParams(np.ones(3, np.float32))).tobytes() == x.tobytes()
    np.testing.assert_array_equal(ops.prelu(x, PReLUParams(np.zeros(3, np.float32))), ops.relu(x))
    out = ops.prelu(np.full((1, 1, 1, 1), -4.0, np.float32), PReLUParams(np.array([0.25], np.float32)))
    assert out.item() == -1.0
    with pytest.raises(ShapeError):
        ops.prelu(x, PReLUParams(np.ones(2, np.float32)))


def test_relu(rng):
    np.testing.assert_array_equal(ops.relu(np.array([-1, 0, 2], np.float32)), [0, 0, 2])
    x = rng.standard_normal(20, dtype=np.float32)
    pos = np.abs(x)
    assert ops.relu(pos).tobytes() == pos.tobytes()
    assert ops.relu(ops.relu(x)).tobytes() == ops.relu(x).tobytes()


def test_fully_connected(rng):
    x = rng.standard_normal(25088, dtype=np.float32)
    p = FcParams(rng.standard_normal((512, 25088), dtype=np.float32), np.zeros(512, np.float32))
    assert ops.fully_connected(x, p).shape == (512,)
    v = rng.standard_normal(6, dtype=np.float32)
    np.testing.assert_array_equal(ops.fully_connected(v, FcParams(np.eye(6, dtype=np.float32), np.zeros(6, np.float32))), v)
    b = rng.standard_normal(4, dtype=np.float32)
    np.testing.assert_array_equal(ops.fully_connected(v, FcParams(np.zeros((4, 6), np.float32), b)), b)
    with pytest.raises(ShapeError):
        ops.fully_connected(np.zeros(5, np.float32), FcParams(np.zeros((4, 6), np.float32), b))


def test_fully_connected_batch_rows_equal_single(rng):
    p = FcParams(rng.standard_normal((16, 40), dtype=np.float32), rng.standard_normal(16, dtype=np.float32))
    x = rng.standard_normal((3, 40), dtype=np.float32)
    batch = ops.fully_connected(x, p)
    for i in range(3):
        assert batch[i].tobytes() == ops.fully_connected(x[i], p).tobytes()
        np.testing.assert_allclose(batch[i], oracle.naive_fc(x[i], p), atol=1e-5)


def test_residual_add():
    x = np.array([1, 2], np.float32)
    np.testing.assert_array_equal(ops.residual_add(x, np.array([3, 4], np.float32)), [4, 6])
    assert ops.residual_add(x, np.zeros(2, np.float32)).tobytes() == x.tobytes()
    with pytest.raises(ShapeError):
        ops.residual_add(np.zeros((1, 64, 28, 28), np.float32), np.zeros((1, 64, 14, 14), np.float32))


def test_flatten():
    x = np.array([1, 2, 3, 4], np.float32).reshape(1, 2, 1, 2)
    np.testing.assert_array_equal(ops.flatten(x), [[1, 2, 3, 4]])
    assert ops.flatten(np.zeros((1, 512, 7, 7), np.float32)).shape == (1, 25088)
    with pytest.raises(ShapeError):
        ops.flatten(np.zeros((2, 3), np.float32))
