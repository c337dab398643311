import numpy as np
import pytest

from mobiface.ppm import PPMError, decode_ppm, encode_ppm, read_ppm, write_ppm


def test_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (3, 5, 7)).astype(np.float32)
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    out = read_ppm(path)
    assert out.shape == (3, 5, 7) and out.dtype == np.float32
    np.testing.assert_array_equal(out, img)


def test_header_with_comments_and_channel_order():
    data = b"P6\n# a comment\n2 1 # trailing\n255\n" + bytes([10, 20, 30, 40, 50, 60])
    img = decode_ppm(data)
    np.testing.assert_array_equal(img[:, 0, 0], [10, 20, 30])
    np.testing.assert_array_equal(img[:, 0, 1], [40, 50, 60])


def test_sixteen_bit_scaled():
    data = b"P6 1 1 65535\n" + np.array([65535, 0, 65535], ">u2").tobytes()
    np.testing.assert_allclose(decode_ppm(data)[:, 0, 0], [255, 0, 255])


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n0 0 0",
    b"P6\n1 1\n255\n\x00\x00",
    b"P6\n1",
    b"P6\n0 1\n255\n",
    b"P6\na b\n255\n",
])
def test_invalid(data):
    with pytest.raises(PPMError):
        decode_ppm(data)


def test_encode_rejects_bad_shape():
    with pytest.raises(PPMError):
        encode_ppm(np.zeros((4, 2, 2)))
