"""Binary PPM (P6) reading and writing, no third-party decoders."""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE


class PPMError(ValueError):
    pass


def _header_tokens(data: bytes, count: int):
    """Return ``count`` header tokens and the offset just past the last one."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PPMError("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 image to a float32 ``[3, H, W]`` array on a 0-255 scale."""
    tokens, pos = _header_tokens(data, 4)
    if tokens[0] != b"P6":
        raise PPMError(f"not a binary PPM (magic {tokens[0][:8]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PPMError("non-numeric PPM header field") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PPMError(f"invalid PPM header: {width}x{height}, maxval {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PPMError("missing whitespace after PPM header")
    pos += 1
    sample = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    size = width * height * 3 * sample.itemsize
    raster = data[pos:pos + size]
    if len(raster) < size:
        raise PPMError(f"truncated PPM raster: {len(raster)} of {size} bytes")
    pixels = np.frombuffer(raster, dtype=sample).reshape(height, width, 3)
    img = pixels.transpose(2, 0, 1).astype(DTYPE)
    if maxval != 255:
        img = img * DTYPE(255.0 / maxval)
    return np.ascontiguousarray(img)


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode a ``[3, H, W]`` array of 0-255 values as 8-bit P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise PPMError(f"expected a [3, H, W] image, got shape {img.shape}")
    _, h, w = img.shape
    raster = np.clip(np.rint(img), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (w, h) + raster.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
