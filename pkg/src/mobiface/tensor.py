"""Dense float32 tensors.

A tensor here is a C-contiguous ``numpy.ndarray`` of ``float32`` with rank 1-4.
Activations use the N, C, H, W layout (width varies fastest).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes or ranks are incompatible."""


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"rank must be 1-4, got shape {shape}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Convert ``data`` to a contiguous float32 tensor, optionally reshaping."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        shape = _check_shape(shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"cannot view {arr.size} elements as {shape}")
        arr = arr.reshape(shape)
    else:
        _check_shape(arr.shape)
    return arr


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=DTYPE)


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise ``ValueError`` if ``t`` holds NaN or Inf; return ``t`` unchanged."""
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{what} contains NaN or Inf")
    return t


def hflip(t: np.ndarray) -> np.ndarray:
    """Mirror an N, C, H, W tensor left to right."""
    if t.ndim != 4:
        raise ShapeError(f"hflip expects a rank-4 tensor, got rank {t.ndim}")
    return np.ascontiguousarray(t[..., ::-1])


def l2_normalize(v: np.ndarray) -> np.ndarray:
    if v.ndim != 1:
        raise ShapeError(f"l2_normalize expects a rank-1 tensor, got rank {v.ndim}")
    norm = np.linalg.norm(v.astype(np.float64))
    if not norm > 0:
        raise ValueError("cannot normalize a zero vector")
    return (v / norm).astype(DTYPE)


def allclose(a: np.ndarray, b: np.ndarray, atol: float) -> bool:
    """True iff ``max |a - b| <= atol``. Shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return True
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    return bool(diff.max() <= atol)
