"""Inference operators: convolutions, batch norm, activations, FC, residual add.

All operators are pure functions of float32 tensors in N, C, H, W layout.
Convolution is cross-correlation (no kernel flip). Matrix products are
issued per sample so a batch gives bitwise the same rows as single images.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .tensor import DTYPE, ShapeError

BN_EPSILON = 1e-5
PRELU_INIT_SLOPE = 0.25


@dataclass(frozen=True)
class ConvParams:
    kernel: np.ndarray  # [Cout, Cin, k, k]
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class DwConvParams:
    kernel: np.ndarray  # [C, 1, k, k]
    stride: int = 1
    padding: int = 0
    bias: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON


@dataclass(frozen=True)
class PReLUParams:
    slopes: np.ndarray


@dataclass(frozen=True)
class FcParams:
    weight: np.ndarray  # [out_dim, in_dim]
    bias: np.ndarray


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    """Spatial output size ``floor((size + 2*padding - k) / stride) + 1``."""
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} or padding {padding}")
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"output size {out} < 1 for input {size}, kernel {k}, stride {stride}, padding {padding}"
        )
    return out


def _require_rank4(x, op):
    if x.ndim != 4:
        raise ShapeError(f"{op} expects an N,C,H,W tensor, got shape {x.shape}")


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _im2col(xp, k, stride, ho, wo):
    # Row index is c*k*k + i*k + j: channel, then kernel row, then kernel column.
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(c * k * k, ho * wo)


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    _require_rank4(x, "conv2d")
    cout, cin, kh, kw = p.kernel.shape
    if kh != kw:
        raise ShapeError(f"only square kernels are supported, got {kh}x{kw}")
    n, c, h, w = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {cin}")
    ho = conv_output_size(h, kh, p.stride, p.padding)
    wo = conv_output_size(w, kw, p.stride, p.padding)
    wmat = p.kernel.reshape(cout, cin * kh * kw)
    out = np.empty((n, cout, ho * wo), dtype=DTYPE)
    pointwise = kh == 1 and p.stride == 1 and p.padding == 0
    xp = _pad(x, p.padding)
    for b in range(n):
        cols = xp[b].reshape(cin, h * w) if pointwise else _im2col(xp[b], kh, p.stride, ho, wo)
        np.matmul(wmat, cols, out=out[b])
    if p.bias is not None:
        if p.bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {p.bias.shape} != ({cout},)")
        out += p.bias[None, :, None]
    return out.reshape(n, cout, ho, wo)


def dwconv2d(x: np.ndarray, p: DwConvParams) -> np.ndarray:
    _require_rank4(x, "dwconv2d")
    c, one, kh, kw = p.kernel.shape
    n, cx, h, w = x.shape
    if one != 1 or cx != c:
        raise ShapeError(f"dwconv2d: input has {cx} channels, kernel shape is {p.kernel.shape}")
    s = p.stride
    ho = conv_output_size(h, kh, s, p.padding)
    wo = conv_output_size(w, kw, s, p.padding)
    xp = _pad(x, p.padding)
    out = np.zeros((n, c, ho, wo), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            tap = p.kernel[:, 0, i, j][None, :, None, None]
            out += tap * xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
    if p.bias is not None:
        out += p.bias[None, :, None, None]
    return out


def _check_channel_vector(v, c, what):
    if v.shape != (c,):
        raise ShapeError(f"{what} has shape {v.shape}, expected ({c},)")


def _bn_scale(p: BatchNormParams, c: int) -> np.ndarray:
    for name in ("gamma", "beta", "running_mean", "running_var"):
        _check_channel_vector(getattr(p, name), c, f"batchnorm {name}")
    if np.any(p.running_var < 0):
        raise ValueError("batchnorm running_var must be non-negative")
    denom = p.running_var + DTYPE(p.epsilon)
    if np.any(denom <= 0):
        raise ValueError("batchnorm running_var + epsilon must be positive")
    return (p.gamma / np.sqrt(denom)).astype(DTYPE)


def batchnorm(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    """Inference-mode batch norm using the running statistics."""
    _require_rank4(x, "batchnorm")
    scale = _bn_scale(p, x.shape[1])
    shift = (p.beta - p.running_mean * scale).astype(DTYPE)
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def fold_bn(conv, bn: BatchNormParams):
    """Fold a following batch norm into ``conv`` (ConvParams or DwConvParams).

    The returned params carry a bias and satisfy ``conv'(x) ~= bn(conv(x))``.
    """
    cout = conv.kernel.shape[0]
    scale = _bn_scale(bn, cout)
    kernel = (conv.kernel * scale[:, None, None, None]).astype(DTYPE)
    bias = conv.bias if conv.bias is not None else np.zeros(cout, dtype=DTYPE)
    new_bias = ((bias - bn.running_mean) * scale + bn.beta).astype(DTYPE)
    return replace(conv, kernel=kernel, bias=new_bias)


def prelu(x: np.ndarray, p: PReLUParams) -> np.ndarray:
    _require_rank4(x, "prelu")
    _check_channel_vector(p.slopes, x.shape[1], "prelu slopes")
    return np.where(x >= 0, x, p.slopes[None, :, None, None] * x).astype(DTYPE)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, DTYPE(0))


def fully_connected(x: np.ndarray, p: FcParams) -> np.ndarray:
    """``weight @ x + bias`` for a vector, or row-wise for an [N, in_dim] batch."""
    out_dim, in_dim = p.weight.shape
    if p.bias.shape != (out_dim,):
        raise ShapeError(f"fc bias shape {p.bias.shape} != ({out_dim},)")
    if x.ndim == 1:
        if x.shape[0] != in_dim:
            raise ShapeError(f"fc expects {in_dim} inputs, got {x.shape[0]}")
        return p.weight @ x + p.bias
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ShapeError(f"fc expects [{in_dim}] or [N, {in_dim}], got {x.shape}")
    out = np.empty((x.shape[0], out_dim), dtype=DTYPE)
    for b in range(x.shape[0]):
        np.matmul(p.weight, x[b], out=out[b])
    return out + p.bias


def residual_add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if x.shape != y.shape:
        raise ShapeError(f"residual_add shape mismatch: {x.shape} vs {y.shape}")
    return x + y


def flatten(x: np.ndarray) -> np.ndarray:
    """[N, C, H, W] -> [N, C*H*W] in C, H, W order."""
    _require_rank4(x, "flatten")
    return x.reshape(x.shape[0], -1)
