"""Brute-force reference kernels used to check the engine.

Every output element is a direct sum over input channel, kernel row and
kernel column, in that order, accumulated in float32. Loops run over the
reduction axes; only the output-pixel axes are vectorised, so each output
element sees exactly the scalar arithmetic of a textbook nested loop.
Nothing here imports from :mod:`mobiface.ops`.
"""

import numpy as np


def _pad(x, pad):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _out_size(size, k, stride, pad):
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ValueError(f"output size {out} < 1 (size={size}, k={k}, stride={stride}, pad={pad})")
    return out


def naive_conv2d(x, p):
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(p.kernel, dtype=np.float32)
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ValueError(f"input has {cin} channels, kernel expects {wcin}")
    s = p.stride
    ho = _out_size(h, kh, s, p.padding)
    wo = _out_size(wd, kw, s, p.padding)
    xp = _pad(x, p.padding)
    out = np.zeros((n, cout, ho, wo), dtype=np.float32)
    for b in range(n):
        for o in range(cout):
            acc = np.zeros((ho, wo), dtype=np.float32)
            for c in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        patch = xp[b, c, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
                        acc = acc + w[o, c, i, j] * patch
            if p.bias is not None:
                acc = acc + np.float32(p.bias[o])
            out[b, o] = acc
    return out


def naive_dwconv2d(x, p):
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(p.kernel, dtype=np.float32)
    n, c_in, h, wd = x.shape
    c, one, kh, kw = w.shape
    if c != c_in or one != 1:
        raise ValueError(f"input has {c_in} channels, depthwise kernel has shape {w.shape}")
    s = p.stride
    ho = _out_size(h, kh, s, p.padding)
    wo = _out_size(wd, kw, s, p.padding)
    xp = _pad(x, p.padding)
    out = np.zeros((n, c, ho, wo), dtype=np.float32)
    bias = getattr(p, "bias", None)
    for b in range(n):
        for ch in range(c):
            acc = np.zeros((ho, wo), dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[b, ch, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
                    acc = acc + w[ch, 0, i, j] * patch
            if bias is not None:
                acc = acc + np.float32(bias[ch])
            out[b, ch] = acc
    return out


def naive_fc(x, p):
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(p.weight, dtype=np.float32)
    out_dim, in_dim = w.shape
    if x.shape != (in_dim,):
        raise ValueError(f"expected input of shape ({in_dim},), got {x.shape}")
    acc = np.zeros(out_dim, dtype=np.float32)
    for i in range(in_dim):
        acc = acc + w[:, i] * x[i]
    return acc + np.asarray(p.bias, dtype=np.float32)
