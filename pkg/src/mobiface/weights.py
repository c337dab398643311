"""Named weight tensors and the MBFW binary container.

File layout (all integers little-endian)::

    b"MBFW"  u32 version (=1)  u32 entry_count
    per entry: u16 name_len, name (UTF-8), u8 rank, u32 dims[rank],
               float32 payload (little-endian, row-major)
"""

from __future__ import annotations

import os
import struct
from typing import Iterable, Mapping

import numpy as np

from . import graph
from .tensor import DTYPE

MAGIC = b"MBFW"
VERSION = 1


class WeightFormatError(ValueError):
    """Malformed, truncated or otherwise unreadable MBFW data."""


class WeightStore(dict):
    """Insertion-ordered ``name -> float32 tensor`` map with format metadata.

    ``arch`` is informational and is not written to disk.
    """

    def __init__(self, items=(), arch: str = "", version: int = VERSION):
        super().__init__()
        self.arch = arch
        self.version = version
        for name, tensor in dict(items).items():
            self[name] = tensor

    def __setitem__(self, name, tensor):
        if not isinstance(name, str) or not name:
            raise ValueError("weight names must be non-empty strings")
        super().__setitem__(name, np.ascontiguousarray(tensor, dtype=DTYPE))

    def float_count(self) -> int:
        return sum(int(t.size) for t in self.values())

    def bitwise_equal(self, other: Mapping) -> bool:
        if list(self) != list(other):
            return False
        return all(
            a.shape == other[n].shape and a.tobytes() == np.asarray(other[n], dtype=DTYPE).tobytes()
            for n, a in self.items()
        )


# -- serialization ----------------------------------------------------------


def dumps(store: Mapping) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, tensor in store.items():
        tensor = np.asarray(tensor, dtype=DTYPE)
        if not 1 <= tensor.ndim <= 4:
            raise ValueError(f"{name}: rank must be 1-4, got {tensor.ndim}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"{name[:40]}...: name longer than 65535 bytes")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(tensor.astype("<f4", copy=False).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise WeightFormatError(f"truncated file while reading {what} at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> WeightStore:
    r = _Reader(data)
    if bytes(r.take(4, "magic")) != MAGIC:
        raise WeightFormatError("bad magic: not an MBFW weight file")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise WeightFormatError(f"unsupported MBFW version {version} (expected {VERSION})")
    store = WeightStore()
    for index in range(count):
        (name_len,) = r.unpack("<H", f"entry {index} name length")
        try:
            name = bytes(r.take(name_len, f"entry {index} name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"entry {index}: name is not valid UTF-8") from exc
        if name in store:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        (rank,) = r.unpack("<B", f"{name} rank")
        if not 1 <= rank <= 4:
            raise WeightFormatError(f"{name}: rank {rank} outside 1-4")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        if any(d < 1 for d in dims):
            raise WeightFormatError(f"{name}: zero dimension in shape {dims}")
        size = int(np.prod(dims))
        payload = r.take(4 * size, f"{name} payload")
        tensor = np.frombuffer(payload, dtype="<f4").astype(DTYPE).reshape(dims)
        if not np.all(np.isfinite(tensor)):
            raise WeightFormatError(f"{name}: payload contains NaN or Inf")
        store[name] = tensor
    if r.pos != len(r.data):
        raise WeightFormatError(f"{len(r.data) - r.pos} unexpected trailing bytes")
    return store


def save(store: Mapping, path) -> None:
    data = dumps(store)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path) -> WeightStore:
    with open(path, "rb") as fh:
        return loads(fh.read())


def is_mbfw(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


# -- bindings, init, validation ---------------------------------------------


def _layer_shapes(layer: graph.LayerSpec) -> dict:
    a = layer.attrs
    w = layer.weights
    if layer.kind == graph.CONV:
        shapes = {w["weight"]: (a["cout"], a["cin"], a["k"], a["k"])}
        if a.get("bias"):
            shapes[w["bias"]] = (a["cout"],)
        return shapes
    if layer.kind == graph.DWCONV:
        shapes = {w["weight"]: (a["c"], 1, a["k"], a["k"])}
        if a.get("bias"):
            shapes[w["bias"]] = (a["c"],)
        return shapes
    if layer.kind == graph.BN:
        return {w[r]: (a["c"],) for r in ("gamma", "beta", "running_mean", "running_var")}
    if layer.kind == graph.PRELU:
        return {w["slopes"]: (a["c"],)}
    if layer.kind == graph.FC:
        return {w["weight"]: (a["out_dim"], a["in_dim"]), w["bias"]: (a["out_dim"],)}
    return {}


def _all_layers(net, head) -> Iterable[graph.LayerSpec]:
    yield from net.layers
    if head is not None:
        yield from head.layers


def weight_shapes(net: graph.NetworkSpec, head: graph.FlipHeadSpec | None = None) -> dict:
    """Ordered ``name -> shape`` for every tensor the network (and head) binds."""
    shapes = {}
    for layer in _all_layers(net, head):
        shapes.update(_layer_shapes(layer))
    return shapes


def init_random(net: graph.NetworkSpec, seed: int = 42,
                head: graph.FlipHeadSpec | None = None) -> WeightStore:
    """Deterministic random weights.

    Convolutions: Gaussian with std sqrt(2 / fan_in). FC: std 1/sqrt(in_dim),
    zero bias. BN is the identity (gamma 1, beta 0, mean 0, var 1). PReLU
    slopes start at 0.25.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore(arch=net.arch_id)
    for layer in _all_layers(net, head):
        a = layer.attrs
        w = layer.weights
        if layer.kind in (graph.CONV, graph.DWCONV):
            fan_in = a["k"] * a["k"] * (a["cin"] if layer.kind == graph.CONV else 1)
            for name, shape in _layer_shapes(layer).items():
                if name == w["weight"]:
                    store[name] = rng.standard_normal(shape, dtype=DTYPE) * DTYPE(np.sqrt(2.0 / fan_in))
                else:
                    store[name] = np.zeros(shape, dtype=DTYPE)
        elif layer.kind == graph.BN:
            c = a["c"]
            store[w["gamma"]] = np.ones(c, DTYPE)
            store[w["beta"]] = np.zeros(c, DTYPE)
            store[w["running_mean"]] = np.zeros(c, DTYPE)
            store[w["running_var"]] = np.ones(c, DTYPE)
        elif layer.kind == graph.PRELU:
            store[w["slopes"]] = np.full(a["c"], 0.25, DTYPE)
        elif layer.kind == graph.FC:
            shape = (a["out_dim"], a["in_dim"])
            store[w["weight"]] = rng.standard_normal(shape, dtype=DTYPE) * DTYPE(1.0 / np.sqrt(a["in_dim"]))
            store[w["bias"]] = np.zeros(a["out_dim"], DTYPE)
    return store


def validate(store: Mapping, net: graph.NetworkSpec, head: graph.FlipHeadSpec | None = None,
             allow_extra: bool = False) -> None:
    """Raise ``WeightFormatError`` unless ``store`` matches the network bindings."""
    expected = weight_shapes(net, head)
    missing = [n for n in expected if n not in store]
    if missing:
        raise WeightFormatError(f"missing {len(missing)} tensor(s), first: {missing[0]!r}")
    for name, shape in expected.items():
        tensor = store[name]
        if tuple(tensor.shape) != tuple(shape):
            raise WeightFormatError(f"{name}: shape {tuple(tensor.shape)} != expected {shape}")
        if not np.all(np.isfinite(tensor)):
            raise WeightFormatError(f"{name}: contains NaN or Inf")
    if not allow_extra:
        extra = [n for n in store if n not in expected]
        if extra:
            raise WeightFormatError(f"unexpected tensor {extra[0]!r} ({len(extra)} extra)")
