"""Architecture graph, block builders and the forward executor.

A network is a flat, ordered list of :class:`LayerSpec`. Shortcut connections
are expressed with paired ``res_begin`` / ``res_end`` markers: the executor
saves the tensor at ``res_begin`` and adds it back at ``res_end``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import ops
from .tensor import DTYPE, ShapeError, as_tensor, hflip

CONV = "conv"
DWCONV = "dwconv"
BN = "bn"
PRELU = "prelu"
RELU = "relu"
FC = "fc"
FLATTEN = "flatten"
RES_BEGIN = "res_begin"
RES_END = "res_end"

KINDS = (CONV, DWCONV, BN, PRELU, RELU, FC, FLATTEN, RES_BEGIN, RES_END)


class MissingWeightError(KeyError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    expansion: int = 2
    stride: int = 1
    residual: bool = False
    hidden_channels: int | None = None  # overrides expansion * in_channels

    def __post_init__(self):
        if self.expansion < 1:
            raise ValueError(f"expansion must be >= 1, got {self.expansion}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.residual and (self.stride != 1 or self.in_channels != self.out_channels):
            raise ValueError(
                "a residual block needs stride 1 and equal in/out channels, got "
                f"stride={self.stride}, {self.in_channels}->{self.out_channels}"
            )

    @property
    def expanded_channels(self) -> int:
        if self.hidden_channels is not None:
            return self.hidden_channels
        return self.expansion * self.in_channels


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One executable layer.

    ``attrs`` holds the hyperparameters of the kind (e.g. ``cin``, ``cout``,
    ``k``, ``stride``, ``padding``, ``bias`` for a conv). ``weights`` maps a
    role (``"weight"``, ``"gamma"``, ...) to a name in the weight store.
    ``row`` is the index of the architecture-table row the layer belongs to
    and ``block`` names the bottleneck block, if any.
    """

    name: str
    kind: str
    attrs: Mapping = field(default_factory=dict)
    weights: Mapping[str, str] = field(default_factory=dict)
    row: int = 0
    block: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    input_shape: tuple  # (C, H, W)
    layers: tuple
    embedding_dim: int
    row_labels: tuple = ()
    arch_id: str = "custom"

    def __post_init__(self):
        names = [w for layer in self.layers for w in layer.weights.values()]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate weight names: {sorted(dupes)}")
        layer_names = [layer.name for layer in self.layers]
        if len(set(layer_names)) != len(layer_names):
            raise ValueError("layer names must be unique")

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class FlipHeadSpec:
    """Two FC layers with a ReLU between them, predicting the mirror-image embedding."""

    layers: tuple
    embedding_dim: int


# -- builders ---------------------------------------------------------------


def _weights(name, *roles):
    return {role: f"{name}.{role}" for role in roles}


def conv_unit(name, cin, cout, k, stride=1, activation=True, row=0, block=None, bias=False):
    """Conv + BN (+ PReLU). Padding is k // 2 so 3x3 convs keep "same" geometry."""
    attrs = dict(cin=cin, cout=cout, k=k, stride=stride, padding=k // 2, bias=bias)
    roles = ("weight", "bias") if bias else ("weight",)
    layers = [
        LayerSpec(f"{name}.conv", CONV, attrs, _weights(f"{name}.conv", *roles), row, block),
        LayerSpec(f"{name}.bn", BN, dict(c=cout),
                  _weights(f"{name}.bn", "gamma", "beta", "running_mean", "running_var"), row, block),
    ]
    if activation:
        layers.append(LayerSpec(f"{name}.prelu", PRELU, dict(c=cout),
                                _weights(f"{name}.prelu", "slopes"), row, block))
    return layers


def dwconv_unit(name, c, k, stride=1, row=0, block=None):
    attrs = dict(c=c, k=k, stride=stride, padding=k // 2)
    return [
        LayerSpec(f"{name}.conv", DWCONV, attrs, _weights(f"{name}.conv", "weight"), row, block),
        LayerSpec(f"{name}.bn", BN, dict(c=c),
                  _weights(f"{name}.bn", "gamma", "beta", "running_mean", "running_var"), row, block),
        LayerSpec(f"{name}.prelu", PRELU, dict(c=c), _weights(f"{name}.prelu", "slopes"), row, block),
    ]


def fc_layer(name, in_dim, out_dim, row=0):
    return LayerSpec(name, FC, dict(in_dim=in_dim, out_dim=out_dim), _weights(name, "weight", "bias"), row)


def build_bottleneck(spec: BlockSpec, name: str = "block", row: int = 0) -> list[LayerSpec]:
    """Expand (1x1) -> depthwise 3x3 with stride -> linear projection (1x1).

    The projection gets batch norm but no activation. Residual blocks are
    wrapped in shortcut markers.
    """
    if not isinstance(spec, BlockSpec):
        raise TypeError("spec must be a BlockSpec")
    inner = spec.expanded_channels
    body = (
        conv_unit(f"{name}.expand", spec.in_channels, inner, 1, row=row, block=name)
        + dwconv_unit(f"{name}.depthwise", inner, 3, spec.stride, row=row, block=name)
        + conv_unit(f"{name}.project", inner, spec.out_channels, 1, activation=False, row=row, block=name)
    )
    if not spec.residual:
        return body
    return (
        [LayerSpec(f"{name}.shortcut_in", RES_BEGIN, {}, {}, row, name)]
        + body
        + [LayerSpec(f"{name}.shortcut_out", RES_END, {}, {}, row, name)]
    )


# (out_channels, stride, repeats, residual): one entry per table row of blocks.
MOBIFACE_STAGES = (
    (64, 2, 1, False),
    (64, 1, 2, True),
    (128, 2, 1, False),
    (128, 1, 3, True),
    (256, 2, 1, False),
    (256, 1, 6, True),
)


def build_network(
    stages: Sequence[tuple] = MOBIFACE_STAGES,
    *,
    input_size: int = 112,
    stem_channels: int = 64,
    head_channels: int = 512,
    embedding_dim: int = 512,
    expansion: int = 2,
    expand_on: str = "output",
    arch_id: str = "custom",
) -> NetworkSpec:
    """Assemble a MobiFace-style network from a list of block stages.

    ``stages`` holds ``(out_channels, stride, repeats, residual)`` tuples, one
    per table row of bottleneck blocks. ``expand_on`` picks which channel count
    the expansion factor multiplies: ``"output"`` reproduces the MobiFace table
    (a 64->128 downsampling block expands to 256), ``"input"`` gives the plain
    ``t * in_channels`` rule.
    """
    if expand_on not in ("input", "output"):
        raise ValueError(f"expand_on must be 'input' or 'output', got {expand_on!r}")
    layers: list[LayerSpec] = []
    labels = [f"3x3 Conv, /2, {stem_channels}", f"3x3 DWconv, {stem_channels}"]
    layers += conv_unit("stem", 3, stem_channels, 3, stride=2, row=1)
    layers += dwconv_unit("dw", stem_channels, 3, row=2)
    spatial = ops.conv_output_size(input_size, 3, 2, 1)

    channels = stem_channels
    block_index = 0
    row = 2
    for out_channels, stride, repeats, residual in stages:
        row += 1
        inner = expansion * (out_channels if expand_on == "output" else channels)
        down = ", /2" if stride == 2 else ""
        labels.append(
            f"{'RBlock' if residual else 'Block'} {repeats}x "
            f"[1x1 Conv, {inner} | 3x3 DWconv{down}, {inner} | 1x1 Conv, Linear, {out_channels}]"
        )
        for _ in range(repeats):
            block_index += 1
            spec = BlockSpec(channels, out_channels, expansion, stride, residual, inner)
            layers += build_bottleneck(spec, f"block{block_index}", row)
            channels = out_channels
            spatial = ops.conv_output_size(spatial, 3, stride, 1)

    labels.append(f"1x1 Conv, {head_channels}")
    layers += conv_unit("head", channels, head_channels, 1, row=row + 1)
    labels.append(f"{embedding_dim}-d FC")
    layers.append(LayerSpec("flatten", FLATTEN, {}, {}, row + 2))
    layers.append(fc_layer("fc", head_channels * spatial * spatial, embedding_dim, row + 2))

    return NetworkSpec((3, input_size, input_size), tuple(layers), embedding_dim, tuple(labels), arch_id)


def build_mobiface() -> NetworkSpec:
    return build_network(MOBIFACE_STAGES, arch_id="mobiface")


def build_flip_head(embedding_dim: int = 512) -> FlipHeadSpec:
    """FC -> ReLU -> FC; the second FC is linear so it can emit negative features."""
    d = embedding_dim
    return FlipHeadSpec(
        (fc_layer("flip.fc1", d, d), LayerSpec("flip.relu", RELU), fc_layer("flip.fc2", d, d)),
        d,
    )


ARCHITECTURES = ("mobiface", "mobiface-flipped")


def build_architecture(arch: str) -> tuple[NetworkSpec, FlipHeadSpec | None]:
    """Return ``(network, flip_head)`` for a named architecture."""
    if arch == "mobiface":
        return build_mobiface(), None
    if arch == "mobiface-flipped":
        net = build_mobiface()
        return NetworkSpec(net.input_shape, net.layers, net.embedding_dim, net.row_labels,
                           "mobiface-flipped"), build_flip_head(net.embedding_dim)
    raise ValueError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")


# -- shapes -----------------------------------------------------------------


def layer_output_shape(layer: LayerSpec, shape: tuple) -> tuple:
    """Propagate a per-sample shape (C, H, W) or (D,) through one layer."""
    a = layer.attrs
    kind = layer.kind
    if kind in (CONV, DWCONV, BN, PRELU):
        if len(shape) != 3:
            raise ShapeError(f"layer {layer.name}: expects a C,H,W input, got {shape}")
        c, h, w = shape
        expected = a["cin"] if kind == CONV else a["c"]
        if c != expected:
            raise ShapeError(f"layer {layer.name}: expects {expected} channels, got {c}")
        if kind in (BN, PRELU):
            return shape
        ho = ops.conv_output_size(h, a["k"], a["stride"], a["padding"])
        wo = ops.conv_output_size(w, a["k"], a["stride"], a["padding"])
        return (a["cout"] if kind == CONV else c, ho, wo)
    if kind == FLATTEN:
        if len(shape) != 3:
            raise ShapeError(f"layer {layer.name}: flatten expects C,H,W, got {shape}")
        return (int(np.prod(shape)),)
    if kind == FC:
        if shape != (a["in_dim"],):
            raise ShapeError(f"layer {layer.name}: expects ({a['in_dim']},), got {shape}")
        return (a["out_dim"],)
    return shape  # relu, residual markers


def shape_trace(net: NetworkSpec) -> list[tuple[str, tuple]]:
    """Per-layer output shapes (per sample), computed without touching weights."""
    shape = tuple(net.input_shape)
    saved = []
    trace = []
    for layer in net.layers:
        try:
            if layer.kind == RES_BEGIN:
                saved.append(shape)
            elif layer.kind == RES_END:
                if not saved:
                    raise ShapeError("unmatched shortcut end")
                start = saved.pop()
                if start != shape:
                    raise ShapeError(f"shortcut shapes differ: {start} vs {shape}")
            shape = layer_output_shape(layer, shape)
        except (ShapeError, ValueError) as exc:
            if str(exc).startswith(f"layer {layer.name}"):
                raise
            raise ShapeError(f"layer {layer.name}: {exc}") from exc
        trace.append((layer.name, shape))
    if saved:
        raise ShapeError("unclosed shortcut")
    if shape != (net.embedding_dim,):
        raise ShapeError(f"network output {shape} != embedding ({net.embedding_dim},)")
    return trace


def row_trace(net: NetworkSpec) -> list[tuple[str, tuple]]:
    """Shape entering each table row, followed by the final output shape.

    Feature-map shapes are reported as (H, W, C), vectors as (D,), the way
    architecture tables are usually printed. Labels name the row's operator.
    """
    trace = shape_trace(net)
    row_output: dict[int, tuple] = {}
    for layer, (_, shape) in zip(net.layers, trace):
        row_output[layer.row] = shape

    def hwc(shape):
        return (shape[1], shape[2], shape[0]) if len(shape) == 3 else tuple(shape)

    out = []
    incoming = tuple(net.input_shape)
    for r in sorted(row_output):
        label = net.row_labels[r - 1] if 0 < r <= len(net.row_labels) else f"row {r}"
        out.append((label, hwc(incoming)))
        incoming = row_output[r]
    out.append(("output", hwc(incoming)))
    return out


# -- execution --------------------------------------------------------------


def _get(weights, layer, role):
    name = layer.weights[role]
    try:
        return weights[name]
    except KeyError:
        raise MissingWeightError(f"layer {layer.name}: missing weight {name!r}") from None


def layer_params(layer: LayerSpec, weights: Mapping):
    """Materialise the ops parameter object for ``layer`` from ``weights``."""
    a = layer.attrs
    if layer.kind == CONV:
        bias = _get(weights, layer, "bias") if a.get("bias") else None
        return ops.ConvParams(_get(weights, layer, "weight"), bias, a["stride"], a["padding"])
    if layer.kind == DWCONV:
        bias = _get(weights, layer, "bias") if a.get("bias") else None
        return ops.DwConvParams(_get(weights, layer, "weight"), a["stride"], a["padding"], bias)
    if layer.kind == BN:
        return ops.BatchNormParams(*(_get(weights, layer, r) for r in
                                     ("gamma", "beta", "running_mean", "running_var")),
                                   epsilon=a.get("epsilon", ops.BN_EPSILON))
    if layer.kind == PRELU:
        return ops.PReLUParams(_get(weights, layer, "slopes"))
    if layer.kind == FC:
        return ops.FcParams(_get(weights, layer, "weight"), _get(weights, layer, "bias"))
    return None


def run_layers(layers: Sequence[LayerSpec], weights: Mapping, x: np.ndarray) -> np.ndarray:
    saved = []
    for layer in layers:
        kind = layer.kind
        try:
            p = layer_params(layer, weights)
            if kind == CONV:
                x = ops.conv2d(x, p)
            elif kind == DWCONV:
                x = ops.dwconv2d(x, p)
            elif kind == BN:
                x = ops.batchnorm(x, p)
            elif kind == PRELU:
                x = ops.prelu(x, p)
            elif kind == RELU:
                x = ops.relu(x)
            elif kind == FC:
                x = ops.fully_connected(x, p)
            elif kind == FLATTEN:
                x = ops.flatten(x)
            elif kind == RES_BEGIN:
                saved.append(x)
            elif kind == RES_END:
                x = ops.residual_add(x, saved.pop())
        except (ShapeError, ValueError) as exc:
            raise ShapeError(f"layer {layer.name}: {exc}") from exc
    return x


def forward(net: NetworkSpec, weights: Mapping, x: np.ndarray) -> np.ndarray:
    """Embed a batch ``[N, C, H, W]`` (or a single ``[C, H, W]`` image) to ``[N, D]``."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return run_layers(net.layers, weights, x)


def apply_head(head: FlipHeadSpec, weights: Mapping, f: np.ndarray) -> np.ndarray:
    if f.shape[-1] != head.embedding_dim:
        raise ShapeError(f"flip head expects {head.embedding_dim}-d features, got {f.shape}")
    return run_layers(head.layers, weights, f)


def embed_with_flip(net: NetworkSpec, head: FlipHeadSpec, weights: Mapping, x: np.ndarray) -> np.ndarray:
    """Average the embedding with the head's prediction of the mirror-image embedding.

    The backbone runs once; the head stands in for a second pass on ``hflip(x)``.
    """
    if head.embedding_dim != net.embedding_dim:
        raise ShapeError(f"head dim {head.embedding_dim} != embedding dim {net.embedding_dim}")
    f = forward(net, weights, x)
    predicted = apply_head(head, weights, f)
    return (DTYPE(0.5) * (f + predicted)).astype(DTYPE)


def true_flip_features(net: NetworkSpec, weights: Mapping, x: np.ndarray):
    """``(forward(x), forward(hflip(x)))``: ground-truth pairs for the flip head."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    return forward(net, weights, x), forward(net, weights, hflip(x))


# -- batch-norm folding -----------------------------------------------------


def fold_network(net: NetworkSpec, weights: Mapping) -> tuple[NetworkSpec, dict]:
    """Merge each conv/dwconv + BN pair into a biased conv for faster inference."""
    layers = list(net.layers)
    new_layers = []
    new_weights = {}
    i = 0
    while i < len(layers):
        layer = layers[i]
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if layer.kind in (CONV, DWCONV) and nxt is not None and nxt.kind == BN:
            folded = ops.fold_bn(layer_params(layer, weights), layer_params(nxt, weights))
            attrs = dict(layer.attrs, bias=True)
            roles = _weights(layer.name, "weight", "bias")
            new_layers.append(LayerSpec(layer.name, layer.kind, attrs, roles, layer.row, layer.block))
            new_weights[roles["weight"]] = folded.kernel
            new_weights[roles["bias"]] = folded.bias
            i += 2
            continue
        new_layers.append(layer)
        for name in layer.weights.values():
            new_weights[name] = weights[name]
        i += 1
    # Rows whose last layer was a BN now end on the conv, so row_trace is unchanged.
    return NetworkSpec(net.input_shape, tuple(new_layers), net.embedding_dim, net.row_labels,
                       net.arch_id + "+folded"), new_weights
