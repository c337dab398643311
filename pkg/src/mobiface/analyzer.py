"""Static cost model: parameters, MACs, activation memory, downsampling schedule.

Counts are pure functions of the architecture spec. One MAC (multiply-
accumulate) is two FLOPs. Batch norm and PReLU are charged one MAC per
output element. Batch-norm running statistics are reported as buffers,
separately from learnable parameters; both occupy bytes in a weight file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from . import graph

BYTES_PER_FLOAT = 4

# Model sizes as published for the two architectures; shown for comparison only.
PUBLISHED_SIZE_MB = {"mobiface": 9.3, "mobiface-flipped": 11.3}


@dataclass
class LayerCost:
    layer: str
    kind: str
    shape: tuple
    params: int
    buffers: int
    macs: int
    act_bytes: int


@dataclass
class DownsamplingEvent:
    layer: str
    in_spatial: tuple
    out_spatial: tuple


@dataclass
class DownsamplingReport:
    events: list
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


@dataclass
class ArchReport:
    arch: str
    rows: list
    total_params: int
    total_buffers: int
    total_macs: int
    total_act_bytes: int
    peak_act_bytes: int
    peak_layer: str
    downsampling: DownsamplingReport
    notes: list = field(default_factory=list)

    @property
    def total_floats(self) -> int:
        return self.total_params + self.total_buffers

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "convention": "1 MAC = 2 FLOPs; BN and PReLU cost one MAC per output element",
            "layers": [
                {"layer": r.layer, "shape": list(r.shape), "params": r.params,
                 "buffers": r.buffers, "macs": r.macs, "act_bytes": r.act_bytes}
                for r in self.rows
            ],
            "totals": {
                "params": self.total_params,
                "buffers": self.total_buffers,
                "floats": self.total_floats,
                "model_bytes": self.total_floats * BYTES_PER_FLOAT,
                "macs": self.total_macs,
                "act_bytes": self.total_act_bytes,
                "peak_act_bytes": self.peak_act_bytes,
                "peak_layer": self.peak_layer,
            },
            "downsampling": {
                "events": [asdict(e) for e in self.downsampling.events],
                "checks": self.downsampling.checks,
            },
            "notes": self.notes,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _layer_params(layer):
    """(learnable, buffer) float counts for one layer."""
    a = layer.attrs
    if layer.kind == graph.CONV:
        return a["k"] ** 2 * a["cin"] * a["cout"] + (a["cout"] if a.get("bias") else 0), 0
    if layer.kind == graph.DWCONV:
        return a["k"] ** 2 * a["c"] + (a["c"] if a.get("bias") else 0), 0
    if layer.kind == graph.BN:
        return 2 * a["c"], 2 * a["c"]
    if layer.kind == graph.PRELU:
        return a["c"], 0
    if layer.kind == graph.FC:
        return a["in_dim"] * a["out_dim"] + a["out_dim"], 0
    return 0, 0


def _layer_macs(layer, out_shape):
    a = layer.attrs
    if layer.kind == graph.CONV:
        _, h, w = out_shape
        return h * w * a["k"] ** 2 * a["cin"] * a["cout"]
    if layer.kind == graph.DWCONV:
        c, h, w = out_shape
        return h * w * a["k"] ** 2 * c
    if layer.kind in (graph.BN, graph.PRELU):
        c, h, w = out_shape
        return h * w * c
    if layer.kind == graph.FC:
        return a["in_dim"] * a["out_dim"]
    return 0


def _numel(shape):
    n = 1
    for d in shape:
        n *= d
    return n


def _trace(net, head):
    rows = graph.shape_trace(net)
    layers = list(net.layers)
    if head is not None:
        shape = rows[-1][1]
        for layer in head.layers:
            shape = graph.layer_output_shape(layer, shape)
            rows.append((layer.name, shape))
            layers.append(layer)
    return layers, rows


def layer_costs(net: graph.NetworkSpec, head: graph.FlipHeadSpec | None = None) -> list[LayerCost]:
    layers, trace = _trace(net, head)
    costs = []
    for layer, (name, shape) in zip(layers, trace):
        params, buffers = _layer_params(layer)
        costs.append(LayerCost(name, layer.kind, tuple(shape), params, buffers,
                               _layer_macs(layer, shape), _numel(shape) * BYTES_PER_FLOAT))
    return costs


def count_params(net, head=None) -> tuple[dict, int, int]:
    """Per-layer ``(learnable, buffer)`` counts plus the two totals."""
    per_layer = {c.layer: (c.params, c.buffers) for c in layer_costs(net, head)}
    return (per_layer, sum(p for p, _ in per_layer.values()),
            sum(b for _, b in per_layer.values()))


def count_macs(net, head=None) -> tuple[dict, int]:
    per_layer = {c.layer: c.macs for c in layer_costs(net, head)}
    return per_layer, sum(per_layer.values())


def activation_memory(net, head=None) -> tuple[dict, int, str]:
    """Per-layer output bytes, and the peak input+output footprint.

    Layers run one after another, so the live set at a layer is its input and
    its output. Tensors held for shortcuts are not counted.
    """
    costs = layer_costs(net, head)
    per_layer = {c.layer: c.act_bytes for c in costs}
    prev = _numel(net.input_shape) * BYTES_PER_FLOAT
    peak, peak_layer = 0, ""
    for c in costs:
        live = prev + c.act_bytes
        if live > peak:
            peak, peak_layer = live, c.layer
        prev = c.act_bytes
    return per_layer, peak, peak_layer


def downsampling_report(net: graph.NetworkSpec, floor: int = 7,
                        expected_reductions: int | None = None) -> DownsamplingReport:
    """List every spatial reduction and check the fast-downsampling schedule.

    Checks: no reduction starts from a map at or below ``floor``; the last
    stage of residual blocks runs entirely at ``floor`` x ``floor``; and, if
    given, the number of reductions equals ``expected_reductions``.
    """
    trace = graph.shape_trace(net)
    events = []
    shape = tuple(net.input_shape)
    spatial_in = {}
    for layer, (name, out_shape) in zip(net.layers, trace):
        spatial_in[name] = shape[1:] if len(shape) == 3 else None
        if len(shape) == 3 and len(out_shape) == 3 and out_shape[1:] != shape[1:]:
            events.append(DownsamplingEvent(name, tuple(shape[1:]), tuple(out_shape[1:])))
        shape = out_shape

    checks = {}
    if expected_reductions is not None:
        checks["reduction_count"] = len(events) == expected_reductions
    checks["none_after_floor"] = all(min(e.in_spatial) > floor for e in events)

    residual_rows = [layer.row for layer in net.layers if layer.kind == graph.RES_BEGIN]
    if residual_rows:
        last_row = max(residual_rows)
        out_shapes = dict(trace)
        stage = [layer.name for layer in net.layers if layer.row == last_row]
        checks["last_stage_at_floor"] = all(
            spatial_in[n] == (floor, floor) and out_shapes[n][1:] == (floor, floor) for n in stage
        )
    return DownsamplingReport(events, checks)


def analyze(net: graph.NetworkSpec, head: graph.FlipHeadSpec | None = None,
            arch: str | None = None) -> ArchReport:
    arch = arch or net.arch_id
    costs = layer_costs(net, head)
    _, peak, peak_layer = activation_memory(net, head)
    ds = downsampling_report(net, expected_reductions=4 if arch.startswith("mobiface") else None)
    report = ArchReport(
        arch=arch,
        rows=costs,
        total_params=sum(c.params for c in costs),
        total_buffers=sum(c.buffers for c in costs),
        total_macs=sum(c.macs for c in costs),
        total_act_bytes=sum(c.act_bytes for c in costs),
        peak_act_bytes=peak,
        peak_layer=peak_layer,
        downsampling=ds,
    )
    published = PUBLISHED_SIZE_MB.get(arch)
    if published is not None:
        computed_mb = report.total_floats * BYTES_PER_FLOAT / 1e6
        fc_floats = sum(c.params for c in costs if c.kind == graph.FC and c.layer == "fc")
        report.notes.append(
            f"NOTE (flagged, not asserted): published model size {published} MB vs computed "
            f"{computed_mb:.1f} MB at fp32; the final FC alone holds {fc_floats:,} floats "
            f"({fc_floats * BYTES_PER_FLOAT / 1e6:.1f} MB)."
        )
    return report


def format_table(report: ArchReport) -> str:
    header = f"{'layer':<28} {'shape':<16} {'params':>11} {'buffers':>8} {'MACs':>13} {'act bytes':>11}"
    lines = [f"architecture: {report.arch}  (1 MAC = 2 FLOPs)", header, "-" * len(header)]
    for r in report.rows:
        shape = "x".join(str(d) for d in r.shape)
        lines.append(f"{r.layer:<28} {shape:<16} {r.params:>11,} {r.buffers:>8,} {r.macs:>13,} {r.act_bytes:>11,}")
    lines.append("-" * len(header))
    lines.append(f"{'total':<28} {'':<16} {report.total_params:>11,} {report.total_buffers:>8,} "
                 f"{report.total_macs:>13,} {report.total_act_bytes:>11,}")
    lines.append(f"model size: {report.total_floats:,} floats = "
                 f"{report.total_floats * BYTES_PER_FLOAT / 1e6:.2f} MB (fp32)")
    lines.append(f"peak activation: {report.peak_act_bytes:,} bytes at {report.peak_layer}")
    lines.append("downsampling events:")
    for e in report.downsampling.events:
        lines.append(f"  {e.layer:<28} {e.in_spatial[0]}x{e.in_spatial[1]} -> {e.out_spatial[0]}x{e.out_spatial[1]}")
    for name, ok in report.downsampling.checks.items():
        lines.append(f"  check {name}: {'ok' if ok else 'FAILED'}")
    lines.extend(report.notes)
    return "\n".join(lines)
