"""MAC, BOPs, weight-count and weight-bit statistics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from qonnx_kit.errors import ArgumentError, ShapeError
from qonnx_kit.executor import CHANNELS_LAST, LAYOUT_ATTR
from qonnx_kit.ir import QONNX_DOMAIN, Graph, Model, NodeDef, topological_order
from qonnx_kit.lowering import recover_bit_width
from qonnx_kit.passes.shapes import infer_shapes

log = logging.getLogger(__name__)

FLOAT_BITS = 32
FIRST_LAYER_INPUT_BITS = 8

_STD = ("", "ai.onnx")
# ops whose output values are a subset of their input values
_PASS_THROUGH = frozenset({"Transpose", "Reshape", "Flatten", "Identity", "Squeeze", "Unsqueeze",
                           "MaxPool", "Relu", "Pad", "Concat", "Gather"})


def layer_bops(m: float, n: float, k: float, b_a: float, b_w: float) -> float:
    """Bit operations of one layer: m*n*k^2 * (b_a*b_w + b_a + b_w + log2(n*k^2))."""
    for label, v in (("m", m), ("n", n), ("k", k), ("b_a", b_a), ("b_w", b_w)):
        if not v >= 1:
            raise ArgumentError(f"layer_bops: {label} must be >= 1, got {v}")
    return _bops(m, n, k * k, b_a, b_w)


def _bops(m, n, kk, b_a, b_w) -> float:
    return m * n * kk * (b_a * b_w + b_a + b_w + math.log2(n * kk))


@dataclass(frozen=True)
class LayerStats:
    layer_name: str
    kind: str  # "conv" | "fully_connected"
    n: int
    m: int
    k: int
    macs: int
    b_w: float
    b_a: float
    bops: float
    weights: int
    weight_bits: int
    # per-layer BOPs times the number of output positions
    bops_per_position_total: float = 0.0
    output_positions: int = 1


@dataclass(frozen=True)
class ModelStats:
    layers: list[LayerStats] = field(default_factory=list)

    @property
    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    @property
    def total_bops(self) -> float:
        return math.fsum(layer.bops for layer in self.layers)

    @property
    def total_bops_per_position(self) -> float:
        return math.fsum(layer.bops_per_position_total for layer in self.layers)

    @property
    def total_weights(self) -> int:
        return sum(layer.weights for layer in self.layers)

    @property
    def total_weight_bits(self) -> int:
        return sum(layer.weight_bits for layer in self.layers)

    def totals(self) -> dict:
        return {
            "total_macs": self.total_macs,
            "total_bops": self.total_bops,
            "total_bops_per_position": self.total_bops_per_position,
            "total_weights": self.total_weights,
            "total_weight_bits": self.total_weight_bits,
        }


class _Tracer:
    def __init__(self, graph: Graph):
        self.g = graph
        self.producers = graph.producers()
        self.runtime_inputs = {vi.name for vi in graph.runtime_inputs}

    def node_of(self, name: str) -> NodeDef | None:
        i = self.producers.get(name)
        return None if i is None else self.g.nodes[i]

    def const_value(self, name: str) -> np.ndarray | None:
        t = self.g.initializers.get(name)
        return None if t is None or name in self.runtime_inputs else t.data

    def quant_bits(self, node: NodeDef) -> float | None:
        """Bit width set by a quantizer node, or None if `node` is not one."""
        if node.domain == QONNX_DOMAIN and node.op_type == "BipolarQuant":
            return 1.0
        if node.domain == QONNX_DOMAIN and node.op_type == "Quant":
            bits = self.const_value(node.input(3))
            return None if bits is None else float(np.max(bits))
        if node.domain in _STD and node.op_type == "DequantizeLinear":
            src = self.node_of(node.input(0))
            zp = self.const_value(node.input(2)) if node.input(2) else np.zeros((), np.uint8)
            if zp is None:
                return None
            if src is not None and src.op_type == "Clip":
                lo, hi = (self.const_value(src.input(1)), self.const_value(src.input(2)))
                if lo is None or hi is None:
                    return None
                found = recover_bit_width(int(lo.reshape(-1)[0]), int(hi.reshape(-1)[0]), zp.dtype == np.int8)
                return None if found is None else float(found[0])
            return float(np.iinfo(zp.dtype).bits)
        return None

    def weight(self, name: str) -> tuple[np.ndarray, float] | None:
        """Constant weight tensor feeding `name` and its bit width."""
        bits = None
        for _ in range(64):
            value = self.const_value(name)
            if value is not None:
                if bits is None and name in self.g.quant_annotations:
                    bits = float(self.g.quant_annotations[name].get("bit_width", FLOAT_BITS))
                return value, FLOAT_BITS if bits is None else bits
            node = self.node_of(name)
            if node is None:
                return None
            q = self.quant_bits(node)
            if q is not None:
                bits = q if bits is None else bits
                if node.op_type == "DequantizeLinear":
                    # walk past Clip and QuantizeLinear to the float weights
                    src = self.node_of(node.input(0))
                    if src is not None and src.op_type == "Clip":
                        src = self.node_of(src.input(0))
                    if src is None or src.op_type != "QuantizeLinear":
                        return None
                    name = src.input(0)
                else:
                    name = node.input(0)
            elif node.domain in _STD and node.op_type in ("Transpose", "Reshape", "Flatten", "Identity",
                                                           "Squeeze", "Unsqueeze"):
                name = node.input(0)
            else:
                return None
        return None

    def activation_bits(self, name: str) -> float:
        for _ in range(256):
            if name in self.runtime_inputs:
                return FIRST_LAYER_INPUT_BITS
            node = self.node_of(name)
            if node is None:
                return FLOAT_BITS
            q = self.quant_bits(node)
            if q is not None:
                return q
            if node.domain in _STD and node.op_type in _PASS_THROUGH:
                name = node.input(0)
                continue
            return FLOAT_BITS
        return FLOAT_BITS


def _static(shape, what: str) -> tuple[int, ...]:
    if shape is None or not all(isinstance(d, int) for d in shape):
        raise ShapeError(f"{what}: shape {shape} is not static; run shape inference on a static model")
    return tuple(shape)


def model_stats(model: Model) -> ModelStats:
    """Per-layer statistics for every Conv, MatMul and Gemm with constant weights."""
    g = infer_shapes(model).graph
    tracer = _Tracer(g)
    layers = []
    for i in topological_order(g):
        node = g.nodes[i]
        if node.domain not in _STD or node.op_type not in ("Conv", "MatMul", "Gemm"):
            continue
        label = node.name or f"{node.op_type}_{i}"
        act, w_in = node.input(0), node.input(1)
        w = tracer.weight(w_in)
        if w is None and node.op_type == "MatMul":
            act, w_in = w_in, act
            w = tracer.weight(w_in)
        if w is None:
            log.info("skipping %s: weights are not constant", label)
            continue
        w_arr, b_w = w
        b_a = tracer.activation_bits(act)
        w_shape = _static(g.shape_of(w_in) or w_arr.shape, f"{label} weights")
        out_shape = _static(g.shape_of(node.outputs[0]), f"{label} output")
        weights = int(np.prod(w_shape))
        if node.op_type == "Conv":
            m, n_per_group = w_shape[0], w_shape[1]
            kh, kw = w_shape[2:4] if len(w_shape) == 4 else (w_shape[2], 1)
            spatial = out_shape[1:-1] if node.attr(LAYOUT_ATTR) == CHANNELS_LAST else out_shape[2:]
            positions = int(np.prod(spatial))
            kind, n, kk, k = "conv", n_per_group, kh * kw, kh
        else:
            if len(w_shape) != 2:
                log.info("skipping %s: weight rank %d", label, len(w_shape))
                continue
            trans_b = node.op_type == "Gemm" and node.attr("transB", 0)
            n, m = (w_shape[1], w_shape[0]) if trans_b else w_shape
            positions = int(np.prod(out_shape[1:-1])) if len(out_shape) > 2 else 1
            kind, kk, k = "fully_connected", 1, 1
        macs = m * n * kk * positions
        bops = _bops(m, n, kk, b_a, b_w)
        layers.append(LayerStats(
            layer_name=label, kind=kind, n=int(n), m=int(m), k=int(k), macs=int(macs),
            b_w=b_w, b_a=b_a, bops=bops, weights=weights, weight_bits=weights * math.ceil(b_w),
            bops_per_position_total=bops * positions, output_positions=positions,
        ))
    return ModelStats(layers)


# ---------------------------------------------------------------- rendering


def format_table(stats: ModelStats) -> str:
    header = ("layer", "kind", "n", "m", "k", "b_a", "b_w", "MACs", "BOPs", "BOPs x positions",
              "weights", "weight bits")
    rows = [
        (s.layer_name, s.kind, str(s.n), str(s.m), str(s.k), f"{s.b_a:g}", f"{s.b_w:g}", f"{s.macs:,}",
         f"{s.bops:,.2f}", f"{s.bops_per_position_total:,.2f}", f"{s.weights:,}", f"{s.weight_bits:,}")
        for s in stats.layers
    ]
    rows.append(("total", "", "", "", "", "", "", f"{stats.total_macs:,}", f"{stats.total_bops:,.2f}",
                 f"{stats.total_bops_per_position:,.2f}", f"{stats.total_weights:,}",
                 f"{stats.total_weight_bits:,}"))
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if c < 2 else cell.rjust(w) for c, (cell, w) in enumerate(zip(r, widths)))
             for r in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def to_json_lines(stats: ModelStats) -> str:
    """One JSON object per layer followed by a totals record."""
    records = [{"record": "layer", **asdict(s)} for s in stats.layers]
    records.append({"record": "totals", **stats.totals()})
    return "\n".join(json.dumps(r, sort_keys=True) for r in records)
