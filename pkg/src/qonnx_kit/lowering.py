"""QONNX Quant <-> QuantizeLinear/Clip/DequantizeLinear (QCDQ) conversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from qonnx_kit.errors import ArgumentError, QonnxError, UnsupportedError
from qonnx_kit.ir import QONNX_DOMAIN, Model, NodeDef, TensorValue
from qonnx_kit.kernels import clamp_bounds
from qonnx_kit.passes.base import GraphEditor, PassReport
from qonnx_kit.passes.shapes import infer_shapes

log = logging.getLogger(__name__)

_STD = ("", "ai.onnx")
_MIN_CLIP_OPSET = 12  # integer-typed Clip
_MIN_AXIS_OPSET = 13  # per-axis QuantizeLinear


@dataclass(frozen=True)
class LoweringConfig:
    target_opset: int = 13
    allow_bipolar: bool = False

    def __post_init__(self):
        if self.target_opset < 10:
            raise ArgumentError(f"target_opset must be >= 10 for QuantizeLinear, got {self.target_opset}")


class _Lowerer:
    def __init__(self, model: Model, cfg: LoweringConfig):
        self.cfg = cfg
        self.typed = infer_shapes(model).graph
        self.ed = GraphEditor(model.graph)
        # the emitted model never declares an older opset than its source
        self.opset = max([v for d, v in model.opset_imports if d in _STD] + [cfg.target_opset])

    def const(self, node: NodeDef, index: int, what: str) -> np.ndarray:
        name = node.input(index)
        t = self.ed.initializers.get(name)
        if t is None or name in self.ed.input_names:
            raise QonnxError(f"{node.op_type} {node.name!r}: {what} {name!r} is not a constant initializer",
                             code="E_DYNAMIC_PARAM")
        return t.data

    def add_const(self, base: str, value: np.ndarray) -> str:
        name = self.ed.fresh(base)
        self.ed.initializers[name] = TensorValue(value)
        return name

    def scale_axis(self, node: NodeDef, scale: np.ndarray) -> tuple[np.ndarray, int | None]:
        """Per-tensor scalar, or a 1-D vector plus the axis of x it runs along."""
        if scale.size == 1:
            return scale.reshape(()).astype(np.float32), None
        axes = [i for i, d in enumerate(scale.shape) if d != 1]
        if len(axes) != 1:
            raise UnsupportedError(
                f"Quant {node.name!r}: scale of shape {scale.shape} varies along several axes; "
                "QuantizeLinear supports per-tensor or single-axis scales"
            )
        x_shape = self.typed.shape_of(node.input(0))
        if x_shape is None:
            raise UnsupportedError(f"Quant {node.name!r}: rank of x unknown, cannot place per-axis scale")
        axis = axes[0] + len(x_shape) - scale.ndim
        if self.opset < _MIN_AXIS_OPSET:
            raise UnsupportedError(f"per-axis scale needs opset >= {_MIN_AXIS_OPSET}")
        return scale.reshape(-1).astype(np.float32), axis

    def lower_quant(self, node: NodeDef) -> list[NodeDef]:
        label = f"Quant {node.name!r}"
        scale = self.const(node, 1, "scale")
        zero_point = self.const(node, 2, "zero_point")
        bit_width = self.const(node, 3, "bit_width")
        if bit_width.size != 1:
            raise QonnxError(f"{label}: bit_width must be a per-tensor scalar for QCDQ, got shape "
                             f"{bit_width.shape}", code="E_PER_CHANNEL_BITWIDTH")
        if zero_point.size != 1:
            raise QonnxError(f"{label}: zero_point must be a per-tensor scalar for QCDQ, got shape "
                             f"{zero_point.shape}", code="E_PER_CHANNEL_BITWIDTH")
        bits = float(bit_width.reshape(-1)[0])
        if bits != int(bits) or bits > 8:
            raise QonnxError(f"{label}: QCDQ only represents integer bit widths <= 8, got {bits:g}",
                             code="E_BITWIDTH")
        mode = str(node.attr("rounding_mode", "ROUND"))
        if mode != "ROUND":
            raise UnsupportedError(f"{label}: rounding_mode {mode} has no QuantizeLinear equivalent")
        z = float(zero_point.reshape(-1)[0])
        if z != int(z):
            raise QonnxError(f"{label}: zero_point {z:g} is not an integer", code="E_ZERO_POINT")
        signed = bool(node.attr("signed", 1))
        narrow = bool(node.attr("narrow", 0))
        int_type = np.int8 if signed else np.uint8
        info = np.iinfo(int_type)
        if not info.min <= z <= info.max:
            raise QonnxError(f"{label}: zero_point {z:g} does not fit {np.dtype(int_type).name}",
                             code="E_ZERO_POINT")
        bounds = clamp_bounds(int(bits), signed, narrow)
        s, axis = self.scale_axis(node, scale)

        x, y = node.input(0), node.outputs[0]
        base = node.name or "quant"
        s_name = self.add_const(f"{base}_scale", s)
        z_arr = np.asarray(int(z), dtype=int_type)
        if axis is not None:
            z_arr = np.full(s.shape, int(z), dtype=int_type)
        z_name = self.add_const(f"{base}_zero_point", z_arr)
        axis_attr = {} if axis is None else {"axis": axis}
        q_out = self.ed.fresh(f"{y}_int")
        nodes = [NodeDef("QuantizeLinear", (x, s_name, z_name), (q_out,), axis_attr, name=self.ed.fresh(f"{base}_ql"))]
        if (bounds.y_min, bounds.y_max) != (info.min, info.max):
            if self.opset < _MIN_CLIP_OPSET:
                raise UnsupportedError(f"{label}: integer Clip needs opset >= {_MIN_CLIP_OPSET}")
            lo = self.add_const(f"{base}_clip_min", np.asarray(bounds.y_min, dtype=int_type))
            hi = self.add_const(f"{base}_clip_max", np.asarray(bounds.y_max, dtype=int_type))
            c_out = self.ed.fresh(f"{y}_clipped")
            nodes.append(NodeDef("Clip", (q_out, lo, hi), (c_out,), name=self.ed.fresh(f"{base}_clip")))
            q_out = c_out
        nodes.append(NodeDef("DequantizeLinear", (q_out, s_name, z_name), (y,), axis_attr,
                             name=self.ed.fresh(f"{base}_dql")))
        return nodes

    def lower_bipolar(self, node: NodeDef) -> list[NodeDef]:
        if not self.cfg.allow_bipolar:
            raise UnsupportedError(
                f"BipolarQuant {node.name!r}: QCDQ cannot express sign(0)=+1; enable allow_bipolar to emulate it"
            )
        scale = self.const(node, 1, "scale")
        s, axis = self.scale_axis(node, scale)
        x, y = node.input(0), node.outputs[0]
        base = node.name or "bipolar"
        half = self.add_const(f"{base}_half", np.asarray(0.5, dtype=np.float32))
        one = self.add_const(f"{base}_unit_scale", np.asarray(1.0, dtype=np.float32))
        zero = self.add_const(f"{base}_zero_point", np.asarray(0, dtype=np.int8))
        lo = self.add_const(f"{base}_clip_min", np.asarray(-1, dtype=np.int8))
        hi = self.add_const(f"{base}_clip_max", np.asarray(1, dtype=np.int8))
        s_name = self.add_const(f"{base}_scale", s)
        dq_zero = zero if axis is None else self.add_const(f"{base}_zero_point", np.zeros(s.shape, np.int8))
        t = [self.ed.fresh(f"{y}_{k}") for k in ("sign", "shifted", "pm1", "int", "clipped")]
        axis_attr = {} if axis is None else {"axis": axis}
        # sign(sign(x) + 0.5) maps 0 to +1 and keeps +-1
        return [
            NodeDef("Sign", (x,), (t[0],), name=self.ed.fresh(f"{base}_sign")),
            NodeDef("Add", (t[0], half), (t[1],), name=self.ed.fresh(f"{base}_shift")),
            NodeDef("Sign", (t[1],), (t[2],), name=self.ed.fresh(f"{base}_sign")),
            NodeDef("QuantizeLinear", (t[2], one, zero), (t[3],), name=self.ed.fresh(f"{base}_ql")),
            NodeDef("Clip", (t[3], lo, hi), (t[4],), name=self.ed.fresh(f"{base}_clip")),
            NodeDef("DequantizeLinear", (t[4], s_name, dq_zero), (y,), axis_attr, name=self.ed.fresh(f"{base}_dql")),
        ]


def _drop_unused_initializers(ed: GraphEditor, candidates) -> None:
    for name in set(candidates):
        if name in ed.initializers and name not in ed.input_names and not ed.is_used(name):
            del ed.initializers[name]


def _without_qonnx_import(model: Model, opset: int) -> Model:
    imports = [(d, v) for d, v in model.opset_imports if d != QONNX_DOMAIN and d not in _STD]
    default = max([v for d, v in model.opset_imports if d in _STD] + [opset])
    if any(n.domain == QONNX_DOMAIN for n in model.graph.nodes):
        imports.append((QONNX_DOMAIN, 1))
    return Model(model.graph, (("", default), *imports), model.ir_version, model.metadata, model.producer_name)


def lower_to_qcdq(model: Model, cfg: LoweringConfig | None = None) -> tuple[Model, PassReport]:
    """Replace every Quant (and optionally BipolarQuant) with a QCDQ chain.

    Raises on the first node that QCDQ cannot represent; the input model is
    never partially rewritten.
    """
    cfg = cfg or LoweringConfig()
    report = PassReport("lower_to_qcdq", nodes_before=len(model.graph.nodes))
    low = _Lowerer(model, cfg)
    ed = low.ed
    new_nodes: list[NodeDef] = []
    replaced_inputs: list[str] = []
    for node in ed.nodes:
        if node.domain != QONNX_DOMAIN:
            new_nodes.append(node)
            continue
        if node.op_type == "Quant":
            new_nodes.extend(low.lower_quant(node))
        elif node.op_type == "BipolarQuant":
            new_nodes.extend(low.lower_bipolar(node))
        elif node.op_type == "Trunc":
            raise UnsupportedError(f"Trunc {node.name!r} has no QCDQ equivalent")
        else:
            raise UnsupportedError(f"{node.op_type} {node.name!r} cannot be lowered")
        replaced_inputs.extend(node.inputs[1:])
        ed.quant_annotations.pop(node.outputs[0], None)
        report.rewrites_applied += 1
    ed.nodes = new_nodes
    _drop_unused_initializers(ed, replaced_inputs)
    ed.value_info = []
    out = infer_shapes(_without_qonnx_import(ed.model(model), cfg.target_opset))
    report.nodes_after = len(out.graph.nodes)
    return out, report


# ---------------------------------------------------------------- raising


def recover_bit_width(y_min: int, y_max: int, signed: bool) -> tuple[int, bool] | None:
    """Smallest (bit_width, narrow) in 2..8 whose clamp bounds are exactly (y_min, y_max)."""
    for b in range(2, 9):
        for narrow in (False, True):
            bounds = clamp_bounds(b, signed, narrow)
            if (bounds.y_min, bounds.y_max) == (y_min, y_max):
                return b, narrow
    return None


def _clip_bounds(ed: GraphEditor, clip: NodeDef) -> tuple[int, int] | None:
    vals = []
    for idx, key in ((1, "min"), (2, "max")):
        name = clip.input(idx)
        if name:
            t = ed.initializers.get(name)
            if t is None or t.size != 1:
                return None
            v = float(t.data.reshape(-1)[0])
        else:
            v = clip.attr(key)
            if v is None:
                return None
        if v != int(v):
            return None
        vals.append(int(v))
    return vals[0], vals[1]


def raise_from_qcdq(model: Model) -> tuple[Model, PassReport]:
    """Fold QuantizeLinear[->Clip]->DequantizeLinear chains back into Quant nodes."""
    report = PassReport("raise_from_qcdq", nodes_before=len(model.graph.nodes))
    typed = infer_shapes(model).graph
    ed = GraphEditor(model.graph)
    removed: set[int] = set()
    replacements: dict[int, NodeDef] = {}
    dropped: list[str] = []

    def sole_consumer(name: str) -> int | None:
        users = ed.consumers(name)
        if len(users) != 1 or name in ed.output_names:
            return None
        return users[0]

    for qi, ql in enumerate(ed.nodes):
        if ql.op_type != "QuantizeLinear" or ql.domain not in _STD:
            continue
        label = f"QuantizeLinear {ql.name!r}"
        nxt = sole_consumer(ql.outputs[0])
        if nxt is None:
            continue
        chain = [qi]
        clip = None
        if ed.nodes[nxt].op_type == "Clip" and ed.nodes[nxt].input(0) == ql.outputs[0]:
            clip = ed.nodes[nxt]
            chain.append(nxt)
            nxt = sole_consumer(clip.outputs[0])
            if nxt is None:
                continue
        dql = ed.nodes[nxt]
        if dql.op_type != "DequantizeLinear" or dql.domain not in _STD or dql.input(0) != ed.nodes[chain[-1]].outputs[0]:
            continue
        chain.append(nxt)

        def param(node: NodeDef, idx: int):
            name = node.input(idx)
            if not name:
                return None
            t = ed.initializers.get(name)
            return None if t is None or name in ed.input_names else t.data

        s_q, s_d = param(ql, 1), param(dql, 1)
        z_q = param(ql, 2) if ql.input(2) else np.zeros((), np.uint8)
        z_d = param(dql, 2) if dql.input(2) else np.zeros((), z_q.dtype if z_q is not None else np.uint8)
        if any(v is None for v in (s_q, s_d, z_q, z_d)):
            report.notes.append(f"{label}: non-constant parameters, left as is")
            continue
        axis_q, axis_d = int(ql.attr("axis", 1)), int(dql.attr("axis", 1))
        per_axis = s_q.size > 1 or z_q.size > 1
        if (s_q.shape != s_d.shape or not np.array_equal(s_q.view(np.uint32) if s_q.dtype == np.float32 else s_q,
                                                         s_d.view(np.uint32) if s_d.dtype == np.float32 else s_d)
                or z_q.dtype != z_d.dtype or not np.array_equal(z_q, z_d) or (per_axis and axis_q != axis_d)):
            report.notes.append(f"{label}: scale/zero_point differ between quantize and dequantize, left as is")
            continue
        if z_q.dtype not in (np.int8, np.uint8):
            report.notes.append(f"{label}: zero_point type {z_q.dtype} not int8/uint8, left as is")
            continue
        signed = z_q.dtype == np.int8
        if clip is None:
            bits, narrow = 8, False
        else:
            lohi = _clip_bounds(ed, clip)
            found = None if lohi is None else recover_bit_width(*lohi, signed)
            if found is None:
                report.notes.append(f"{label}: Clip bounds {lohi} match no bit width, left as is")
                continue
            bits, narrow = found

        scale = s_q.astype(np.float32)
        zero_point = z_q.astype(np.float32)
        if zero_point.size > 1 and np.all(zero_point == zero_point.reshape(-1)[0]):
            zero_point = zero_point.reshape(-1)[:1].reshape(())
        if per_axis:
            x_shape = typed.shape_of(ql.input(0))
            if x_shape is None:
                report.notes.append(f"{label}: rank of x unknown, per-axis scale left as is")
                continue
            axis = axis_q + len(x_shape) if axis_q < 0 else axis_q
            shape = [1] * (len(x_shape) - axis)
            shape[0] = -1
            scale = scale.reshape(shape) if scale.size > 1 else scale.reshape(())
            zero_point = zero_point.reshape(shape) if zero_point.size > 1 else zero_point.reshape(())
        base = ql.name or "qcdq"
        names = []
        for suffix, value in (("scale", scale), ("zero_point", zero_point),
                              ("bit_width", np.asarray(bits, dtype=np.float32))):
            name = ed.fresh(f"{base}_{suffix}")
            ed.initializers[name] = TensorValue(value)
            names.append(name)
        quant = NodeDef("Quant", (ql.input(0), *names), dql.outputs,
                        {"signed": int(signed), "narrow": int(narrow), "rounding_mode": "ROUND"},
                        QONNX_DOMAIN, ed.fresh(f"{base}_quant"))
        replacements[chain[-1]] = quant
        removed.update(chain[:-1])
        for i in chain:
            dropped.extend(ed.nodes[i].inputs[1:])
        report.rewrites_applied += 1

    if not report.rewrites_applied:
        report.nodes_after = report.nodes_before
        return model, report
    ed.nodes = [replacements.get(i, n) for i, n in enumerate(ed.nodes) if i not in removed]
    _drop_unused_initializers(ed, dropped)
    ed.value_info = []
    out = ed.model(model)
    imports = dict(out.opset_imports)
    if QONNX_DOMAIN not in imports:
        out = out.with_opset(QONNX_DOMAIN, 1)
    out = infer_shapes(out)
    report.nodes_after = len(out.graph.nodes)
    return out, report
