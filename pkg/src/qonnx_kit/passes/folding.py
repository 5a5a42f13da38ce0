"""Constant folding."""

from __future__ import annotations

import numpy as np

from qonnx_kit.errors import QonnxError
from qonnx_kit.executor import REGISTRY, ExecutionContext, constant_value, execute_node
from qonnx_kit.ir import QONNX_DOMAIN, Model, NodeDef, TensorValue, topological_order
from qonnx_kit.passes.base import GraphEditor, PassReport
from qonnx_kit.passes.shapes import infer_shapes

# ops that only move values, so a quantized input stays quantized
_GRID_PRESERVING = frozenset({"Transpose", "Reshape", "Flatten", "Identity", "Squeeze", "Unsqueeze"})


def _quant_annotation(node: NodeDef, ins: list[TensorValue]) -> dict[str, str]:
    if node.op_type == "BipolarQuant":
        return {"op": "BipolarQuant", "bit_width": "1", "signed": "1", "narrow": "0"}
    bits = ins[3].data.astype(np.float64)
    return {
        "op": "Quant",
        "bit_width": repr(float(bits.max())),
        "signed": str(int(node.attr("signed", 1))),
        "narrow": str(int(node.attr("narrow", 0))),
    }


def constants_to_initializers(model: Model) -> tuple[Model, int]:
    """Turn ONNX Constant nodes into initializers."""
    ed = GraphEditor(model.graph)
    kept, count = [], 0
    for node in ed.nodes:
        value = constant_value(node) if node.op_type == "Constant" and node.domain in ("", "ai.onnx") else None
        if value is None:
            kept.append(node)
            continue
        ed.initializers[node.outputs[0]] = value
        count += 1
    ed.nodes = kept
    return (ed.model(model), count) if count else (model, 0)


def fold_constants(model: Model) -> tuple[Model, PassReport]:
    """Evaluate every node whose inputs are all known constants."""
    report = PassReport("fold_constants", nodes_before=len(model.graph.nodes))
    model, converted = constants_to_initializers(model)
    report.rewrites_applied += converted

    g = model.graph
    typed = infer_shapes(model).graph
    ed = GraphEditor(g)
    # initializers that double as graph inputs can be overridden at run time
    constant = set(g.initializers) - set(g.input_names)
    folded: set[int] = set()
    for i in topological_order(g):
        node = g.nodes[i]
        ins = [n for n in node.inputs if n]
        if node.op_type == "Shape" and node.domain in ("", "ai.onnx"):
            vi = typed.find_value_info(node.inputs[0])
            is_const = vi is not None and vi.is_static
        else:
            is_const = bool(ins) and all(n in constant for n in ins)
        if not is_const:
            continue
        if REGISTRY.lookup(node) is None:
            report.notes.append(f"left {node.domain or 'ai.onnx'}::{node.op_type} {node.name!r} unfolded: no kernel")
            continue
        if node.op_type == "Shape" and node.inputs[0] not in constant:
            vi = typed.find_value_info(node.inputs[0])
            start, end = node.attr("start", 0), node.attr("end")
            outs = [TensorValue(np.asarray(vi.shape[start:end], dtype=np.int64))]
            in_values = []
        else:
            in_values = [ed.initializers[n] for n in ins]
            ctx = ExecutionContext(model, {n: ed.initializers[n] for n in ins})
            try:
                outs = execute_node(node, ctx)
            except QonnxError as e:
                report.notes.append(f"left {node.op_type} {node.name!r} unfolded: {e}")
                continue
        for name, t in zip(node.outputs, outs):
            if name:
                ed.initializers[name] = t
                constant.add(name)
                if node.domain == QONNX_DOMAIN and node.op_type in ("Quant", "BipolarQuant"):
                    ed.quant_annotations[name] = _quant_annotation(node, in_values)
                elif node.op_type in _GRID_PRESERVING and node.inputs[0] in ed.quant_annotations:
                    ed.quant_annotations[name] = dict(ed.quant_annotations[node.inputs[0]])
        folded.add(i)
    if folded:
        ed.nodes = [n for i, n in enumerate(g.nodes) if i not in folded]
        report.rewrites_applied += len(folded)
        model = ed.model(model)
    report.nodes_after = len(model.graph.nodes)
    return model, report
