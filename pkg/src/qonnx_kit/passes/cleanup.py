"""Graph tidying: folding, shape-chain collapse, Identity and dead-code removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qonnx_kit.ir import Model, NodeDef, TensorValue, topological_order
from qonnx_kit.passes.base import GraphEditor, PassReport
from qonnx_kit.passes.folding import fold_constants
from qonnx_kit.passes.shapes import infer_shapes


@dataclass(frozen=True)
class _DimOf:
    """Symbolic element: dimension `axis` of tensor `tensor`."""

    tensor: str
    axis: int


def _symbolic_vector(ed: GraphEditor, name: str, shapes, depth: int = 0):
    """Evaluate a small 1-D integer tensor as a list of ints and _DimOf.

    Returns (elements, is_scalar) or None when the value cannot be tracked.
    """
    if depth > 16:
        return None
    if name in ed.initializers:
        v = ed.initializers[name].data
        if v.dtype.kind not in "iu" or v.ndim > 1:
            return None
        return [int(x) for x in v.reshape(-1)], v.ndim == 0
    idx = ed.producer(name)
    if idx is None:
        return None
    node = ed.nodes[idx]
    if node.domain not in ("", "ai.onnx"):
        return None
    op = node.op_type
    if op == "Shape":
        shape = shapes(node.inputs[0])
        if shape is None:
            return None
        start, end = node.attr("start", 0), node.attr("end")
        dims = [d if isinstance(d, int) else _DimOf(node.inputs[0], i) for i, d in enumerate(shape)]
        return dims[start:end], False
    if op in ("Identity", "Cast"):
        return _symbolic_vector(ed, node.inputs[0], shapes, depth + 1)
    if op == "Gather":
        if node.attr("axis", 0) != 0:
            return None
        data = _symbolic_vector(ed, node.inputs[0], shapes, depth + 1)
        idx_t = ed.initializers.get(node.inputs[1])
        if data is None or idx_t is None or data[1]:
            return None
        elems = data[0]
        picks = [int(i) for i in idx_t.data.reshape(-1)]
        try:
            out = [elems[i] for i in picks]
        except IndexError:
            return None
        return out, idx_t.data.ndim == 0
    if op in ("Unsqueeze", "Squeeze"):
        inner = _symbolic_vector(ed, node.inputs[0], shapes, depth + 1)
        if inner is None:
            return None
        elems, scalar = inner
        if op == "Unsqueeze":
            return (elems, False) if scalar else None
        return (elems, True) if len(elems) == 1 and not scalar else None
    if op == "Concat":
        out = []
        for n in node.inputs:
            part = _symbolic_vector(ed, n, shapes, depth + 1)
            if part is None or part[1]:
                return None
            out.extend(part[0])
        return out, False
    return None


def collapse_reshape_chains(model: Model) -> tuple[Model, int]:
    """Give Reshape nodes a constant target when the computed one is static.

    Dimensions that are copied from the reshaped tensor at the same position
    become 0 (ONNX "copy this dimension"), so a symbolic batch dimension is
    handled too.
    """
    typed = infer_shapes(model).graph
    ed = GraphEditor(model.graph)
    count = 0
    for i, node in enumerate(list(ed.nodes)):
        if node.op_type != "Reshape" or node.domain not in ("", "ai.onnx") or node.inputs[1] in ed.initializers:
            continue
        sym = _symbolic_vector(ed, node.inputs[1], typed.shape_of)
        if sym is None or sym[1]:
            continue
        data = node.inputs[0]
        target = []
        for pos, el in enumerate(sym[0]):
            if isinstance(el, int):
                target.append(el)
            elif el.tensor == data and el.axis == pos and not node.attr("allowzero", 0):
                target.append(0)
            else:
                target = None
                break
        if target is None or target.count(-1) > 1:
            continue
        name = ed.fresh(f"{node.name or 'reshape'}_shape")
        ed.initializers[name] = TensorValue(np.asarray(target, dtype=np.int64))
        ed.nodes[i] = NodeDef(node.op_type, (data, name), node.outputs, node.attributes, node.domain, node.name)
        count += 1
    return (ed.model(model), count) if count else (model, 0)


def remove_identities(model: Model) -> tuple[Model, int]:
    ed = GraphEditor(model.graph)
    count = 0
    changed = True
    while changed:
        changed = False
        for i, node in enumerate(ed.nodes):
            if node.op_type != "Identity" or node.domain not in ("", "ai.onnx"):
                continue
            src, dst = node.inputs[0], node.outputs[0]
            if dst not in ed.output_names:
                del ed.nodes[i]
                ed.replace_uses(dst, src)
            elif src not in ed.input_names and src not in ed.output_names:
                # keep the graph output name: rename the source tensor instead
                del ed.nodes[i]
                p = ed.producer(src)
                if p is not None:
                    n = ed.nodes[p]
                    ed.nodes[p] = NodeDef(n.op_type, n.inputs, tuple(dst if o == src else o for o in n.outputs),
                                          n.attributes, n.domain, n.name)
                elif src in ed.initializers:
                    ed.initializers[dst] = ed.initializers[src]
                else:
                    ed.nodes.insert(i, node)
                    continue
                ed.replace_uses(src, dst)
                if src in ed.quant_annotations:
                    ed.quant_annotations[dst] = ed.quant_annotations[src]
            else:
                continue
            count += 1
            changed = True
            break
    return (ed.model(model), count) if count else (model, 0)


def remove_dead(model: Model) -> tuple[Model, int]:
    """Drop nodes whose outputs are never used and unused initializers."""
    ed = GraphEditor(model.graph)
    count = 0
    while True:
        used = set(ed.output_names)
        for n in ed.nodes:
            used.update(n.inputs)
        keep = [n for n in ed.nodes if any(o and o in used for o in n.outputs)]
        if len(keep) == len(ed.nodes):
            break
        count += len(ed.nodes) - len(keep)
        ed.nodes = keep
    used = set(ed.output_names)
    for n in ed.nodes:
        used.update(n.inputs)
    for name in list(ed.initializers):
        if name not in used and name not in ed.input_names:
            del ed.initializers[name]
            count += 1
    return (ed.model(model), count) if count else (model, 0)


def cleanup(model: Model) -> tuple[Model, PassReport]:
    """Shape inference, constant folding and simplification to a fixpoint."""
    report = PassReport("cleanup", nodes_before=len(model.graph.nodes))
    for _ in range(len(model.graph.nodes) + 2):
        progress = 0
        model, fold = fold_constants(model)
        report.merge(fold)
        progress += fold.rewrites_applied
        for step in (collapse_reshape_chains, remove_identities, remove_dead):
            model, n = step(model)
            report.rewrites_applied += n
            progress += n
        if not progress:
            break
    # sort for determinism so a second run is a structural no-op
    order = topological_order(model.graph)
    if order != sorted(order):
        ed = GraphEditor(model.graph)
        ed.nodes = [ed.nodes[i] for i in order]
        model = ed.model(model)
    model = infer_shapes(model)
    report.nodes_after = len(model.graph.nodes)
    report.notes = list(dict.fromkeys(report.notes))
    return model, report
