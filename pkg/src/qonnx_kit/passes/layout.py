"""Channels-first (NCHW) to channels-last (NHWC) conversion.

Layout-sensitive ops keep their standard op_type and gain a
``data_layout="NHWC"`` attribute; the executor runs them on channels-last
data. Each converted op is first wrapped in a Transpose pair, then Transposes
are pushed downstream through layout-agnostic ops and adjacent inverse pairs
cancel. Per-tensor layout tags are recorded in the model metadata under
:data:`LAYOUT_METADATA_KEY`.
"""

from __future__ import annotations

import enum
import json
import logging

import numpy as np

from qonnx_kit.errors import RankError
from qonnx_kit.executor import CHANNELS_LAST, LAYOUT_ATTR
from qonnx_kit.ir import QONNX_DOMAIN, Model, NodeDef, TensorValue, topological_order
from qonnx_kit.passes.base import GraphEditor, PassReport
from qonnx_kit.passes.cleanup import remove_dead, remove_identities
from qonnx_kit.passes.shapes import infer_shapes

log = logging.getLogger(__name__)

LAYOUT_METADATA_KEY = "qonnx_kit.layout"
LAYOUT_OPS = frozenset({"Conv", "MaxPool", "AveragePool", "BatchNormalization", "GlobalAveragePool"})
TO_NHWC = (0, 2, 3, 1)
TO_NCHW = (0, 3, 1, 2)

_STD = ("", "ai.onnx")
# standard ops that commute with a Transpose once their side inputs are remapped
_AGNOSTIC = frozenset({"Relu", "Sign", "Identity", "Clip", "Add", "Sub", "Mul", "Div", "Pad",
                       "QuantizeLinear", "DequantizeLinear"})
_AGNOSTIC_QONNX = frozenset({"Quant", "BipolarQuant", "Trunc"})


class LayoutTag(str, enum.Enum):
    CHANNELS_FIRST = "channels_first"
    CHANNELS_LAST = "channels_last"
    NEUTRAL = "rank_lt_3_neutral"


def _is_transpose(node: NodeDef) -> bool:
    return node.op_type == "Transpose" and node.domain in _STD


def _perm(node: NodeDef) -> tuple[int, ...]:
    return tuple(node.attr("perm", (3, 2, 1, 0)))


def _invert(perm) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def _is_agnostic(node: NodeDef) -> bool:
    if node.domain in _STD:
        return node.op_type in _AGNOSTIC
    return node.domain == QONNX_DOMAIN and node.op_type in _AGNOSTIC_QONNX


class _Converter:
    def __init__(self, model: Model):
        self.model = infer_shapes(model)
        self.typed = self.model.graph
        self.ed = GraphEditor(self.model.graph)
        self.rewrites = 0

    def rank(self, name: str) -> int | None:
        shape = self.typed.shape_of(name)
        if shape is None and name in self.ed.initializers:
            return self.ed.initializers[name].data.ndim
        return None if shape is None else len(shape)

    # ------------------------------------------------------------ checks

    def check_ranks(self) -> None:
        g = self.typed
        for vi in (*g.inputs, *g.outputs, *g.value_info):
            if vi.shape is not None and len(vi.shape) > 4:
                raise RankError(f"tensor {vi.name!r} has rank {len(vi.shape)}; only rank <= 4 is supported")
        for node in g.nodes:
            if node.op_type in LAYOUT_OPS and node.domain in _STD and node.attr(LAYOUT_ATTR) != CHANNELS_LAST:
                r = self.rank(node.inputs[0])
                if r != 4:
                    raise RankError(
                        f"{node.op_type} {node.name!r}: layout conversion needs 4D data, got rank {r}"
                    )

    # ------------------------------------------------------------ wrapping

    def wrap_layout_ops(self) -> None:
        ed = self.ed
        i = 0
        while i < len(ed.nodes):
            node = ed.nodes[i]
            if not (node.op_type in LAYOUT_OPS and node.domain in _STD
                    and node.attr(LAYOUT_ATTR) != CHANNELS_LAST):
                i += 1
                continue
            x, y = node.inputs[0], node.outputs[0]
            x_nhwc = ed.fresh(f"{x}_nhwc")
            t_in = NodeDef("Transpose", (x,), (x_nhwc,), {"perm": TO_NHWC}, name=ed.fresh(f"{node.name or node.op_type}_to_nhwc"))
            if y in ed.output_names:
                y_nhwc = ed.fresh(f"{y}_nhwc")
                t_out = NodeDef("Transpose", (y_nhwc,), (y,), {"perm": TO_NCHW},
                                name=ed.fresh(f"{node.name or node.op_type}_to_nchw"))
                new_out = y_nhwc
            else:
                y_nchw = ed.fresh(f"{y}_nchw")
                ed.replace_uses(y, y_nchw)
                t_out = NodeDef("Transpose", (y,), (y_nchw,), {"perm": TO_NCHW},
                                name=ed.fresh(f"{node.name or node.op_type}_to_nchw"))
                new_out = y
            converted = NodeDef(
                node.op_type, (x_nhwc, *node.inputs[1:]), (new_out, *node.outputs[1:]),
                {**node.attributes, LAYOUT_ATTR: CHANNELS_LAST}, node.domain, node.name,
            )
            ed.nodes[i : i + 1] = [t_in, converted, t_out]
            self.rewrites += 1
            i += 3

    # ------------------------------------------------------------ transpose motion

    def _cancel(self) -> bool:
        ed = self.ed
        for i, t1 in enumerate(ed.nodes):
            if not _is_transpose(t1):
                continue
            p = ed.producer(t1.inputs[0])
            if p is None or not _is_transpose(ed.nodes[p]):
                continue
            t0 = ed.nodes[p]
            p0, p1 = _perm(t0), _perm(t1)
            if len(p0) != len(p1):
                continue
            composed = tuple(p0[k] for k in p1)
            src, out = t0.inputs[0], t1.outputs[0]
            if composed == tuple(range(len(composed))):
                if out in ed.output_names:
                    ed.nodes[i] = NodeDef("Identity", (src,), (out,), name=t1.name)
                else:
                    del ed.nodes[i]
                    ed.replace_uses(out, src)
            else:
                ed.nodes[i] = NodeDef("Transpose", (src,), (out,), {"perm": composed}, name=t1.name)
            if not ed.is_used(t0.outputs[0]):
                ed.nodes.remove(t0)
            self.rewrites += 1
            return True
        return False

    def _remap_side_input(self, name: str, perm, consumer_idx: int):
        """Side input of an agnostic op after moving a Transpose(perm) below it.

        Returns the replacement name, or None when the input cannot follow.
        """
        ed = self.ed
        if not name:
            return name
        if name in ed.initializers:
            arr = ed.initializers[name].data
            if arr.ndim > 4:
                return None
            if all(d == 1 for d in arr.shape):
                return name
            arr4 = arr.reshape((1,) * (4 - arr.ndim) + arr.shape)
            new = ed.fresh(f"{name}_nhwc" if tuple(perm) == TO_NCHW else f"{name}_perm")
            ed.initializers[new] = TensorValue(np.transpose(arr4, _invert(perm)).copy())
            return new
        shape = self.typed.shape_of(name)
        if shape is not None and all(d == 1 for d in shape):
            return name
        p = ed.producer(name)
        if p is not None and _is_transpose(ed.nodes[p]) and _perm(ed.nodes[p]) == tuple(perm):
            if ed.consumers(name) == [consumer_idx] and name not in ed.output_names:
                return ed.nodes[p].inputs[0]
        return None

    def _sink_target(self, t_idx: int):
        """Consumer index a Transpose could move below, or None."""
        ed = self.ed
        t = ed.nodes[t_idx]
        o = t.outputs[0]
        if o in ed.output_names or len(_perm(t)) != 4:
            return None
        users = ed.consumers(o)
        if len(users) != 1:
            return None
        e = ed.nodes[users[0]]
        if not _is_agnostic(e) or len(e.outputs) != 1 or e.inputs[0] != o:
            return None
        return users[0]

    def _sink(self) -> bool:
        ed = self.ed
        for t_idx, t in enumerate(ed.nodes):
            if not _is_transpose(t):
                continue
            e_idx = self._sink_target(t_idx)
            if e_idx is None:
                continue
            e = ed.nodes[e_idx]
            perm = _perm(t)
            snapshot = (list(ed.nodes), dict(ed.initializers))
            new_inputs = [t.inputs[0]]
            ok = True
            for pos, name in enumerate(e.inputs[1:], start=1):
                if name == t.outputs[0]:
                    new_inputs.append(t.inputs[0])
                    continue
                if e.op_type == "Pad" and pos == 1:
                    new_inputs.append(name)
                    continue
                if e.op_type == "Pad" and pos == 3 and name:
                    ok = False
                    break
                if e.op_type in ("QuantizeLinear", "DequantizeLinear"):
                    new_inputs.append(name)
                    continue
                repl = self._remap_side_input(name, perm, e_idx)
                if repl is None:
                    ok = False
                    break
                new_inputs.append(repl)
            attrs = dict(e.attributes)
            if ok and e.op_type == "Pad":
                ok = self._remap_pads(e, perm, new_inputs, attrs)
            if ok and e.op_type in ("QuantizeLinear", "DequantizeLinear"):
                axis = int(attrs.get("axis", 1))
                attrs["axis"] = perm[axis + 4 if axis < 0 else axis]
            if not ok:
                ed.nodes, ed.initializers = snapshot
                continue
            out = e.outputs[0]
            if out in ed.output_names:
                moved = ed.fresh(f"{out}_t")
                new_e = NodeDef(e.op_type, tuple(new_inputs), (moved,), attrs, e.domain, e.name)
                new_t = NodeDef("Transpose", (moved,), (out,), {"perm": perm}, name=t.name)
            else:
                moved = ed.fresh(f"{out}_nchw" if tuple(perm) == TO_NCHW else f"{out}_t")
                ed.replace_uses(out, moved)
                new_e = NodeDef(e.op_type, tuple(new_inputs), (out,), attrs, e.domain, e.name)
                new_t = NodeDef("Transpose", (out,), (moved,), {"perm": perm}, name=t.name)
            ed.nodes[e_idx : e_idx + 1] = [new_e, new_t]
            # drop transposes that no longer feed anything
            ed.nodes = [n for n in ed.nodes if not (_is_transpose(n) and not ed.is_used(n.outputs[0]))]
            self.rewrites += 1
            return True
        return False

    def _remap_pads(self, e: NodeDef, perm, new_inputs: list, attrs: dict) -> bool:
        ed = self.ed
        if len(e.inputs) > 1 and e.inputs[1]:
            t = ed.initializers.get(e.inputs[1])
            if t is None or t.size != 8:
                return False
            pads = [int(v) for v in t.data.reshape(-1)]
        elif "pads" in attrs:
            pads = list(attrs["pads"])
            if len(pads) != 8:
                return False
        else:
            return False
        new = [0] * 8
        for i in range(4):
            new[perm[i]] = pads[i]
            new[perm[i] + 4] = pads[i + 4]
        if len(e.inputs) > 1 and e.inputs[1]:
            name = ed.fresh(f"{e.inputs[1]}_perm")
            ed.initializers[name] = TensorValue(np.asarray(new, dtype=np.int64))
            new_inputs[1] = name
        else:
            attrs["pads"] = tuple(new)
        return True

    def _clone(self) -> bool:
        """Split a multi-consumer Transpose when every consumer could absorb it."""
        ed = self.ed
        for i, t in enumerate(ed.nodes):
            if not _is_transpose(t) or len(_perm(t)) != 4:
                continue
            o = t.outputs[0]
            users = ed.consumers(o)
            if len(users) < 2 or o in ed.output_names:
                continue
            if not all(_is_transpose(ed.nodes[u]) or (_is_agnostic(ed.nodes[u]) and ed.nodes[u].inputs[0] == o
                                                      and o not in ed.nodes[u].inputs[1:])
                       for u in users):
                continue
            clones = []
            for u in users[1:]:
                name = ed.fresh(f"{o}_c")
                clones.append(NodeDef("Transpose", t.inputs, (name,), t.attributes, name=ed.fresh(f"{t.name}_c")))
                n = ed.nodes[u]
                ed.nodes[u] = NodeDef(n.op_type, tuple(name if x == o else x for x in n.inputs), n.outputs,
                                      n.attributes, n.domain, n.name)
            ed.nodes[i + 1 : i + 1] = clones
            return True
        return False

    def minimize_transposes(self) -> None:
        bound = 4 * len(self.ed.nodes) + 16
        for _ in range(bound):
            if self._cancel() or self._sink() or self._clone():
                continue
            break
        else:
            log.warning("transpose minimization stopped at the iteration bound")

    # ------------------------------------------------------------ graph boundary

    def _entry_path(self, name: str) -> tuple[list[int], int] | None:
        """Agnostic single-consumer ops from `name` up to an NHWC Transpose.

        Returns (path node indices, transpose index), or None when the walk
        hits anything else.
        """
        ed = self.ed
        path = []
        for _ in range(len(ed.nodes)):
            if name in ed.output_names:
                return None
            users = ed.consumers(name)
            if len(users) != 1:
                return None
            node = ed.nodes[users[0]]
            if _is_transpose(node) and _perm(node) == TO_NHWC:
                return path, users[0]
            if (not _is_agnostic(node) or node.op_type in ("Pad", "QuantizeLinear", "DequantizeLinear")
                    or len(node.outputs) != 1 or node.inputs[0] != name or name in node.inputs[1:]):
                return None
            path.append(users[0])
            name = node.outputs[0]
        return None

    def _hoist_entry(self, name: str) -> bool:
        """Move the entry Transpose of graph input `name` up to the input itself."""
        ed = self.ed
        found = self._entry_path(name)
        if found is None or not found[0]:
            return False
        path, t_idx = found
        snapshot = (list(ed.nodes), dict(ed.initializers))
        for i in path:
            n = ed.nodes[i]
            side = [self._remap_side_input(x, TO_NCHW, i) for x in n.inputs[1:]]
            if any(x is None for x in side):
                ed.nodes, ed.initializers = snapshot
                return False
            ed.nodes[i] = NodeDef(n.op_type, (n.inputs[0], *side), n.outputs, n.attributes, n.domain, n.name)
        t = ed.nodes[t_idx]
        ed.replace_uses(t.outputs[0], t.inputs[0])
        head = ed.nodes[path[0]]
        moved = ed.fresh(f"{name}_nhwc")
        ed.nodes[path[0]] = NodeDef(head.op_type, (moved, *head.inputs[1:]), head.outputs, head.attributes,
                                    head.domain, head.name)
        del ed.nodes[t_idx]
        ed.nodes.insert(0, NodeDef("Transpose", (name,), (moved,), {"perm": TO_NHWC}, name=t.name))
        return True

    def flip_io(self) -> int:
        ed = self.ed
        changed = 0
        for k, vi in enumerate(ed.inputs):
            if vi.name in ed.initializers or vi.shape is None or len(vi.shape) != 4:
                continue
            self._hoist_entry(vi.name)
            users = ed.consumers(vi.name)
            if not users or not all(_is_transpose(ed.nodes[u]) and _perm(ed.nodes[u]) == TO_NHWC for u in users):
                continue
            for t in [ed.nodes[u] for u in users]:
                ed.nodes.remove(t)
                ed.replace_uses(t.outputs[0], vi.name)
            ed.inputs[k] = type(vi)(vi.name, vi.elem_type, tuple(vi.shape[p] for p in TO_NHWC))
            changed += 1
        for k, vi in enumerate(ed.outputs):
            p = ed.producer(vi.name)
            if p is None or not _is_transpose(ed.nodes[p]) or _perm(ed.nodes[p]) != TO_NCHW:
                continue
            src = ed.nodes[p].inputs[0]
            q = ed.producer(src)
            if q is None or src in ed.output_names or ed.consumers(src) != [p]:
                continue
            del ed.nodes[p]
            q = ed.producer(src)
            n = ed.nodes[q]
            ed.nodes[q] = NodeDef(n.op_type, n.inputs, tuple(vi.name if o == src else o for o in n.outputs),
                                  n.attributes, n.domain, n.name)
            shape = None if vi.shape is None else tuple(vi.shape[i] for i in TO_NHWC)
            ed.outputs[k] = type(vi)(vi.name, vi.elem_type, shape)
            changed += 1
        return changed


def layout_tags(model: Model) -> dict[str, LayoutTag]:
    """Dataflow layout tag of every activation tensor."""
    g = model.graph
    tags: dict[str, LayoutTag] = {}

    def rank_tag(name: str, default: LayoutTag) -> LayoutTag:
        shape = g.shape_of(name)
        if shape is not None and len(shape) < 3:
            return LayoutTag.NEUTRAL
        return default

    flipped = set(json.loads(model.metadata.get(LAYOUT_METADATA_KEY, "{}")).get("channels_last_io", []))
    for vi in g.runtime_inputs:
        tags[vi.name] = rank_tag(vi.name, LayoutTag.CHANNELS_LAST if vi.name in flipped else LayoutTag.CHANNELS_FIRST)
    for i in topological_order(g):
        node = g.nodes[i]
        src = next((tags[n] for n in node.inputs if n in tags and tags[n] is not LayoutTag.NEUTRAL),
                   LayoutTag.CHANNELS_FIRST)
        if _is_transpose(node) and _perm(node) == TO_NHWC and src is LayoutTag.CHANNELS_FIRST:
            tag = LayoutTag.CHANNELS_LAST
        elif _is_transpose(node) and _perm(node) == TO_NCHW and src is LayoutTag.CHANNELS_LAST:
            tag = LayoutTag.CHANNELS_FIRST
        elif node.op_type in LAYOUT_OPS and node.domain in _STD:
            tag = LayoutTag.CHANNELS_LAST if node.attr(LAYOUT_ATTR) == CHANNELS_LAST else LayoutTag.CHANNELS_FIRST
        elif _is_agnostic(node):
            tag = src
        else:
            tag = LayoutTag.CHANNELS_FIRST
        for o in node.outputs:
            if o:
                tags[o] = rank_tag(o, tag)
    return tags


def to_channels_last(model: Model, change_io_layout: bool = False) -> tuple[Model, PassReport]:
    """Convert 2D-convolutional parts of the model to channels-last.

    By default the declared graph inputs and outputs keep their channels-first
    shapes and boundary Transposes are inserted; with ``change_io_layout`` the
    4D graph inputs/outputs are declared channels-last instead.
    """
    report = PassReport("to_channels_last", nodes_before=len(model.graph.nodes))
    conv = _Converter(model)
    conv.check_ranks()
    conv.wrap_layout_ops()
    conv.minimize_transposes()
    flipped_names: list[str] = []
    if change_io_layout:
        before = {vi.name: vi.shape for vi in (*conv.ed.inputs, *conv.ed.outputs)}
        conv.rewrites += conv.flip_io()
        flipped_names = [vi.name for vi in (*conv.ed.inputs, *conv.ed.outputs) if before.get(vi.name) != vi.shape]
    if conv.rewrites == 0:
        report.nodes_after = report.nodes_before
        return model, report

    ed = conv.ed
    ed.value_info = []
    out = ed.model(conv.model)
    out, _ = remove_identities(out)
    out, _ = remove_dead(out)
    out = infer_shapes(out)
    meta = json.loads(model.metadata.get(LAYOUT_METADATA_KEY, "{}"))
    io = sorted(set(meta.get("channels_last_io", [])) | set(flipped_names))
    provisional = Model(out.graph, out.opset_imports, out.ir_version,
                        {**out.metadata, LAYOUT_METADATA_KEY: json.dumps({"channels_last_io": io})},
                        out.producer_name)
    tags = layout_tags(provisional)
    record = {"channels_last_io": io, "tensors": {k: v.value for k, v in sorted(tags.items())}}
    out = Model(out.graph, out.opset_imports, out.ir_version,
                {**out.metadata, LAYOUT_METADATA_KEY: json.dumps(record, sort_keys=True)}, out.producer_name)
    report.rewrites_applied = conv.rewrites
    report.nodes_after = len(out.graph.nodes)
    transposes = sum(1 for n in out.graph.nodes if _is_transpose(n))
    report.notes.append(f"{transposes} Transpose node(s) remain")
    return out, report
