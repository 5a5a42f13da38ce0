"""Static shape and element-type inference.

Shapes may contain symbolic dimensions (strings) or unknown ones (None). Small
integer tensors that only depend on constants or on static shapes are evaluated
on the fly, so shape-computing subgraphs (Shape -> Gather -> Concat -> Reshape)
resolve to concrete target shapes.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Sequence

import numpy as np

from qonnx_kit.errors import QonnxError, ShapeConflictError, ShapeError
from qonnx_kit.executor import CHANNELS_LAST, LAYOUT_ATTR, REGISTRY, ExecutionContext, constant_value, execute_node, reshape_target
from qonnx_kit.ir import DType, Dim, Graph, Model, NodeDef, TensorValue, ValueInfo, topological_order

log = logging.getLogger(__name__)

Shape = tuple  # tuple[Dim, ...]
Info = tuple  # (DType | None, Shape | None)

# ops whose outputs are cheap to evaluate when every input is known
_VALUE_OPS = frozenset({
    "Shape", "Gather", "Unsqueeze", "Squeeze", "Concat", "Reshape", "Flatten",
    "Transpose", "Add", "Sub", "Mul", "Div", "Identity", "Constant",
})
_VALUE_LIMIT = 4096


def broadcast_dims(a: Shape | None, b: Shape | None) -> Shape | None:
    if a is None or b is None:
        return None
    rank = max(len(a), len(b))
    a = (1,) * (rank - len(a)) + tuple(a)
    b = (1,) * (rank - len(b)) + tuple(b)
    out: list[Dim] = []
    for da, db in zip(a, b):
        if da == db:
            out.append(da)
        elif da == 1:
            out.append(db)
        elif db == 1:
            out.append(da)
        elif isinstance(da, int) and isinstance(db, int):
            raise ShapeError(f"shapes {list(a)} and {list(b)} do not broadcast")
        else:
            out.append(da if isinstance(da, int) else db if isinstance(db, int) else None)
    return tuple(out)


def _norm_axis(axis: int, rank: int) -> int:
    return axis + rank if axis < 0 else axis


def _spatial_out(node: NodeDef, hw: Sequence[Dim], kernel: Sequence[int], ceil_mode: bool = False) -> list[Dim]:
    strides = list(node.attr("strides", (1,) * len(kernel)))
    dilations = list(node.attr("dilations", (1,) * len(kernel)))
    auto_pad = node.attr("auto_pad", "NOTSET")
    pads = list(node.attr("pads", (0,) * (2 * len(kernel))))
    out: list[Dim] = []
    for i, size in enumerate(hw):
        if not isinstance(size, int):
            out.append(None)
            continue
        k, s, d = kernel[i], strides[i], dilations[i]
        if auto_pad in ("SAME_UPPER", "SAME_LOWER"):
            out.append(-(-size // s))
            continue
        pb, pe = (0, 0) if auto_pad == "VALID" else (pads[i], pads[i + len(kernel)])
        num = size + pb + pe - ((k - 1) * d + 1)
        o = (-(-num // s) if ceil_mode else num // s) + 1
        if ceil_mode and (o - 1) * s >= size + pb:
            o -= 1
        out.append(o)
    return out


class _Inferencer:
    def __init__(self, graph: Graph):
        self.graph = graph
        self.info: dict[str, Info] = {}
        self.values: dict[str, np.ndarray] = {}
        for name, t in graph.initializers.items():
            self.info[name] = (t.elem_type, t.shape)
            if t.size <= _VALUE_LIMIT:
                self.values[name] = t.data
        for vi in graph.inputs:
            if vi.name not in graph.initializers:
                self.info[vi.name] = (vi.elem_type, vi.shape)

    def shape(self, name: str) -> Shape | None:
        return self.info.get(name, (None, None))[1] if name else None

    def dtype(self, name: str) -> DType | None:
        return self.info.get(name, (None, None))[0] if name else None

    def value(self, name: str) -> np.ndarray | None:
        return self.values.get(name) if name else None

    def run(self, node: NodeDef) -> list[Info] | None:
        rule = _RULES.get(node.op_type) if node.domain in ("", "ai.onnx") or node.is_qonnx else None
        if rule is None:
            return None
        return rule(self, node)

    def try_values(self, node: NodeDef) -> None:
        if node.op_type not in _VALUE_OPS or REGISTRY.lookup(node) is None:
            return
        if node.op_type == "Shape":
            s = self.shape(node.inputs[0])
            if s is None or not all(isinstance(d, int) for d in s):
                return
            start, end = node.attr("start", 0), node.attr("end")
            self.values[node.outputs[0]] = np.asarray(s[start:end], dtype=np.int64)
            return
        ins = [n for n in node.inputs if n]
        if node.op_type == "Constant":
            value = constant_value(node)
            if value is not None and value.size <= _VALUE_LIMIT:
                self.values[node.outputs[0]] = value.data
            return
        if not all(n in self.values for n in ins):
            return
        ctx = ExecutionContext(None, {n: TensorValue(self.values[n]) for n in ins})  # type: ignore[arg-type]
        try:
            outs = execute_node(node, ctx)
        except QonnxError:
            return
        for name, t in zip(node.outputs, outs):
            if t.size <= _VALUE_LIMIT:
                self.values[name] = t.data


def _same(inf: _Inferencer, node: NodeDef) -> list[Info]:
    return [(inf.dtype(node.inputs[0]), inf.shape(node.inputs[0]))]


def _broadcasting(float_out: bool = False) -> Callable:
    def rule(inf: _Inferencer, node: NodeDef) -> list[Info]:
        shape = inf.shape(node.inputs[0])
        for name in node.inputs[1:]:
            if name:
                shape = broadcast_dims(shape, inf.shape(name))
        dtype = DType.FLOAT32 if float_out else inf.dtype(node.inputs[0])
        return [(dtype, shape)]

    return rule


def _clip(inf, node):
    return _same(inf, node)


def _matmul(inf, node):
    a, b = inf.shape(node.inputs[0]), inf.shape(node.inputs[1])
    if a is None or b is None:
        return [(DType.FLOAT32, None)]
    a1, b1 = len(a) == 1, len(b) == 1
    a = (1,) + tuple(a) if a1 else tuple(a)
    b = tuple(b) + (1,) if b1 else tuple(b)
    k_a, k_b = a[-1], b[-2]
    if isinstance(k_a, int) and isinstance(k_b, int) and k_a != k_b:
        raise ShapeError(f"MatMul {node.name!r}: inner dimensions {k_a} and {k_b} differ")
    batch = broadcast_dims(a[:-2], b[:-2])
    out = tuple(batch) + (a[-2], b[-1])
    if a1:
        out = out[:-2] + out[-1:]
    if b1:
        out = out[:-1]
    return [(DType.FLOAT32, out)]


def _gemm(inf, node):
    a, b = inf.shape(node.inputs[0]), inf.shape(node.inputs[1])
    if a is None or b is None:
        return [(DType.FLOAT32, None)]
    m = a[1] if node.attr("transA", 0) else a[0]
    n = b[0] if node.attr("transB", 0) else b[1]
    return [(DType.FLOAT32, (m, n))]


def _layout_split(node: NodeDef, shape: Shape):
    """(batch, channels, spatial dims) of a 4D tensor in the node's layout."""
    if node.attr(LAYOUT_ATTR, "NCHW") == CHANNELS_LAST:
        return shape[0], shape[-1], list(shape[1:-1])
    return shape[0], shape[1], list(shape[2:])


def _layout_join(node: NodeDef, n: Dim, c: Dim, hw: list) -> Shape:
    if node.attr(LAYOUT_ATTR, "NCHW") == CHANNELS_LAST:
        return (n, *hw, c)
    return (n, c, *hw)


def _conv(inf, node):
    x, w = inf.shape(node.inputs[0]), inf.shape(node.inputs[1])
    if x is None or w is None:
        return [(DType.FLOAT32, None)]
    n, _, hw = _layout_split(node, x)
    kernel = list(node.attr("kernel_shape", w[2:]))
    if not all(isinstance(k, int) for k in kernel):
        return [(DType.FLOAT32, None)]
    return [(DType.FLOAT32, _layout_join(node, n, w[0], _spatial_out(node, hw, kernel)))]


def _pool(inf, node):
    x = inf.shape(node.inputs[0])
    if x is None:
        return [(inf.dtype(node.inputs[0]), None)]
    n, c, hw = _layout_split(node, x)
    out = _spatial_out(node, hw, list(node.attr("kernel_shape")), bool(node.attr("ceil_mode", 0)))
    return [(inf.dtype(node.inputs[0]), _layout_join(node, n, c, out))]


def _global_pool(inf, node):
    x = inf.shape(node.inputs[0])
    if x is None:
        return [(inf.dtype(node.inputs[0]), None)]
    n, c, hw = _layout_split(node, x)
    return [(inf.dtype(node.inputs[0]), _layout_join(node, n, c, [1] * len(hw)))]


def _reshape(inf, node):
    x, target = inf.shape(node.inputs[0]), inf.value(node.inputs[1])
    dtype = inf.dtype(node.inputs[0])
    if target is None:
        tshape = inf.shape(node.inputs[1])
        rank = tshape[0] if tshape is not None and len(tshape) == 1 and isinstance(tshape[0], int) else None
        return [(dtype, None if rank is None else (None,) * rank)]
    target = [int(v) for v in target.reshape(-1)]
    if x is None:
        if any(t in (0, -1) for t in target):
            return [(dtype, tuple(t if t > 0 else None for t in target))]
        return [(dtype, tuple(target))]
    return [(dtype, tuple(reshape_target(x, target, bool(node.attr("allowzero", 0)))))]


def _transpose(inf, node):
    x = inf.shape(node.inputs[0])
    if x is None:
        return [(inf.dtype(node.inputs[0]), None)]
    perm = node.attr("perm", tuple(reversed(range(len(x)))))
    return [(inf.dtype(node.inputs[0]), tuple(x[p] for p in perm))]


def _flatten(inf, node):
    x = inf.shape(node.inputs[0])
    if x is None:
        return [(inf.dtype(node.inputs[0]), None)]
    axis = _norm_axis(int(node.attr("axis", 1)), len(x))

    def prod(dims):
        if all(isinstance(d, int) for d in dims):
            return math.prod(dims)
        symbolic = [d for d in dims if d != 1]
        return symbolic[0] if len(symbolic) == 1 and isinstance(symbolic[0], str) else None

    return [(inf.dtype(node.inputs[0]), (prod(x[:axis]), prod(x[axis:])))]


def _axes_of(inf, node) -> list[int] | None:
    if len(node.inputs) > 1 and node.inputs[1]:
        v = inf.value(node.inputs[1])
        return None if v is None else [int(a) for a in v.reshape(-1)]
    a = node.attr("axes")
    return None if a is None else list(a)


def _squeeze(inf, node):
    x, axes = inf.shape(node.inputs[0]), _axes_of(inf, node)
    dtype = inf.dtype(node.inputs[0])
    if x is None:
        return [(dtype, None)]
    if axes is None:
        if len(node.inputs) > 1 and node.inputs[1]:
            return [(dtype, None)]
        if not all(isinstance(d, int) for d in x):
            return [(dtype, None)]
        return [(dtype, tuple(d for d in x if d != 1))]
    axes = {_norm_axis(a, len(x)) for a in axes}
    return [(dtype, tuple(d for i, d in enumerate(x) if i not in axes))]


def _unsqueeze(inf, node):
    x, axes = inf.shape(node.inputs[0]), _axes_of(inf, node)
    dtype = inf.dtype(node.inputs[0])
    if x is None or axes is None:
        return [(dtype, None)]
    rank = len(x) + len(axes)
    out = list(x)
    for a in sorted(_norm_axis(a, rank) for a in axes):
        out.insert(a, 1)
    return [(dtype, tuple(out))]


def _concat(inf, node):
    shapes = [inf.shape(n) for n in node.inputs if n]
    dtype = inf.dtype(node.inputs[0])
    if any(s is None for s in shapes):
        return [(dtype, None)]
    axis = _norm_axis(int(node.attr("axis")), len(shapes[0]))
    out = list(shapes[0])
    sizes = [s[axis] for s in shapes]
    out[axis] = sum(sizes) if all(isinstance(d, int) for d in sizes) else None
    return [(dtype, tuple(out))]


def _gather(inf, node):
    x, idx = inf.shape(node.inputs[0]), inf.shape(node.inputs[1])
    dtype = inf.dtype(node.inputs[0])
    if x is None or idx is None:
        return [(dtype, None)]
    axis = _norm_axis(int(node.attr("axis", 0)), len(x))
    return [(dtype, tuple(x[:axis]) + tuple(idx) + tuple(x[axis + 1 :]))]


def _shape(inf, node):
    x = inf.shape(node.inputs[0])
    if x is None:
        return [(DType.INT64, (None,))]
    start, end = node.attr("start", 0), node.attr("end")
    return [(DType.INT64, (len(range(len(x))[start:end]),))]


def _pad(inf, node):
    x = inf.shape(node.inputs[0])
    dtype = inf.dtype(node.inputs[0])
    if x is None:
        return [(dtype, None)]
    if len(node.inputs) > 1 and node.inputs[1]:
        pads = inf.value(node.inputs[1])
        if pads is None:
            return [(dtype, (None,) * len(x))]
        pads = [int(p) for p in pads.reshape(-1)]
    else:
        pads = list(node.attr("pads"))
    axes = list(range(len(x)))
    if len(node.inputs) > 3 and node.inputs[3]:
        v = inf.value(node.inputs[3])
        if v is None:
            return [(dtype, (None,) * len(x))]
        axes = [_norm_axis(int(a), len(x)) for a in v.reshape(-1)]
    out = list(x)
    k = len(axes)
    for i, a in enumerate(axes):
        if isinstance(out[a], int):
            out[a] = out[a] + pads[i] + pads[i + k]
        else:
            out[a] = None
    return [(dtype, tuple(out))]


def _quantize_linear(inf, node):
    zp = node.input(2)
    dtype = inf.dtype(zp) if zp else DType.UINT8
    return [(dtype, inf.shape(node.inputs[0]))]


def _dequantize_linear(inf, node):
    return [(DType.FLOAT32, inf.shape(node.inputs[0]))]


def _constant(inf, node):
    value = constant_value(node)
    return [(None, None)] if value is None else [(value.elem_type, value.shape)]


def _batchnorm(inf, node):
    return [(DType.FLOAT32, inf.shape(node.inputs[0]))]


_RULES: dict[str, Callable[[_Inferencer, NodeDef], list[Info]]] = {
    "Quant": _broadcasting(float_out=True),
    "BipolarQuant": _broadcasting(float_out=True),
    "Trunc": _broadcasting(float_out=True),
    "Add": _broadcasting(),
    "Sub": _broadcasting(),
    "Mul": _broadcasting(),
    "Div": _broadcasting(),
    "Relu": _same,
    "Sign": _same,
    "Identity": _same,
    "Clip": _clip,
    "MatMul": _matmul,
    "Gemm": _gemm,
    "Conv": _conv,
    "MaxPool": _pool,
    "AveragePool": _pool,
    "GlobalAveragePool": _global_pool,
    "BatchNormalization": _batchnorm,
    "Reshape": _reshape,
    "Transpose": _transpose,
    "Flatten": _flatten,
    "Squeeze": _squeeze,
    "Unsqueeze": _unsqueeze,
    "Concat": _concat,
    "Gather": _gather,
    "Shape": _shape,
    "Constant": _constant,
    "Pad": _pad,
    "QuantizeLinear": _quantize_linear,
    "DequantizeLinear": _dequantize_linear,
}


def _merge(name: str, old: ValueInfo | None, dtype: DType | None, shape: Shape | None) -> ValueInfo:
    if old is None:
        return ValueInfo(name, dtype, shape)
    if old.elem_type is not None and dtype is not None and old.elem_type != dtype:
        raise ShapeConflictError(
            f"{name!r}: annotated {old.elem_type.value}, inferred {dtype.value}"
        )
    if old.shape is not None and shape is not None:
        if len(old.shape) != len(shape):
            raise ShapeConflictError(f"{name!r}: annotated shape {list(old.shape)}, inferred {list(shape)}")
        merged = []
        for a, b in zip(old.shape, shape):
            if isinstance(a, int) and isinstance(b, int) and a != b:
                raise ShapeConflictError(
                    f"{name!r}: annotated shape {list(old.shape)}, inferred {list(shape)}"
                )
            merged.append(b if isinstance(b, int) else a if a is not None else b)
        shape = tuple(merged)
    elif shape is None:
        shape = old.shape
    return ValueInfo(name, dtype or old.elem_type, shape)


def infer_shapes(model: Model) -> Model:
    """Annotate every intermediate tensor with its inferred type and shape."""
    g = model.graph
    inf = _Inferencer(g)
    existing = {vi.name: vi for vi in g.value_info}
    declared_out = {vi.name: vi for vi in g.outputs}
    for i in topological_order(g):
        node = g.nodes[i]
        results = inf.run(node)
        if results is None:
            log.debug("no shape rule for %s::%s", node.domain, node.op_type)
            results = [(None, None)] * len(node.outputs)
        for name, (dtype, shape) in zip(node.outputs, results):
            if not name:
                continue
            old = existing.get(name) or declared_out.get(name)
            vi = _merge(name, old, dtype, shape)
            inf.info[name] = (vi.elem_type, vi.shape)
        inf.try_values(node)

    value_info = []
    for node in (g.nodes[i] for i in topological_order(g)):
        for name in node.outputs:
            if name and name not in declared_out and name in inf.info:
                dtype, shape = inf.info[name]
                if dtype is not None or shape is not None:
                    value_info.append(ValueInfo(name, dtype, shape))
    outputs = []
    for vi in g.outputs:
        dtype, shape = inf.info.get(vi.name, (None, None))
        outputs.append(_merge(vi.name, vi, dtype, shape))
    graph = Graph(g.nodes, g.inputs, outputs, g.initializers, value_info, g.name, g.quant_annotations)
    return model.with_graph(graph)


def known_values(model: Model) -> dict[str, np.ndarray]:
    """Small constant-evaluable tensors discovered during inference."""
    g = model.graph
    inf = _Inferencer(g)
    for vi in g.value_info:
        inf.info.setdefault(vi.name, (vi.elem_type, vi.shape))
    for i in topological_order(g):
        node = g.nodes[i]
        results = inf.run(node)
        if results is not None:
            for name, info in zip(node.outputs, results):
                if name and name not in inf.info:
                    inf.info[name] = info
        inf.try_values(node)
    return inf.values
