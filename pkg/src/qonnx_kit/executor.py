"""Node-by-node reference interpreter.

Correctness over speed: convolutions and matrix products accumulate in
float64 with numpy's single-threaded einsum (never BLAS), so the result bits do
not depend on the thread count or the linked BLAS library.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from qonnx_kit import kernels
from qonnx_kit.errors import (
    ArgumentError,
    QonnxError,
    ShapeError,
    UnboundInputError,
    UnsupportedError,
    UnsupportedOpError,
)
from qonnx_kit.ir import DEFAULT_DOMAINS, QONNX_DOMAIN, Model, NodeDef, RawAttribute, TensorValue, topological_order

log = logging.getLogger(__name__)

Kernel = Callable[[NodeDef, list], list]

# node attribute marking an op that consumes and produces channels-last data
LAYOUT_ATTR = "data_layout"
CHANNELS_LAST = "NHWC"


@dataclass
class OpRegistry:
    kernels: dict[tuple[str, str], Kernel] = field(default_factory=dict)

    def register(self, op_type: str, domain: str = "") -> Callable[[Kernel], Kernel]:
        def deco(fn: Kernel) -> Kernel:
            self.kernels[(domain, op_type)] = fn
            return fn

        return deco

    def lookup(self, node: NodeDef) -> Kernel | None:
        domain = "" if node.domain in DEFAULT_DOMAINS else node.domain
        return self.kernels.get((domain, node.op_type))

    def supports(self, node: NodeDef) -> bool:
        return self.lookup(node) is not None


REGISTRY = OpRegistry()
op = REGISTRY.register


@dataclass
class ExecutionContext:
    model: Model
    bindings: dict[str, TensorValue] = field(default_factory=dict)


# ---------------------------------------------------------------- helpers


def _f64(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _same_float(result: np.ndarray, like: np.ndarray) -> np.ndarray:
    return result.astype(np.float32) if like.dtype == np.float32 else result.astype(like.dtype)


def _ints(a: np.ndarray | None) -> list[int] | None:
    return None if a is None else [int(v) for v in np.asarray(a).reshape(-1)]


def _channels_last(node: NodeDef) -> bool:
    return node.attr(LAYOUT_ATTR, "NCHW") == CHANNELS_LAST


def _to_nchw(x: np.ndarray) -> np.ndarray:
    return np.transpose(x, (0, 3, 1, 2))


def _to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.transpose(x, (0, 2, 3, 1))


def layout_wrapped(fn: Kernel) -> Kernel:
    """Run a channels-first kernel on channels-last data when the node says so."""

    def run(node: NodeDef, ins: list) -> list:
        if not _channels_last(node):
            return fn(node, ins)
        x = ins[0]
        if x.ndim != 4:
            raise ShapeError(f"{node.op_type}: channels-last data must be 4D, got {x.shape}")
        outs = fn(node, [_to_nchw(x), *ins[1:]])
        return [_to_nhwc(outs[0]), *outs[1:]]

    return run


# ---------------------------------------------------------------- QONNX ops


@op("Quant", QONNX_DOMAIN)
def _quant(node, ins):
    x, s, z, b = ins
    p = kernels.QuantParams(
        s, z, b,
        signed=bool(node.attr("signed", 1)),
        narrow=bool(node.attr("narrow", 0)),
        rounding_mode=node.attr("rounding_mode", "ROUND"),
    )
    return [kernels.quant_op(x, p)]


@op("BipolarQuant", QONNX_DOMAIN)
def _bipolar(node, ins):
    return [kernels.bipolar_quant_op(ins[0], ins[1])]


@op("Trunc", QONNX_DOMAIN)
def _trunc(node, ins):
    x, s, z, b_in, b_out = ins
    return [kernels.trunc_op(x, s, z, b_in, b_out, node.attr("rounding_mode", "FLOOR"))]


# ---------------------------------------------------------------- elementwise


def _binary(fn):
    def run(node, ins):
        a, b = ins
        if a.dtype.kind == "f" or b.dtype.kind == "f":
            return [_same_float(fn(_f64(a), _f64(b)), a if a.dtype.kind == "f" else b)]
        return [fn(a, b).astype(np.result_type(a, b))]

    return run


def _int_div(a, b):
    if a.dtype.kind == "f":
        return a / b
    return np.trunc(np.divide(a, b)).astype(np.result_type(a, b))


op("Add")(_binary(np.add))
op("Sub")(_binary(np.subtract))
op("Mul")(_binary(np.multiply))
op("Div")(_binary(_int_div))


@op("Relu")
def _relu(node, ins):
    x = ins[0]
    return [np.where(x > 0, x, np.zeros((), dtype=x.dtype)).astype(x.dtype)]


@op("Sign")
def _sign(node, ins):
    return [np.sign(ins[0]).astype(ins[0].dtype)]


@op("Identity")
def _identity(node, ins):
    return [ins[0]]


# ONNX Constant attribute -> numpy dtype
_CONSTANT_ATTRS = {
    "value_float": np.float32,
    "value_floats": np.float32,
    "value_int": np.int64,
    "value_ints": np.int64,
}


def constant_value(node: NodeDef) -> TensorValue | None:
    """Payload of an ONNX Constant node, or None for unsupported forms."""
    if isinstance(node.attributes.get("value"), TensorValue):
        return node.attributes["value"]
    for key, dtype in _CONSTANT_ATTRS.items():
        if key in node.attributes and not isinstance(node.attributes[key], RawAttribute):
            return TensorValue(np.asarray(node.attributes[key], dtype=dtype))
    return None


@op("Constant")
def _constant(node, ins):
    value = constant_value(node)
    if value is None:
        raise UnsupportedError(f"Constant {node.name!r}: unsupported attribute form")
    return [value.data]


@op("Clip")
def _clip(node, ins):
    x = ins[0]
    lo = ins[1] if len(ins) > 1 and ins[1] is not None else node.attr("min")
    hi = ins[2] if len(ins) > 2 and ins[2] is not None else node.attr("max")
    out = x
    if lo is not None:
        out = np.maximum(out, np.asarray(lo, dtype=x.dtype))
    if hi is not None:
        out = np.minimum(out, np.asarray(hi, dtype=x.dtype))
    return [out.astype(x.dtype)]


# ---------------------------------------------------------------- linear algebra


def _matmul64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _f64(a), _f64(b)
    squeeze_a = squeeze_b = False
    if a.ndim == 1:
        a, squeeze_a = a[None, :], True
    if b.ndim == 1:
        b, squeeze_b = b[:, None], True
    out = np.einsum("...ij,...jk->...ik", a, b, optimize=False)
    if squeeze_a:
        out = out[..., 0, :]
    if squeeze_b:
        out = out[..., 0]
    return out


@op("MatMul")
def _matmul(node, ins):
    a, b = ins
    return [_matmul64(a, b).astype(np.float32)]


@op("Gemm")
def _gemm(node, ins):
    a, b = _f64(ins[0]), _f64(ins[1])
    c = ins[2] if len(ins) > 2 else None
    if node.attr("transA", 0):
        a = a.T
    if node.attr("transB", 0):
        b = b.T
    y = node.attr("alpha", 1.0) * _matmul64(a, b)
    if c is not None:
        y = y + node.attr("beta", 1.0) * _f64(c)
    return [y.astype(np.float32)]


def _spatial_pads(node: NodeDef, in_hw, kernel, strides, dilations) -> list[int]:
    """Per-side pads [top, left, bottom, right] honouring auto_pad."""
    auto_pad = node.attr("auto_pad", "NOTSET")
    if auto_pad in ("NOTSET", ""):
        pads = list(node.attr("pads", (0,) * (2 * len(kernel))))
        return pads
    if auto_pad == "VALID":
        return [0] * (2 * len(kernel))
    begin, end = [], []
    for size, k, s, d in zip(in_hw, kernel, strides, dilations):
        out = -(-size // s)
        total = max((out - 1) * s + (k - 1) * d + 1 - size, 0)
        small, big = total // 2, total - total // 2
        if auto_pad == "SAME_UPPER":
            begin.append(small), end.append(big)
        else:
            begin.append(big), end.append(small)
    return begin + end


def _pool_geometry(node: NodeDef, x: np.ndarray, kernel: Sequence[int]):
    nd = len(kernel)
    if x.ndim != nd + 2 or nd != 2:
        raise ShapeError(f"{node.op_type}: only 2D spatial data is supported, got {x.shape}")
    strides = list(node.attr("strides", (1,) * nd))
    dilations = list(node.attr("dilations", (1,) * nd))
    pads = _spatial_pads(node, x.shape[2:], kernel, strides, dilations)
    return strides, dilations, pads


def _out_size(size, k, s, d, pad_begin, pad_end, ceil_mode=False):
    eff = (k - 1) * d + 1
    num = size + pad_begin + pad_end - eff
    if num < 0:
        raise ShapeError("kernel larger than padded input")
    out = (-(-num // s) if ceil_mode else num // s) + 1
    if ceil_mode and (out - 1) * s >= size + pad_begin:
        # the last window must start inside the input or the leading pad
        out -= 1
    return out


def _windows(xp: np.ndarray, kh, kw, sh, sw, dh, dw, oh, ow):
    """Yield (i, j, slice) for every kernel tap over the padded input."""
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            yield i, j, xp[:, :, r0 : r0 + sh * (oh - 1) + 1 : sh, c0 : c0 + sw * (ow - 1) + 1 : sw]


@op("Conv")
@layout_wrapped
def _conv(node, ins):
    x, w = _f64(ins[0]), _f64(ins[1])
    bias = ins[2] if len(ins) > 2 and ins[2] is not None else None
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"Conv: only 2D convolution is supported, got {x.shape}, {w.shape}")
    group = int(node.attr("group", 1))
    kernel = list(node.attr("kernel_shape", w.shape[2:]))
    strides, dilations, pads = _pool_geometry(node, x, kernel)
    n, c, h, wd = x.shape
    m = w.shape[0]
    if c != w.shape[1] * group or m % group:
        raise ShapeError(f"Conv: channels {c} do not match weights {w.shape} with group={group}")
    xp = np.pad(x, ((0, 0), (0, 0), (pads[0], pads[2]), (pads[1], pads[3])))
    oh = _out_size(h, kernel[0], strides[0], dilations[0], pads[0], pads[2])
    ow = _out_size(wd, kernel[1], strides[1], dilations[1], pads[1], pads[3])
    out = np.zeros((n, m, oh, ow), dtype=np.float64)
    cg, mg = c // group, m // group
    for g in range(group):
        xg = xp[:, g * cg : (g + 1) * cg]
        wg = w[g * mg : (g + 1) * mg]
        acc = out[:, g * mg : (g + 1) * mg]
        for i, j, patch in _windows(xg, kernel[0], kernel[1], strides[0], strides[1],
                                    dilations[0], dilations[1], oh, ow):
            acc += np.einsum("nchw,mc->nmhw", patch, wg[:, :, i, j], optimize=False)
    if bias is not None:
        out += _f64(bias).reshape(1, m, 1, 1)
    return [out.astype(np.float32)]


@op("MaxPool")
@layout_wrapped
def _maxpool(node, ins):
    x = ins[0]
    kernel = list(node.attr("kernel_shape"))
    strides, dilations, pads = _pool_geometry(node, x, kernel)
    ceil_mode = bool(node.attr("ceil_mode", 0))
    h, w = x.shape[2:]
    oh = _out_size(h, kernel[0], strides[0], dilations[0], pads[0], pads[2], ceil_mode)
    ow = _out_size(w, kernel[1], strides[1], dilations[1], pads[1], pads[3], ceil_mode)
    # extra trailing pad so ceil-mode windows stay in bounds
    need_h = (oh - 1) * strides[0] + (kernel[0] - 1) * dilations[0] + 1
    need_w = (ow - 1) * strides[1] + (kernel[1] - 1) * dilations[1] + 1
    xp = np.pad(
        _f64(x),
        ((0, 0), (0, 0), (pads[0], max(need_h - h - pads[0], pads[2])),
         (pads[1], max(need_w - w - pads[1], pads[3]))),
        constant_values=-np.inf,
    )
    out = None
    for _, _, patch in _windows(xp, kernel[0], kernel[1], strides[0], strides[1],
                                dilations[0], dilations[1], oh, ow):
        out = patch.copy() if out is None else np.maximum(out, patch)
    return [out.astype(x.dtype)]


@op("AveragePool")
@layout_wrapped
def _avgpool(node, ins):
    x = ins[0]
    kernel = list(node.attr("kernel_shape"))
    strides, dilations, pads = _pool_geometry(node, x, kernel)
    ceil_mode = bool(node.attr("ceil_mode", 0))
    include_pad = bool(node.attr("count_include_pad", 0))
    h, w = x.shape[2:]
    oh = _out_size(h, kernel[0], strides[0], dilations[0], pads[0], pads[2], ceil_mode)
    ow = _out_size(w, kernel[1], strides[1], dilations[1], pads[1], pads[3], ceil_mode)
    need_h = (oh - 1) * strides[0] + (kernel[0] - 1) * dilations[0] + 1
    need_w = (ow - 1) * strides[1] + (kernel[1] - 1) * dilations[1] + 1
    extra = ((0, 0), (0, 0), (pads[0], max(need_h - h - pads[0], pads[2])),
             (pads[1], max(need_w - w - pads[1], pads[3])))
    xp = np.pad(_f64(x), extra)
    # 1 where a tap counts towards the divisor
    ones = np.ones((1, 1, h, w))
    if include_pad:
        ones = np.pad(ones, ((0, 0), (0, 0), (pads[0], pads[2]), (pads[1], pads[3])), constant_values=1.0)
        weight = np.pad(ones, ((0, 0), (0, 0), (0, extra[2][1] - pads[2]), (0, extra[3][1] - pads[3])))
    else:
        weight = np.pad(ones, extra)
    total = np.zeros((x.shape[0], x.shape[1], oh, ow))
    count = np.zeros((1, 1, oh, ow))
    for (_, _, patch), (_, _, wpatch) in zip(
        _windows(xp, kernel[0], kernel[1], strides[0], strides[1], dilations[0], dilations[1], oh, ow),
        _windows(weight, kernel[0], kernel[1], strides[0], strides[1], dilations[0], dilations[1], oh, ow),
    ):
        total += patch
        count += wpatch
    return [(total / count).astype(x.dtype)]


@op("GlobalAveragePool")
@layout_wrapped
def _gap(node, ins):
    x = ins[0]
    axes = tuple(range(2, x.ndim))
    return [np.mean(_f64(x), axis=axes, keepdims=True).astype(x.dtype)]


@op("BatchNormalization")
@layout_wrapped
def _batchnorm(node, ins):
    x, scale, bias, mean, var = (_f64(a) for a in ins[:5])
    eps = node.attr("epsilon", 1e-5)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    y = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps) * scale.reshape(shape) + bias.reshape(shape)
    return [y.astype(np.float32)]


# ---------------------------------------------------------------- shape manipulation


def reshape_target(in_shape: Sequence, target: Sequence[int], allowzero: bool = False) -> list:
    """Resolve 0 and -1 entries of a Reshape target against the input shape."""
    out = []
    for i, t in enumerate(target):
        if t == 0 and not allowzero:
            if i >= len(in_shape):
                raise ShapeError("Reshape: 0 refers past the input rank")
            out.append(in_shape[i])
        else:
            out.append(int(t))
    if out.count(-1) > 1:
        raise ShapeError("Reshape: more than one -1 in target shape")
    if -1 in out:
        known = [d for d in out if d != -1]
        if all(isinstance(d, int) for d in (*known, *in_shape)):
            total = math.prod(in_shape)
            rest = math.prod(known)
            if rest == 0 or total % rest:
                raise ShapeError(f"Reshape: cannot reshape {list(in_shape)} to {list(target)}")
            out[out.index(-1)] = total // rest
        else:
            out[out.index(-1)] = None
    return out


@op("Reshape")
def _reshape(node, ins):
    x, shape = ins
    target = reshape_target(x.shape, _ints(shape), bool(node.attr("allowzero", 0)))
    if math.prod(target) != x.size:
        raise ShapeError(f"Reshape: cannot reshape {list(x.shape)} to {target}")
    return [x.reshape(target)]


@op("Transpose")
def _transpose(node, ins):
    x = ins[0]
    perm = node.attr("perm", tuple(reversed(range(x.ndim))))
    return [np.transpose(x, perm).copy()]


@op("Flatten")
def _flatten(node, ins):
    x = ins[0]
    axis = int(node.attr("axis", 1))
    axis = axis + x.ndim if axis < 0 else axis
    return [x.reshape(math.prod(x.shape[:axis]), math.prod(x.shape[axis:]))]


def _axes(node, ins, index: int = 1) -> list[int] | None:
    if len(ins) > index and ins[index] is not None:
        return _ints(ins[index])
    a = node.attr("axes")
    return None if a is None else list(a)


@op("Squeeze")
def _squeeze(node, ins):
    x = ins[0]
    axes = _axes(node, ins)
    if axes is None:
        return [x.reshape([d for d in x.shape if d != 1])]
    axes = [a + x.ndim if a < 0 else a for a in axes]
    if any(x.shape[a] != 1 for a in axes):
        raise ShapeError(f"Squeeze: axes {axes} are not of size 1 in {x.shape}")
    return [np.squeeze(x, axis=tuple(axes))]


@op("Unsqueeze")
def _unsqueeze(node, ins):
    x = ins[0]
    axes = _axes(node, ins)
    rank = x.ndim + len(axes)
    axes = sorted(a + rank if a < 0 else a for a in axes)
    shape = list(x.shape)
    for a in axes:
        shape.insert(a, 1)
    return [x.reshape(shape)]


@op("Concat")
def _concat(node, ins):
    return [np.concatenate(ins, axis=int(node.attr("axis")))]


@op("Gather")
def _gather(node, ins):
    data, idx = ins
    axis = int(node.attr("axis", 0))
    axis = axis + data.ndim if axis < 0 else axis
    idx = np.asarray(idx).astype(np.int64)
    idx = np.where(idx < 0, idx + data.shape[axis], idx)
    return [np.take(data, idx, axis=axis)]


@op("Shape")
def _shape(node, ins):
    dims = ins[0].shape
    start, end = node.attr("start", 0), node.attr("end")
    return [np.asarray(dims[start:end], dtype=np.int64)]


@op("Pad")
def _pad(node, ins):
    x = ins[0]
    mode = node.attr("mode", "constant")
    if mode != "constant":
        raise UnsupportedError(f"Pad: mode {mode!r} is not supported")
    pads = _ints(ins[1]) if len(ins) > 1 and ins[1] is not None else list(node.attr("pads"))
    value = node.attr("value", 0.0)
    if len(ins) > 2 and ins[2] is not None and np.asarray(ins[2]).size:
        value = np.asarray(ins[2]).reshape(-1)[0]
    axes = _ints(ins[3]) if len(ins) > 3 and ins[3] is not None else list(range(x.ndim))
    axes = [a + x.ndim if a < 0 else a for a in axes]
    width = [(0, 0)] * x.ndim
    k = len(axes)
    for i, a in enumerate(axes):
        width[a] = (pads[i], pads[i + k])
    if any(p < 0 for pair in width for p in pair):
        raise UnsupportedError("Pad: negative pads are not supported")
    return [np.pad(x, width, constant_values=np.asarray(value, dtype=x.dtype))]


# ---------------------------------------------------------------- ONNX quantization


def _per_axis(param: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    param = np.asarray(param)
    if param.ndim == 0 or param.size == 1 and param.ndim <= 1:
        return param.reshape(())
    axis = axis + x.ndim if axis < 0 else axis
    shape = [1] * x.ndim
    shape[axis] = -1
    return param.reshape(shape)


@op("QuantizeLinear")
def _quantize_linear(node, ins):
    x, scale = ins[0], ins[1]
    zp = ins[2] if len(ins) > 2 and ins[2] is not None else np.zeros((), dtype=np.uint8)
    axis = int(node.attr("axis", 1))
    info = np.iinfo(zp.dtype)
    s = _f64(_per_axis(scale, x, axis))
    z = _f64(_per_axis(zp, x, axis))
    q = np.rint(_f64(x) / s) + z
    return [np.clip(q, info.min, info.max).astype(zp.dtype)]


@op("DequantizeLinear")
def _dequantize_linear(node, ins):
    x, scale = ins[0], ins[1]
    zp = ins[2] if len(ins) > 2 and ins[2] is not None else np.zeros((), dtype=x.dtype)
    axis = int(node.attr("axis", 1))
    s = _f64(_per_axis(scale, x, axis))
    z = _f64(_per_axis(zp, x, axis))
    return [(s * (_f64(x) - z)).astype(np.float32)]


# ---------------------------------------------------------------- driver


def execute_node(node: NodeDef, ctx: ExecutionContext) -> list[TensorValue]:
    kernel = REGISTRY.lookup(node)
    if kernel is None:
        raise UnsupportedOpError(f"no kernel for {node.domain or 'ai.onnx'}::{node.op_type}")
    ins = []
    for name in node.inputs:
        if not name:
            ins.append(None)
            continue
        if name not in ctx.bindings:
            raise UnboundInputError(f"{node.op_type} {node.name!r}: input {name!r} is not bound")
        ins.append(ctx.bindings[name].data)
    # drop trailing absent optionals so kernels can use len(ins)
    while ins and ins[-1] is None:
        ins.pop()
    try:
        outs = kernel(node, ins)
    except QonnxError:
        raise
    except (ValueError, IndexError, TypeError) as e:
        raise ShapeError(f"{node.op_type} {node.name!r}: {e}") from e
    return [TensorValue(np.asarray(o)) for o in outs]


def _check_input(vi, t: TensorValue) -> None:
    if vi.elem_type is not None and vi.elem_type != t.elem_type:
        raise ShapeError(f"input {vi.name!r}: expected {vi.elem_type.value}, got {t.elem_type.value}")
    if vi.shape is None:
        return
    if len(vi.shape) != len(t.shape) or any(
        isinstance(d, int) and d != actual for d, actual in zip(vi.shape, t.shape)
    ):
        raise ShapeError(f"input {vi.name!r}: expected shape {list(vi.shape)}, got {list(t.shape)}")


def execute(
    model: Model,
    inputs: Mapping[str, TensorValue | np.ndarray],
    return_all: bool = False,
) -> dict[str, TensorValue]:
    """Run the graph on the given inputs and return its outputs by name."""
    g = model.graph
    ctx = ExecutionContext(model, dict(g.initializers))
    declared = {vi.name: vi for vi in g.inputs}
    for name, value in inputs.items():
        if name not in declared:
            raise ArgumentError(f"{name!r} is not a graph input")
        t = value if isinstance(value, TensorValue) else TensorValue(np.asarray(value))
        _check_input(declared[name], t)
        ctx.bindings[name] = t
    for vi in g.runtime_inputs:
        if vi.name not in ctx.bindings:
            raise UnboundInputError(f"graph input {vi.name!r} is not bound")
    for i in topological_order(g):
        node = g.nodes[i]
        outs = execute_node(node, ctx)
        for name, t in zip(node.outputs, outs):
            if name:
                ctx.bindings[name] = t
    if return_all:
        return ctx.bindings
    missing = [n for n in g.output_names if n not in ctx.bindings]
    if missing:
        raise UnboundInputError(f"graph outputs {missing} were never produced")
    return {n: ctx.bindings[n] for n in g.output_names}


def random_inputs(model: Model, seed: int = 0, low: float = -2.0, high: float = 2.0) -> dict[str, TensorValue]:
    """Seeded random tensors for every runtime graph input (symbolic dims become 1)."""
    rng = np.random.default_rng(seed)
    out = {}
    for vi in model.graph.runtime_inputs:
        if vi.shape is None:
            raise ShapeError(f"input {vi.name!r} has no declared shape")
        shape = [d if isinstance(d, int) else 1 for d in vi.shape]
        dtype = vi.elem_type.numpy if vi.elem_type is not None else np.float32
        if np.issubdtype(dtype, np.floating):
            arr = rng.uniform(low, high, size=shape).astype(dtype)
        elif dtype == np.bool_:
            arr = rng.integers(0, 2, size=shape).astype(bool)
        else:
            info = np.iinfo(dtype)
            arr = rng.integers(max(info.min, -128), min(info.max, 127), size=shape, endpoint=True).astype(dtype)
        out[vi.name] = TensorValue(arr)
    return out
