"""Conversion between ONNX protobuf bytes and the in-memory IR.

The ``onnx`` package supplies the generated protobuf classes; everything else
(normalization, dtype policing, attribute preservation) lives here.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import onnx
from google.protobuf.message import DecodeError as _ProtoDecodeError
from onnx import numpy_helper

from qonnx_kit.errors import DecodeError, QonnxError, UnsupportedDTypeError, UnsupportedError
from qonnx_kit.ir import (
    QONNX_DOMAIN,
    QONNX_DOMAIN_ALIASES,
    QONNX_OPS,
    DType,
    Graph,
    Model,
    NodeDef,
    RawAttribute,
    TensorValue,
    ValueInfo,
)

log = logging.getLogger(__name__)

_ONNX_TO_DTYPE = {
    onnx.TensorProto.FLOAT: DType.FLOAT32,
    onnx.TensorProto.INT8: DType.INT8,
    onnx.TensorProto.UINT8: DType.UINT8,
    onnx.TensorProto.INT32: DType.INT32,
    onnx.TensorProto.INT64: DType.INT64,
    onnx.TensorProto.BOOL: DType.BOOL,
}
_DTYPE_TO_ONNX = {v: k for k, v in _ONNX_TO_DTYPE.items()}


def onnx_elem_type(dtype: DType) -> int:
    return _DTYPE_TO_ONNX[dtype]


def _dtype(code: int, where: str) -> DType:
    try:
        return _ONNX_TO_DTYPE[code]
    except KeyError:
        name = onnx.TensorProto.DataType.Name(code) if code in onnx.TensorProto.DataType.values() else code
        raise UnsupportedDTypeError(f"{where}: element type {name} is not supported") from None


# ---------------------------------------------------------------- decoding


def _tensor_from_proto(tp: onnx.TensorProto) -> TensorValue:
    if tp.data_location == onnx.TensorProto.EXTERNAL:
        raise UnsupportedError(f"tensor {tp.name!r} uses external data storage")
    _dtype(tp.data_type, f"tensor {tp.name!r}")
    try:
        arr = numpy_helper.to_array(tp)
    except Exception as e:  # malformed payload length etc.
        raise DecodeError(f"tensor {tp.name!r}: {e}") from e
    return TensorValue(arr)


def _value_info_from_proto(vi: onnx.ValueInfoProto) -> ValueInfo:
    if not vi.type.HasField("tensor_type"):
        raise UnsupportedError(f"value {vi.name!r} is not a tensor type")
    tt = vi.type.tensor_type
    elem = _dtype(tt.elem_type, f"value {vi.name!r}") if tt.elem_type else None
    shape = None
    if tt.HasField("shape"):
        dims = []
        for d in tt.shape.dim:
            if d.HasField("dim_value"):
                dims.append(int(d.dim_value))
            elif d.HasField("dim_param"):
                dims.append(d.dim_param)
            else:
                dims.append(None)
        shape = tuple(dims)
    return ValueInfo(vi.name, elem, shape)


def _attr_from_proto(a: onnx.AttributeProto):
    t = a.type
    A = onnx.AttributeProto
    if t == A.FLOAT:
        return float(a.f)
    if t == A.INT:
        return int(a.i)
    if t == A.STRING:
        try:
            return a.s.decode("utf-8")
        except UnicodeDecodeError:
            return RawAttribute(a.SerializeToString())
    if t == A.INTS:
        return tuple(int(v) for v in a.ints)
    if t == A.FLOATS:
        if not a.floats:
            return RawAttribute(a.SerializeToString())
        return tuple(float(v) for v in a.floats)
    if t == A.TENSOR:
        try:
            return _tensor_from_proto(a.t)
        except QonnxError:
            return RawAttribute(a.SerializeToString())
    return RawAttribute(a.SerializeToString())


def _node_from_proto(n: onnx.NodeProto) -> NodeDef:
    domain = n.domain
    if n.op_type in QONNX_OPS and domain in QONNX_DOMAIN_ALIASES:
        domain = QONNX_DOMAIN
    attrs = {a.name: _attr_from_proto(a) for a in n.attribute}
    return NodeDef(n.op_type, tuple(n.input), tuple(n.output), attrs, domain, n.name)


def model_from_proto(mp: onnx.ModelProto) -> Model:
    if not mp.HasField("graph"):
        raise DecodeError("ModelProto has no graph")
    gp = mp.graph
    initializers = {}
    for tp in gp.initializer:
        initializers[tp.name] = _tensor_from_proto(tp)
    if len(gp.sparse_initializer):
        raise UnsupportedError("sparse initializers are not supported")
    annotations = {
        ta.tensor_name: {e.key: e.value for e in ta.quant_parameter_tensor_names}
        for ta in gp.quantization_annotation
    }
    graph = Graph(
        nodes=[_node_from_proto(n) for n in gp.node],
        inputs=[_value_info_from_proto(v) for v in gp.input],
        outputs=[_value_info_from_proto(v) for v in gp.output],
        initializers=initializers,
        value_info=[_value_info_from_proto(v) for v in gp.value_info],
        name=gp.name,
        quant_annotations=annotations,
    )
    imports = [(op.domain, int(op.version)) for op in mp.opset_import]
    domains = {d for d, _ in imports}
    if any(n.domain == QONNX_DOMAIN for n in graph.nodes) and QONNX_DOMAIN not in domains:
        imports.append((QONNX_DOMAIN, 1))
    return Model(
        graph=graph,
        opset_imports=tuple(imports),
        ir_version=int(mp.ir_version),
        metadata={p.key: p.value for p in mp.metadata_props},
        producer_name=mp.producer_name,
    )


def parse_model(data: bytes) -> Model:
    """Decode serialized ModelProto bytes."""
    mp = onnx.ModelProto()
    try:
        mp.ParseFromString(bytes(data))
    except (_ProtoDecodeError, RuntimeError, ValueError) as e:
        raise DecodeError(f"malformed ModelProto: {e}") from e
    return model_from_proto(mp)


# ---------------------------------------------------------------- encoding


def _tensor_to_proto(t: TensorValue, name: str = "") -> onnx.TensorProto:
    return numpy_helper.from_array(t.data, name)


def _value_info_to_proto(vi: ValueInfo) -> onnx.ValueInfoProto:
    p = onnx.ValueInfoProto()
    p.name = vi.name
    tt = p.type.tensor_type
    if vi.elem_type is not None:
        tt.elem_type = onnx_elem_type(vi.elem_type)
    if vi.shape is not None:
        shape = tt.shape
        shape.SetInParent()
        for d in vi.shape:
            dim = shape.dim.add()
            if isinstance(d, int):
                dim.dim_value = d
            elif isinstance(d, str):
                dim.dim_param = d
    return p


def _attr_to_proto(name: str, value) -> onnx.AttributeProto:
    if isinstance(value, RawAttribute):
        a = onnx.AttributeProto.FromString(value.payload)
        a.name = name
        return a
    A = onnx.AttributeProto
    a = A()
    a.name = name
    if isinstance(value, bool) or isinstance(value, int):
        a.type, a.i = A.INT, int(value)
    elif isinstance(value, float):
        a.type, a.f = A.FLOAT, value
    elif isinstance(value, str):
        a.type, a.s = A.STRING, value.encode("utf-8")
    elif isinstance(value, TensorValue):
        a.type = A.TENSOR
        a.t.CopyFrom(_tensor_to_proto(value))
    elif isinstance(value, tuple):
        if all(isinstance(v, int) for v in value):
            a.type = A.INTS
            a.ints.extend(value)
        elif all(isinstance(v, (int, float)) for v in value):
            a.type = A.FLOATS
            a.floats.extend(float(v) for v in value)
        else:
            raise TypeError(f"attribute {name!r}: unsupported list {value!r}")
    else:
        raise TypeError(f"attribute {name!r}: unsupported value {value!r}")
    return a


def model_to_proto(model: Model) -> onnx.ModelProto:
    mp = onnx.ModelProto()
    mp.ir_version = model.ir_version
    mp.producer_name = model.producer_name
    for domain, version in model.opset_imports:
        op = mp.opset_import.add()
        op.domain, op.version = domain, version
    for k, v in model.metadata.items():
        p = mp.metadata_props.add()
        p.key, p.value = k, v
    g = model.graph
    gp = mp.graph
    gp.name = g.name
    for n in g.nodes:
        np_ = gp.node.add()
        np_.op_type, np_.domain, np_.name = n.op_type, n.domain, n.name
        np_.input.extend(n.inputs)
        np_.output.extend(n.outputs)
        for k, v in n.attributes.items():
            np_.attribute.append(_attr_to_proto(k, v))
    for name, t in g.initializers.items():
        gp.initializer.append(_tensor_to_proto(t, name))
    gp.input.extend(_value_info_to_proto(v) for v in g.inputs)
    gp.output.extend(_value_info_to_proto(v) for v in g.outputs)
    gp.value_info.extend(_value_info_to_proto(v) for v in g.value_info)
    for tensor, entries in g.quant_annotations.items():
        ta = gp.quantization_annotation.add()
        ta.tensor_name = tensor
        for k, v in entries.items():
            e = ta.quant_parameter_tensor_names.add()
            e.key, e.value = k, v
    return mp


def serialize_model(model: Model) -> bytes:
    return model_to_proto(model).SerializeToString()


def load_model(path: str | Path) -> Model:
    return parse_model(_read(path))


def save_model(model: Model, path: str | Path) -> None:
    _write(path, serialize_model(model))


# ---------------------------------------------------------------- tensor files


def parse_tensor(data: bytes) -> tuple[str, TensorValue]:
    tp = onnx.TensorProto()
    try:
        tp.ParseFromString(bytes(data))
    except (_ProtoDecodeError, RuntimeError, ValueError) as e:
        raise DecodeError(f"malformed TensorProto: {e}") from e
    return tp.name, _tensor_from_proto(tp)


def serialize_tensor(t: TensorValue, name: str = "") -> bytes:
    return _tensor_to_proto(t, name).SerializeToString()


def load_tensor(path: str | Path) -> tuple[str, TensorValue]:
    return parse_tensor(_read(path))


def save_tensor(t: TensorValue, path: str | Path, name: str = "") -> None:
    _write(path, serialize_tensor(t, name))


def _read(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise QonnxError(f"cannot read {path}: {e.strerror}", code="E_IO") from e


def _write(path: str | Path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise QonnxError(f"cannot write {path}: {e.strerror}", code="E_IO") from e
