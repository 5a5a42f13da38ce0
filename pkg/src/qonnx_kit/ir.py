"""In-memory graph representation of ONNX / QONNX models.

All containers are frozen dataclasses. Mapping-valued fields are wrapped in
read-only proxies, and tensor payloads are read-only numpy arrays, so a
:class:`Model` can be shared freely between threads. Transformations build new
objects (usually through :func:`dataclasses.replace`).
"""

from __future__ import annotations

import enum
import heapq
import types
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

from qonnx_kit.errors import CycleError, UnsupportedDTypeError

QONNX_DOMAIN = "qonnx.custom_op.general"
# domains used for the same operators by older exporters
QONNX_DOMAIN_ALIASES = frozenset({"", "finn.custom_op.general", "onnx.brevitas"})
QONNX_OPS = frozenset({"Quant", "BipolarQuant", "Trunc"})
DEFAULT_DOMAINS = frozenset({"", "ai.onnx"})


class DType(enum.Enum):
    FLOAT32 = "float32"
    INT8 = "int8"
    UINT8 = "uint8"
    INT32 = "int32"
    INT64 = "int64"
    BOOL = "bool"

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(self.value)

    @property
    def is_float(self) -> bool:
        return self is DType.FLOAT32

    @classmethod
    def from_numpy(cls, dtype: Any) -> "DType":
        dtype = np.dtype(dtype)
        for member in cls:
            if member.numpy == dtype:
                return member
        raise UnsupportedDTypeError(f"unsupported element type {dtype}")


@dataclass(frozen=True, eq=False)
class TensorValue:
    """Dense tensor with one of the supported element types.

    Equality is bit-exact: same element type, same shape, same bytes.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        DType.from_numpy(arr.dtype)
        arr = np.array(arr, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def of(cls, values: Any, dtype: DType | str = DType.FLOAT32) -> "TensorValue":
        dtype = DType(dtype) if isinstance(dtype, str) else dtype
        return cls(np.asarray(values, dtype=dtype.numpy))

    @property
    def elem_type(self) -> DType:
        return DType.from_numpy(self.data.dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorValue):
            return NotImplemented
        return (
            self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __hash__(self) -> int:
        return hash((self.data.dtype.str, self.data.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"TensorValue({self.elem_type.value}, shape={list(self.shape)})"


@dataclass(frozen=True)
class RawAttribute:
    """Serialized AttributeProto of a kind this toolkit does not interpret."""

    payload: bytes


AttrValue = Union[int, float, str, tuple, TensorValue, RawAttribute]

# a dimension is a fixed size, a named symbol, or None for "unknown"
Dim = Union[int, str, None]


@dataclass(frozen=True)
class ValueInfo:
    name: str
    elem_type: DType | None = None
    shape: tuple[Dim, ...] | None = None

    def __post_init__(self):
        if self.shape is not None:
            object.__setattr__(self, "shape", tuple(self.shape))

    @property
    def is_static(self) -> bool:
        return self.shape is not None and all(isinstance(d, int) for d in self.shape)


def _freeze_map(value: Mapping | None) -> Mapping:
    return types.MappingProxyType(dict(value or {}))


def _freeze_attr(value: Any) -> AttrValue:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        # AttributeProto stores floats in single precision
        return float(np.float32(value))
    if isinstance(value, (list, tuple)):
        return tuple(_freeze_attr(v) for v in value)
    if isinstance(value, np.ndarray):
        return TensorValue(value)
    return value


@dataclass(frozen=True)
class NodeDef:
    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attributes: Mapping[str, AttrValue] = field(default_factory=dict)
    domain: str = ""
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(
            self,
            "attributes",
            _freeze_map({k: _freeze_attr(v) for k, v in dict(self.attributes).items()}),
        )

    def attr(self, name: str, default: Any = None) -> Any:
        return self.attributes.get(name, default)

    def input(self, index: int) -> str:
        """Name of the index-th input, or "" when absent."""
        return self.inputs[index] if index < len(self.inputs) else ""

    @property
    def is_qonnx(self) -> bool:
        return self.domain == QONNX_DOMAIN and self.op_type in QONNX_OPS

    def with_attributes(self, **changes: Any) -> "NodeDef":
        attrs = dict(self.attributes)
        for k, v in changes.items():
            if v is None:
                attrs.pop(k, None)
            else:
                attrs[k] = v
        return NodeDef(self.op_type, self.inputs, self.outputs, attrs, self.domain, self.name)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NodeDef):
            return NotImplemented
        return (
            self.op_type == other.op_type
            and self.domain == other.domain
            and self.name == other.name
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and dict(self.attributes) == dict(other.attributes)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Graph:
    nodes: tuple[NodeDef, ...]
    inputs: tuple[ValueInfo, ...]
    outputs: tuple[ValueInfo, ...]
    initializers: Mapping[str, TensorValue] = field(default_factory=dict)
    value_info: tuple[ValueInfo, ...] = ()
    name: str = "graph"
    # tensor name -> {key: value}; stored in GraphProto.quantization_annotation
    quant_annotations: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "value_info", tuple(self.value_info))
        object.__setattr__(self, "initializers", _freeze_map(self.initializers))
        object.__setattr__(
            self,
            "quant_annotations",
            _freeze_map({k: _freeze_map(v) for k, v in dict(self.quant_annotations).items()}),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.name == other.name
            and self.nodes == other.nodes
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and dict(self.initializers) == dict(other.initializers)
            and self.value_info == other.value_info
            and {k: dict(v) for k, v in self.quant_annotations.items()}
            == {k: dict(v) for k, v in other.quant_annotations.items()}
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def input_names(self) -> list[str]:
        return [vi.name for vi in self.inputs]

    @property
    def output_names(self) -> list[str]:
        return [vi.name for vi in self.outputs]

    @property
    def runtime_inputs(self) -> list[ValueInfo]:
        """Graph inputs that are not backed by an initializer."""
        return [vi for vi in self.inputs if vi.name not in self.initializers]

    def producers(self) -> dict[str, int]:
        """Map from tensor name to the index of the node producing it."""
        out: dict[str, int] = {}
        for i, n in enumerate(self.nodes):
            for o in n.outputs:
                if o:
                    out.setdefault(o, i)
        return out

    def consumers(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, n in enumerate(self.nodes):
            for name in n.inputs:
                if name:
                    out.setdefault(name, []).append(i)
        return out

    def find_value_info(self, name: str) -> ValueInfo | None:
        for vi in (*self.inputs, *self.outputs, *self.value_info):
            if vi.name == name:
                if vi.shape is not None or vi.elem_type is not None:
                    return vi
        if name in self.initializers:
            t = self.initializers[name]
            return ValueInfo(name, t.elem_type, t.shape)
        return None

    def shape_of(self, name: str) -> tuple[Dim, ...] | None:
        vi = self.find_value_info(name)
        return None if vi is None else vi.shape


@dataclass(frozen=True)
class Model:
    graph: Graph
    opset_imports: tuple[tuple[str, int], ...] = (("", 13), (QONNX_DOMAIN, 1))
    ir_version: int = 8
    metadata: Mapping[str, str] = field(default_factory=dict)
    producer_name: str = "qonnx-kit"

    def __post_init__(self):
        object.__setattr__(
            self, "opset_imports", tuple((str(d), int(v)) for d, v in self.opset_imports)
        )
        object.__setattr__(self, "metadata", _freeze_map(self.metadata))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return (
            self.ir_version == other.ir_version
            and self.producer_name == other.producer_name
            and dict(self.opset_imports) == dict(other.opset_imports)
            and dict(self.metadata) == dict(other.metadata)
            and self.graph == other.graph
        )

    __hash__ = None  # type: ignore[assignment]

    def opset(self, domain: str = "") -> int | None:
        for d, v in self.opset_imports:
            if d == domain or (domain in DEFAULT_DOMAINS and d in DEFAULT_DOMAINS):
                return v
        return None

    def with_graph(self, graph: Graph) -> "Model":
        return Model(graph, self.opset_imports, self.ir_version, self.metadata, self.producer_name)

    def with_opset(self, domain: str, version: int) -> "Model":
        imports = [(d, v) for d, v in self.opset_imports if d != domain]
        imports.append((domain, version))
        return Model(self.graph, tuple(imports), self.ir_version, self.metadata, self.producer_name)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    severity: str = "error"
    node: str | None = None

    def __str__(self) -> str:
        where = f" [{self.node}]" if self.node else ""
        return f"{self.severity}{where}: {self.message}"


def topological_order(graph: Graph) -> list[int]:
    """Node indices in dependency order, ties broken by file position.

    Inputs with no producing node (initializers, graph inputs, or dangling
    names) impose no ordering constraint.
    """
    producers = graph.producers()
    n = len(graph.nodes)
    indegree = [0] * n
    dependents: list[list[int]] = [[] for _ in range(n)]
    for i, node in enumerate(graph.nodes):
        deps = {producers[name] for name in node.inputs if name in producers}
        for j in deps:
            dependents[j].append(i)
        indegree[i] = len(deps)
    ready = [i for i in range(n) if indegree[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in dependents[i]:
            indegree[j] -= 1
            if indegree[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != n:
        stuck = [graph.nodes[i].name or graph.nodes[i].op_type for i in range(n) if indegree[i] > 0]
        raise CycleError(f"graph contains a cycle through nodes {stuck}")
    return order


def sorted_graph(graph: Graph) -> Graph:
    order = topological_order(graph)
    return Graph(
        [graph.nodes[i] for i in order],
        graph.inputs,
        graph.outputs,
        graph.initializers,
        graph.value_info,
        graph.name,
        graph.quant_annotations,
    )


# (min inputs, max inputs) per QONNX operator
QONNX_ARITY = {"Quant": (4, 4), "BipolarQuant": (2, 2), "Trunc": (5, 5)}
# input positions holding a scale / bit width
_SCALE_INPUTS = {"Quant": (1,), "BipolarQuant": (1,), "Trunc": (1,)}
_BITWIDTH_INPUTS = {"Quant": (3,), "Trunc": (3, 4)}
_ZERO_POINT_INPUTS = {"Quant": (2,), "Trunc": (2,)}


def validate_model(model: Model) -> list[Diagnostic]:
    """Check graph well-formedness plus QONNX operator constraints."""
    diags: list[Diagnostic] = []
    g = model.graph

    if model.opset() is None:
        diags.append(Diagnostic("opset_imports does not declare the default ONNX domain"))

    defined: set[str] = set(g.initializers) | set(g.input_names)
    seen_inputs: set[str] = set()
    for vi in g.inputs:
        if not vi.name:
            diags.append(Diagnostic("graph input with empty name"))
        if vi.name in seen_inputs:
            diags.append(Diagnostic(f"graph input {vi.name!r} declared twice"))
        seen_inputs.add(vi.name)

    produced: dict[str, str] = {}
    for i, node in enumerate(g.nodes):
        label = node.name or f"#{i}:{node.op_type}"
        if not node.op_type:
            diags.append(Diagnostic("node with empty op_type", node=label))
        if not node.outputs or not any(node.outputs):
            diags.append(Diagnostic("node has no outputs", node=label))
        for o in node.outputs:
            if not o:
                continue
            if o in produced:
                diags.append(
                    Diagnostic(f"tensor {o!r} also produced by {produced[o]}", node=label)
                )
            elif o in defined:
                diags.append(
                    Diagnostic(f"tensor {o!r} is also a graph input or initializer", node=label)
                )
            produced[o] = label

    available = defined | set(produced)
    for i, node in enumerate(g.nodes):
        label = node.name or f"#{i}:{node.op_type}"
        for name in node.inputs:
            if name and name not in available:
                diags.append(Diagnostic(f"input {name!r} is never defined", node=label))
    for vi in g.outputs:
        if vi.name not in available:
            diags.append(Diagnostic(f"graph output {vi.name!r} is never produced"))

    try:
        topological_order(g)
    except CycleError as e:
        diags.append(Diagnostic(str(e)))

    for i, node in enumerate(g.nodes):
        if node.op_type in QONNX_OPS and node.domain == QONNX_DOMAIN:
            diags.extend(_check_qonnx_node(node, g, node.name or f"#{i}:{node.op_type}"))
    return diags


def _const(graph: Graph, name: str) -> np.ndarray | None:
    t = graph.initializers.get(name)
    return None if t is None else t.data


def _check_qonnx_node(node: NodeDef, g: Graph, label: str) -> Iterable[Diagnostic]:
    lo, hi = QONNX_ARITY[node.op_type]
    present = [x for x in node.inputs if x]
    if not lo <= len(present) <= hi or len(node.inputs) > hi:
        yield Diagnostic(
            f"{node.op_type} takes {lo} inputs, got {len(present)}", node=label
        )
        return
    if len(node.outputs) != 1:
        yield Diagnostic(f"{node.op_type} produces exactly one output", node=label)
    for idx in _SCALE_INPUTS.get(node.op_type, ()):
        s = _const(g, node.input(idx))
        if s is not None and not np.all(s.astype(np.float64) > 0):
            yield Diagnostic("scale must be a positive scale factor (> 0)", node=label)
    for idx in _BITWIDTH_INPUTS.get(node.op_type, ()):
        b = _const(g, node.input(idx))
        if b is not None and not np.all(b.astype(np.float64) >= 2):
            yield Diagnostic("bit width is restricted to be >= 2", node=label)
    for idx in _ZERO_POINT_INPUTS.get(node.op_type, ()):
        z = _const(g, node.input(idx))
        if z is not None:
            z64 = z.astype(np.float64)
            if not np.all(z64 == np.round(z64)):
                yield Diagnostic(
                    "zero_point is not integer-valued", severity="warning", node=label
                )
    if node.op_type == "Trunc":
        bi, bo = _const(g, node.input(3)), _const(g, node.input(4))
        if bi is not None and bo is not None:
            try:
                ok = np.all(np.broadcast_arrays(bi, bo)[0] >= np.broadcast_arrays(bi, bo)[1])
            except ValueError:
                ok = False
            if not ok:
                yield Diagnostic("Trunc out_bit_width exceeds in_bit_width", node=label)
    if node.op_type == "Quant":
        mode = node.attr("rounding_mode", "ROUND")
        if mode not in ("ROUND", "ROUND_TO_ZERO", "CEIL", "FLOOR"):
            yield Diagnostic(f"unknown rounding_mode {mode!r}", node=label)
    if node.op_type == "Trunc":
        mode = node.attr("rounding_mode", "FLOOR")
        if mode not in ("ROUND", "CEIL", "FLOOR"):
            yield Diagnostic(f"unknown rounding_mode {mode!r}", node=label)


def errors_only(diags: Sequence[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]
