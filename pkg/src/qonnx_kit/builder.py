"""Imperative helper for assembling models in code."""

from __future__ import annotations

import itertools
from typing import Any, Sequence

import numpy as np

from qonnx_kit.ir import QONNX_DOMAIN, DType, Graph, Model, NodeDef, TensorValue, ValueInfo


class GraphBuilder:
    def __init__(self, name: str = "graph"):
        self.name = name
        self.nodes: list[NodeDef] = []
        self.inputs: list[ValueInfo] = []
        self.outputs: list[ValueInfo] = []
        self.initializers: dict[str, TensorValue] = {}
        self.value_info: list[ValueInfo] = []
        self._counter = itertools.count()
        self._taken: set[str] = set()

    def fresh(self, prefix: str) -> str:
        while True:
            name = f"{prefix}_{next(self._counter)}"
            if name not in self._taken:
                self._taken.add(name)
                return name

    def input(self, name: str, shape: Sequence, dtype: DType = DType.FLOAT32) -> str:
        self._taken.add(name)
        self.inputs.append(ValueInfo(name, dtype, tuple(shape)))
        return name

    def output(self, name: str, shape: Sequence | None = None, dtype: DType | None = DType.FLOAT32) -> str:
        self.outputs.append(ValueInfo(name, dtype, None if shape is None else tuple(shape)))
        return name

    def const(self, value: Any, dtype: DType | str = DType.FLOAT32, name: str | None = None) -> str:
        name = name or self.fresh("const")
        self._taken.add(name)
        if isinstance(value, TensorValue):
            self.initializers[name] = value
        else:
            self.initializers[name] = TensorValue.of(value, dtype)
        return name

    def node(self, op_type: str, inputs: Sequence[str], n_outputs: int = 1, *,
             outputs: Sequence[str] | None = None, domain: str = "", name: str | None = None,
             **attrs: Any):
        name = name or self.fresh(op_type)
        if outputs is None:
            outputs = [f"{name}_out{i}" if n_outputs > 1 else f"{name}_out" for i in range(n_outputs)]
        self._taken.update(outputs)
        attrs = {k: v for k, v in attrs.items() if v is not None}
        self.nodes.append(NodeDef(op_type, tuple(inputs), tuple(outputs), attrs, domain, name))
        return outputs[0] if len(outputs) == 1 else list(outputs)

    def _param(self, value: Any, dtype: DType = DType.FLOAT32) -> str:
        if isinstance(value, str):
            return value
        return self.const(np.asarray(value, dtype=dtype.numpy), dtype)

    def quant(self, x: str, scale: Any, zero_point: Any = 0.0, bit_width: Any = 8, *,
              signed: bool = True, narrow: bool = False, rounding_mode: str = "ROUND",
              out: str | None = None, name: str | None = None) -> str:
        """Add a Quant node; numeric parameters become float32 initializers."""
        ins = [x, self._param(scale), self._param(zero_point), self._param(bit_width)]
        return self.node(
            "Quant", ins, outputs=[out] if out else None, domain=QONNX_DOMAIN, name=name,
            signed=int(signed), narrow=int(narrow), rounding_mode=rounding_mode,
        )

    def bipolar_quant(self, x: str, scale: Any, out: str | None = None) -> str:
        return self.node("BipolarQuant", [x, self._param(scale)], outputs=[out] if out else None,
                         domain=QONNX_DOMAIN)

    def trunc(self, x: str, scale: Any, zero_point: Any, in_bit_width: Any, out_bit_width: Any,
              rounding_mode: str = "FLOOR", out: str | None = None) -> str:
        ins = [x, self._param(scale), self._param(zero_point), self._param(in_bit_width),
               self._param(out_bit_width)]
        return self.node("Trunc", ins, outputs=[out] if out else None, domain=QONNX_DOMAIN,
                         rounding_mode=rounding_mode)

    def graph(self) -> Graph:
        return Graph(self.nodes, self.inputs, self.outputs, self.initializers, self.value_info, self.name)

    def model(self, opset: int = 13, **kwargs: Any) -> Model:
        return Model(self.graph(), opset_imports=(("", opset), (QONNX_DOMAIN, 1)), **kwargs)
