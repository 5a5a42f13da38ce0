"""Shared plumbing for graph-to-graph passes."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from qonnx_kit.ir import Graph, Model, NodeDef, ValueInfo


@dataclass
class PassReport:
    pass_name: str
    rewrites_applied: int = 0
    nodes_before: int = 0
    nodes_after: int = 0
    notes: list[str] = field(default_factory=list)

    def merge(self, other: "PassReport") -> None:
        self.rewrites_applied += other.rewrites_applied
        self.notes.extend(f"{other.pass_name}: {n}" for n in other.notes)

    def __str__(self) -> str:
        lines = [
            f"{self.pass_name}: {self.rewrites_applied} rewrite(s), "
            f"nodes {self.nodes_before} -> {self.nodes_after}"
        ]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


class GraphEditor:
    """Mutable working copy of a graph; passes edit it and then freeze it."""

    def __init__(self, graph: Graph):
        self.name = graph.name
        self.nodes: list[NodeDef] = list(graph.nodes)
        self.inputs: list[ValueInfo] = list(graph.inputs)
        self.outputs: list[ValueInfo] = list(graph.outputs)
        self.initializers = dict(graph.initializers)
        self.value_info: list[ValueInfo] = list(graph.value_info)
        self.quant_annotations = {k: dict(v) for k, v in graph.quant_annotations.items()}
        self._counter = itertools.count()

    def names_in_use(self) -> set[str]:
        used = set(self.initializers) | {vi.name for vi in self.inputs} | {vi.name for vi in self.outputs}
        for n in self.nodes:
            used.update(n.inputs)
            used.update(n.outputs)
            used.add(n.name)
        return used

    def fresh(self, base: str) -> str:
        used = self.names_in_use()
        while True:
            name = f"{base}_{next(self._counter)}" if base in used else base
            if name not in used:
                return name

    @property
    def output_names(self) -> set[str]:
        return {vi.name for vi in self.outputs}

    @property
    def input_names(self) -> set[str]:
        return {vi.name for vi in self.inputs}

    def producer(self, name: str) -> int | None:
        for i, n in enumerate(self.nodes):
            if name in n.outputs:
                return i
        return None

    def consumers(self, name: str) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if name in n.inputs]

    def is_used(self, name: str) -> bool:
        return name in self.output_names or any(name in n.inputs for n in self.nodes)

    def replace_uses(self, old: str, new: str) -> None:
        for i, n in enumerate(self.nodes):
            if old in n.inputs:
                self.nodes[i] = NodeDef(
                    n.op_type, tuple(new if x == old else x for x in n.inputs), n.outputs,
                    n.attributes, n.domain, n.name,
                )

    def graph(self) -> Graph:
        live = set(self.initializers)
        for n in self.nodes:
            live.update(n.outputs)
        live |= self.input_names
        annotations = {k: v for k, v in self.quant_annotations.items() if k in live}
        produced = {o for n in self.nodes for o in n.outputs}
        value_info = [vi for vi in self.value_info if vi.name in produced and vi.name not in self.output_names]
        return Graph(self.nodes, self.inputs, self.outputs, self.initializers, value_info, self.name, annotations)

    def model(self, like: Model) -> Model:
        return like.with_graph(self.graph())
