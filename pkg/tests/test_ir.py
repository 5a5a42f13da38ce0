import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qonnx_kit import zoo
from qonnx_kit.builder import GraphBuilder
from qonnx_kit.errors import CycleError, UnsupportedDTypeError
from qonnx_kit.ir import (
    QONNX_DOMAIN,
    DType,
    Graph,
    Model,
    NodeDef,
    TensorValue,
    ValueInfo,
    errors_only,
    topological_order,
    validate_model,
)


def _chain_graph(order):
    """Nodes n0 -> n1 -> ... listed in the given file order."""
    nodes = [NodeDef("Relu", (f"t{i}",), (f"t{i + 1}",), name=f"n{i}") for i in range(len(order))]
    return Graph([nodes[i] for i in order], [ValueInfo("t0", DType.FLOAT32, (1,))],
                 [ValueInfo(f"t{len(order)}", DType.FLOAT32, (1,))])


def test_tensor_value_equality_is_bitwise():
    a = TensorValue(np.float32([0.0]))
    b = TensorValue(np.float32([-0.0]))
    assert a != b
    assert TensorValue(np.float32([np.nan])) == TensorValue(np.float32([np.nan]))
    assert TensorValue.of([1, 2], DType.INT8) != TensorValue.of([1, 2], DType.INT32)


def test_tensor_value_is_immutable_copy():
    src = np.zeros(3, np.float32)
    t = TensorValue(src)
    src[0] = 5
    assert t.data[0] == 0
    with pytest.raises(ValueError):
        t.data[0] = 1


def test_tensor_value_rejects_unsupported_dtype():
    with pytest.raises(UnsupportedDTypeError):
        TensorValue(np.zeros(2, np.float16))


def test_scalar_shape_and_size():
    t = TensorValue(np.float32(3.0))
    assert t.shape == () and t.size == 1


def test_node_attributes_are_frozen():
    n = NodeDef("Quant", ("x", "s", "z", "b"), ("y",), {"signed": True}, QONNX_DOMAIN)
    assert n.attr("signed") == 1
    with pytest.raises(TypeError):
        n.attributes["signed"] = 0
    assert n.with_attributes(narrow=1).attr("narrow") == 1
    assert n.is_qonnx


def test_valid_fixtures_have_no_diagnostics():
    for name, build in zoo.FIXTURES.items():
        assert validate_model(build()) == [], name


def _single_quant(scale=0.5, bits=4.0, zero=0.0):
    b = GraphBuilder()
    x = b.input("x", [1, 4])
    b.quant(x, scale, zero, bits, out="y")
    b.output("y")
    return b.model()


def test_bit_width_one_is_flagged():
    diags = validate_model(_single_quant(bits=1.0))
    assert any(">= 2" in d.message for d in errors_only(diags))


def test_negative_scale_is_flagged():
    diags = validate_model(_single_quant(scale=-0.5))
    assert any("positive scale factor" in d.message for d in errors_only(diags))


def test_non_integer_zero_point_is_only_a_warning():
    diags = validate_model(_single_quant(zero=0.5))
    assert diags and not errors_only(diags)


def test_arity_is_checked():
    g = Graph([NodeDef("Quant", ("x", "s"), ("y",), domain=QONNX_DOMAIN)],
              [ValueInfo("x"), ValueInfo("s")], [ValueInfo("y")])
    assert any("takes 4 inputs" in d.message for d in validate_model(Model(g)))


def test_undefined_input_and_duplicate_producer():
    g = Graph(
        [NodeDef("Relu", ("missing",), ("y",)), NodeDef("Relu", ("x",), ("y",))],
        [ValueInfo("x")], [ValueInfo("y")],
    )
    msgs = [d.message for d in validate_model(Model(g))]
    assert any("never defined" in m for m in msgs)
    assert any("also produced" in m for m in msgs)


def test_missing_default_opset():
    m = Model(_chain_graph([0]), opset_imports=((QONNX_DOMAIN, 1),))
    assert any("default ONNX domain" in d.message for d in validate_model(m))


def test_cycle_detected():
    g = Graph([NodeDef("Add", ("x", "b"), ("a",)), NodeDef("Relu", ("a",), ("b",))],
              [ValueInfo("x")], [ValueInfo("b")])
    with pytest.raises(CycleError):
        topological_order(g)
    assert any("cycle" in d.message for d in validate_model(Model(g)))


def test_self_loop_is_a_cycle():
    g = Graph([NodeDef("Relu", ("a",), ("a",))], [], [ValueInfo("a")])
    with pytest.raises(CycleError):
        topological_order(g)


def test_sorted_graph_keeps_identity_order():
    assert topological_order(_chain_graph([0, 1, 2, 3])) == [0, 1, 2, 3]


def test_independent_nodes_keep_file_order():
    g = Graph([NodeDef("Relu", ("x",), ("b",)), NodeDef("Relu", ("x",), ("a",))],
              [ValueInfo("x")], [ValueInfo("a"), ValueInfo("b")])
    assert topological_order(g) == [0, 1]


@given(st.permutations(range(6)))
def test_topological_order_respects_edges(perm):
    g = _chain_graph(list(perm))
    order = topological_order(g)
    assert sorted(order) == list(range(6))
    pos = {g.nodes[i].name: k for k, i in enumerate(order)}
    for a, b in itertools.pairwise(range(6)):
        assert pos[f"n{a}"] < pos[f"n{b}"]


@given(st.permutations(range(5)), st.data())
def test_topological_order_on_random_dags(perm, data):
    # random DAG: node j may read any earlier tensor
    nodes = []
    for j in range(5):
        src = data.draw(st.integers(0, j))
        nodes.append(NodeDef("Relu", (f"t{src}",), (f"t{j + 1}",), name=f"n{j}"))
    g = Graph([nodes[i] for i in perm], [ValueInfo("t0")], [ValueInfo("t5")])
    order = topological_order(g)
    done = {"t0"}
    for i in order:
        assert g.nodes[i].inputs[0] in done
        done.update(g.nodes[i].outputs)
