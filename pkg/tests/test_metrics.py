import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bops_decimal, conv_macs_loop
from qonnx_kit import zoo
from qonnx_kit.builder import GraphBuilder
from qonnx_kit.errors import ArgumentError, ShapeError
from qonnx_kit.ir import DType, Graph, Model, NodeDef, ValueInfo
from qonnx_kit.lowering import lower_to_qcdq
from qonnx_kit.metrics import format_table, layer_bops, model_stats, to_json_lines
from qonnx_kit.passes import cleanup, to_channels_last

# published reference counts for the TFC topology
TFC_MACS = 59_008
TFC_WEIGHTS = 59_008


@pytest.mark.parametrize("w_bits,a_bits,weight_bits", [(1, 1, 59_008), (1, 2, 59_008), (2, 2, 118_016)])
def test_tfc_table_values(w_bits, a_bits, weight_bits):
    stats = model_stats(zoo.tfc(w_bits, a_bits))
    assert stats.total_macs == TFC_MACS
    assert stats.total_weights == TFC_WEIGHTS
    assert stats.total_weight_bits == weight_bits
    assert [layer.macs for layer in stats.layers] == [50_176, 4_096, 4_096, 640]


def test_tfc_bit_widths_traced():
    layers = model_stats(zoo.tfc(2, 2)).layers
    assert [(l.b_a, l.b_w) for l in layers] == [(8, 2), (2, 2), (2, 2), (2, 2)]
    assert all(l.kind == "fully_connected" and l.k == 1 for l in layers)


@pytest.mark.parametrize("args", [(16, 8, 3, 4, 4), (64, 784, 1, 1, 1), (1, 1, 1, 1, 1), (10, 64, 1, 2, 2),
                                  (256, 16, 3, 2, 2), (7, 13, 5, 3, 8)])
def test_layer_bops_matches_decimal_oracle(args):
    assert math.isclose(layer_bops(*args), float(bops_decimal(*args)), rel_tol=1e-12)


def test_layer_bops_frozen_values():
    # independent Decimal evaluation, frozen
    assert math.isclose(layer_bops(16, 8, 3, 4, 4), 34755.753601661544, rel_tol=1e-12)
    assert math.isclose(layer_bops(64, 784, 1, 1, 1), 632955.68113832469, rel_tol=1e-12)
    assert layer_bops(1, 1, 1, 1, 1) == 3


@pytest.mark.parametrize("bad", [(0, 1, 1, 1, 1), (1, -1, 1, 1, 1), (1, 1, 0, 1, 1), (1, 1, 1, 0.5, 1),
                                 (1, 1, 1, 1, float("nan"))])
def test_layer_bops_rejects_small_arguments(bad):
    with pytest.raises(ArgumentError) as info:
        layer_bops(*bad)
    assert info.value.code == "E_ARG"


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(1, 512), min_size=5, max_size=5), st.integers(0, 4), st.integers(1, 64))
def test_layer_bops_strictly_increasing(args, which, delta):
    bigger = list(args)
    bigger[which] += delta
    assert layer_bops(*bigger) > layer_bops(*args)


def conv_model(n=3, m=8, k=3, hw=32, layout_attr=None):
    b = GraphBuilder()
    x = b.input("x", [1, n, hw, hw])
    w = b.quant(b.const(np.ones((m, n, k, k))), 0.5, 0, 4)
    b.node("Conv", [b.quant(x, 0.25, 0, 3), w], outputs=["y"], name="conv")
    b.output("y")
    return b.model()


def test_conv_macs_against_loop_counter():
    (layer,) = model_stats(conv_model()).layers
    assert layer.macs == conv_macs_loop(3, 8, 3, 30, 30) == 194_400
    assert (layer.n, layer.m, layer.k, layer.b_a, layer.b_w) == (3, 8, 3, 3, 4)
    assert layer.output_positions == 900
    assert layer.bops_per_position_total == pytest.approx(layer.bops * 900, rel=1e-15)
    assert layer.weight_bits == layer.weights * 4


def test_unquantized_activation_defaults_to_float():
    b = GraphBuilder()
    h = b.node("Relu", [b.input("x", [1, 4])])
    h = b.node("Mul", [h, b.const(2.0)])
    b.node("MatMul", [h, b.const(np.ones((4, 2)))], outputs=["y"])
    b.output("y")
    (layer,) = model_stats(b.model()).layers
    assert (layer.b_a, layer.b_w) == (32, 32)


def test_first_layer_input_defaults_to_eight_bits():
    (layer,) = model_stats(zoo.conv_relu_conv()).layers[:1]
    assert layer.b_a == 8


def test_gemm_trans_b():
    b = GraphBuilder()
    b.node("Gemm", [b.input("x", [1, 5]), b.const(np.ones((3, 5)))], outputs=["y"], transB=1)
    b.output("y")
    (layer,) = model_stats(b.model()).layers
    assert (layer.n, layer.m, layer.macs) == (5, 3, 15)


def test_uninferred_shape_is_an_error():
    g = Graph([NodeDef("Conv", ("x", "w"), ("y",))], [ValueInfo("x", DType.FLOAT32, ("N", 3, "H", "W"))],
              [ValueInfo("y")], {"w": __import__("qonnx_kit").TensorValue(np.ones((2, 3, 3, 3), np.float32))})
    with pytest.raises(ShapeError):
        model_stats(Model(g))


@pytest.mark.parametrize("name", ["tfc_w1a1", "tfc_w2a2", "shape_chain", "cnv_like", "conv_relu_conv"])
def test_totals_are_sums(name):
    stats = model_stats(zoo.FIXTURES[name]())
    assert stats.total_macs == sum(l.macs for l in stats.layers)
    assert stats.total_weights == sum(l.weights for l in stats.layers)
    assert stats.total_weight_bits == sum(l.weight_bits for l in stats.layers)
    assert stats.total_bops == pytest.approx(sum(l.bops for l in stats.layers), rel=1e-15)


@pytest.mark.parametrize("name", ["tfc_w2a2", "shape_chain", "cnv_like", "conv_relu_conv"])
def test_invariant_under_cleanup_and_channels_last(name):
    m = zoo.FIXTURES[name]()
    clean = cleanup(m)[0]
    nhwc = to_channels_last(clean)[0]
    flipped = to_channels_last(clean, change_io_layout=True)[0]
    ref = model_stats(m)
    for other in (clean, nhwc, flipped):
        assert model_stats(other) == ref


def test_same_bits_read_from_qcdq():
    m = cleanup(zoo.cnv_like())[0]
    low = lower_to_qcdq(m)[0]
    a, b = model_stats(m), model_stats(low)
    assert [(l.macs, l.b_a, l.b_w, l.weight_bits) for l in a.layers] == \
        [(l.macs, l.b_a, l.b_w, l.weight_bits) for l in b.layers]


def test_machine_format_round_trips():
    stats = model_stats(zoo.tfc(2, 2))
    records = [json.loads(line) for line in to_json_lines(stats).splitlines()]
    assert [r["record"] for r in records] == ["layer"] * 4 + ["totals"]
    assert records[-1]["total_macs"] == TFC_MACS
    assert records[0]["layer_name"] == "fc0"


def test_human_table_lists_totals():
    text = format_table(model_stats(zoo.tfc(1, 1)))
    assert "59,008" in text.splitlines()[-1]
