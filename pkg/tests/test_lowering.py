import numpy as np
import onnxruntime as ort
import pytest

from randgraphs import quant_matmul_quant, single_quant
from qonnx_kit import zoo
from qonnx_kit.builder import GraphBuilder
from qonnx_kit.errors import ArgumentError, QonnxError
from qonnx_kit.executor import execute, random_inputs
from qonnx_kit.ir import QONNX_DOMAIN, TensorValue
from qonnx_kit.kernels import clamp_bounds
from qonnx_kit.lowering import LoweringConfig, lower_to_qcdq, raise_from_qcdq, recover_bit_width
from qonnx_kit.passes import cleanup
from qonnx_kit.serde import serialize_model


def quant_model(bits=4, signed=True, narrow=False, z=0.0, s=0.25, mode="ROUND", width=6):
    b = GraphBuilder()
    b.quant(b.input("x", [1, width]), s, z, bits, signed=signed, narrow=narrow, rounding_mode=mode, out="y")
    b.output("y", [1, width])
    return b.model()


def ops(model):
    return [n.op_type for n in model.graph.nodes]


def clip_bounds(model):
    clip = next(n for n in model.graph.nodes if n.op_type == "Clip")
    init = model.graph.initializers
    return int(init[clip.inputs[1]].data), int(init[clip.inputs[2]].data)


def quant_nodes(model):
    return [n for n in model.graph.nodes if n.op_type == "Quant"]


def quant_signature(model, node):
    """(scale bits, zero point, clamp bounds) of a Quant node."""
    init = model.graph.initializers
    s, z, b = (init[node.inputs[i]].data for i in (1, 2, 3))
    bounds = clamp_bounds(float(b), bool(node.attr("signed", 1)), bool(node.attr("narrow", 0)))
    return (np.asarray(s, np.float32).reshape(-1).tobytes(), float(z), int(bounds.y_min), int(bounds.y_max))


def assert_bit_exact(a, b, seeds=range(3)):
    for seed in seeds:
        inputs = random_inputs(a, seed, low=-40, high=40)
        ra, rb = execute(a, inputs), execute(b, inputs)
        for k in ra:
            assert np.array_equal(ra[k].data.view(np.uint32), rb[k].data.view(np.uint32)), k


# ---------------------------------------------------------------- lowering examples


def test_four_bit_signed_gets_clip():
    low, _ = lower_to_qcdq(quant_model(4))
    assert ops(low) == ["QuantizeLinear", "Clip", "DequantizeLinear"]
    assert clip_bounds(low) == (-8, 7)
    ql = low.graph.nodes[0]
    assert low.graph.initializers[ql.inputs[2]].data.dtype == np.int8


def test_unsigned_uses_uint8():
    low, _ = lower_to_qcdq(quant_model(3, signed=False, z=2.0))
    assert clip_bounds(low) == (0, 7)
    assert low.graph.initializers[low.graph.nodes[0].inputs[2]].data.dtype == np.uint8


@pytest.mark.parametrize("signed", [True, False])
def test_eight_bit_omits_clip(signed):
    low, _ = lower_to_qcdq(quant_model(8, signed=signed))
    assert ops(low) == ["QuantizeLinear", "DequantizeLinear"]
    b = clamp_bounds(8, signed, False)
    info = np.iinfo(np.int8 if signed else np.uint8)
    assert (b.y_min, b.y_max) == (info.min, info.max)


def test_eight_bit_narrow_keeps_clip():
    low, _ = lower_to_qcdq(quant_model(8, narrow=True))
    assert clip_bounds(low) == (-127, 127)


@pytest.mark.parametrize("model,code", [
    (zoo.quant_b9(), "E_BITWIDTH"),
    (quant_model(4.5), "E_BITWIDTH"),
    (zoo.per_channel_bit_width(), "E_PER_CHANNEL_BITWIDTH"),
    (zoo.dynamic_scale(), "E_DYNAMIC_PARAM"),
    (zoo.trunc_avgpool(), "E_UNSUPPORTED"),
    (zoo.tfc(1, 1), "E_UNSUPPORTED"),
    (quant_model(4, z=0.5), "E_ZERO_POINT"),
    (quant_model(4, z=300.0), "E_ZERO_POINT"),
    (quant_model(4, mode="FLOOR"), "E_UNSUPPORTED"),
])
def test_lowering_errors(model, code):
    with pytest.raises(QonnxError) as info:
        lower_to_qcdq(model)
    assert info.value.code == code


def test_b9_message_names_limit():
    with pytest.raises(QonnxError, match="<= 8"):
        lower_to_qcdq(zoo.quant_b9())


def test_per_channel_zero_point_rejected():
    with pytest.raises(QonnxError) as info:
        lower_to_qcdq(quant_model(4, z=np.float32([[0, 1, 0, 1, 0, 1]])))
    assert info.value.code == "E_PER_CHANNEL_BITWIDTH"


def test_config_opset_floor():
    with pytest.raises(ArgumentError):
        LoweringConfig(target_opset=9)


def with_opset(model, version):
    return model.with_opset("", version)


def test_low_opset_rejects_integer_clip():
    with pytest.raises(QonnxError):
        lower_to_qcdq(with_opset(quant_model(4), 11), LoweringConfig(target_opset=11))
    low, _ = lower_to_qcdq(with_opset(quant_model(8), 10), LoweringConfig(target_opset=10))
    assert low.opset() == 10


def test_opset_never_downgraded():
    low, _ = lower_to_qcdq(quant_model(4), LoweringConfig(target_opset=11))
    assert low.opset() == 13 and "Clip" in ops(low)


def test_bipolar_emulation_when_allowed():
    m = zoo.tfc(1, 1)
    low, _ = lower_to_qcdq(m, LoweringConfig(allow_bipolar=True))
    assert "Sign" in ops(low)
    assert_bit_exact(m, low)
    b = GraphBuilder()
    b.bipolar_quant(b.input("x", [5]), 0.5, out="y")
    b.output("y")
    small = b.model()
    low, _ = lower_to_qcdq(small, LoweringConfig(allow_bipolar=True))
    x = np.float32([-2, -0.0, 0, 1e-30, 3])
    assert execute(low, {"x": x})["y"].data.tolist() == [-0.5, 0.5, 0.5, 0.5, 0.5]


@pytest.mark.parametrize("name", ["minimal_quant", "tfc_w2a2", "shape_chain", "cnv_like"])
def test_lowered_fixtures_bit_exact(name):
    m = cleanup(zoo.FIXTURES[name]())[0]
    low, report = lower_to_qcdq(m)
    assert report.rewrites_applied == len(quant_nodes(m))
    assert {n.domain for n in low.graph.nodes} <= {""}
    assert all(domain != QONNX_DOMAIN for domain, _ in low.opset_imports)
    assert_bit_exact(m, low)


def test_per_channel_scale_uses_axis():
    m = quant_model(4, s=np.float32([[0.5, 0.25, 0.125, 1, 2, 4]]))
    low, _ = lower_to_qcdq(m)
    assert low.graph.nodes[0].attr("axis") == 1
    assert_bit_exact(m, low)


@pytest.mark.parametrize("seed", range(25))
def test_random_graphs_bit_exact_and_accepted_by_onnxruntime(seed):
    m, _ = (single_quant if seed % 2 else quant_matmul_quant)(seed)
    low, _ = lower_to_qcdq(m)
    assert_bit_exact(m, low)
    inputs = random_inputs(m, seed, low=-40, high=40)
    ours = execute(low, inputs)["y"].data
    sess = ort.InferenceSession(serialize_model(low), providers=["CPUExecutionProvider"])
    theirs = sess.run(None, {k: v.data for k, v in inputs.items()})[0]
    assert np.array_equal(ours, theirs)


def test_odd_zero_point_tie_is_a_known_gap():
    # Quant rounds x/s + z; QuantizeLinear rounds x/s and then adds z.
    m = quant_model(8, z=1.0, s=1.0, width=1)
    low, _ = lower_to_qcdq(m)
    x = {"x": np.float32([[0.5]])}
    assert execute(m, x)["y"].data.item() == 1.0  # rint(1.5) - 1
    assert execute(low, x)["y"].data.item() == 0.0  # rint(0.5) + 1 - 1


# ---------------------------------------------------------------- raising


def qcdq(lo, hi, dtype=np.int8, s=0.25, z=0, s_dq=None):
    b = GraphBuilder()
    sc = b.const(np.float32(s))
    zp = b.const(TensorValue(np.asarray(z, dtype)))
    q = b.node("QuantizeLinear", [b.input("x", [1, 4]), sc, zp])
    if lo is not None:
        q = b.node("Clip", [q, b.const(TensorValue(np.asarray(lo, dtype))), b.const(TensorValue(np.asarray(hi, dtype)))])
    sd = sc if s_dq is None else b.const(np.float32(s_dq))
    b.node("DequantizeLinear", [q, sd, zp], outputs=["y"])
    b.output("y", [1, 4])
    return b.model()


@pytest.mark.parametrize("lo,hi,dtype,bits,narrow", [
    (-8, 7, np.int8, 4, False),
    (-127, 127, np.int8, 8, True),
    (-1, 1, np.int8, 2, True),
    (0, 15, np.uint8, 4, False),
    (None, None, np.int8, 8, False),
    (None, None, np.uint8, 8, False),
])
def test_raise_examples(lo, hi, dtype, bits, narrow):
    m = qcdq(lo, hi, dtype)
    raised, report = raise_from_qcdq(m)
    (q,) = quant_nodes(raised)
    assert float(raised.graph.initializers[q.inputs[3]].data) == bits
    assert bool(q.attr("narrow")) == narrow
    assert bool(q.attr("signed")) == (dtype == np.int8)
    assert report.rewrites_applied == 1
    assert_bit_exact(m, raised)


def test_recover_bit_width_inverts_bounds():
    for signed in (True, False):
        for bits in range(2, 9):
            for narrow in (False, True):
                b = clamp_bounds(bits, signed, narrow)
                got = recover_bit_width(int(b.y_min), int(b.y_max), signed)
                assert got is not None
                again = clamp_bounds(got[0], signed, got[1])
                assert (again.y_min, again.y_max) == (b.y_min, b.y_max)
    assert recover_bit_width(-5, 9, True) is None


def test_mismatched_scale_left_alone():
    m = qcdq(-8, 7, s=0.25, s_dq=0.5)
    raised, report = raise_from_qcdq(m)
    assert raised == m or ops(raised) == ops(m)
    assert report.rewrites_applied == 0 and report.notes


def test_unmatched_clip_bounds_left_alone():
    raised, report = raise_from_qcdq(qcdq(-5, 9))
    assert not quant_nodes(raised) and report.notes


@pytest.mark.parametrize("seed", range(25))
def test_round_trip_recovers_parameters(seed):
    m, _ = (single_quant if seed % 2 else quant_matmul_quant)(seed)
    raised, _ = raise_from_qcdq(lower_to_qcdq(m)[0])
    before = [quant_signature(m, n) for n in quant_nodes(m)]
    after = [quant_signature(raised, n) for n in quant_nodes(raised)]
    assert before == after
    assert_bit_exact(m, raised)


def test_round_trip_restores_qonnx_import():
    raised, _ = raise_from_qcdq(lower_to_qcdq(zoo.minimal_quant())[0])
    assert raised.opset(QONNX_DOMAIN) is not None
