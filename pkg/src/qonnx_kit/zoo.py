"""Small reference models built in code.

They double as test fixtures and as examples for the command-line tool. All
random weights come from a seeded generator, so the models are reproducible.
"""

from __future__ import annotations

import numpy as np

from qonnx_kit.builder import GraphBuilder
from qonnx_kit.ir import Model, TensorValue

TFC_WIDTHS = (784, 64, 64, 64, 10)


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def minimal_quant() -> Model:
    b = GraphBuilder("minimal_quant")
    x = b.input("x", [1, 4])
    b.quant(x, 0.5, 0.0, 4, out="y", name="quant")
    b.output("y", [1, 4])
    return b.model()


def quant_b9() -> Model:
    b = GraphBuilder("quant_b9")
    x = b.input("x", [1, 4])
    b.quant(x, 0.5, 0.0, 9, out="y", name="quant")
    b.output("y", [1, 4])
    return b.model()


def dynamic_scale() -> Model:
    b = GraphBuilder("dynamic_scale")
    x = b.input("x", [1, 4])
    s = b.input("scale", [])
    b.quant(x, s, 0.0, 4, out="y", name="quant")
    b.output("y", [1, 4])
    return b.model()


def per_channel_bit_width() -> Model:
    b = GraphBuilder("per_channel_bit_width")
    x = b.input("x", [1, 3])
    b.quant(x, 0.25, 0.0, np.float32([[2, 4, 8]]), out="y", name="quant")
    b.output("y", [1, 3])
    return b.model()


def tfc(w_bits: int = 1, a_bits: int = 1, seed: int = 0) -> Model:
    """Fully connected 784-64-64-64-10 network with 8-bit inputs.

    One-bit weights or activations use BipolarQuant, wider ones Quant.
    """
    rng = _rng(seed)
    b = GraphBuilder(f"tfc_w{w_bits}a{a_bits}")
    x = b.input("x", [1, TFC_WIDTHS[0]])
    h = b.quant(x, 1.0 / 255, 0.0, 8, signed=False, name="input_quant")
    n_layers = len(TFC_WIDTHS) - 1
    for i, (n, m) in enumerate(zip(TFC_WIDTHS, TFC_WIDTHS[1:])):
        w = b.const(rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, m)), name=f"fc{i}_weight")
        if w_bits == 1:
            wq = b.bipolar_quant(w, 1.0 / np.sqrt(n))
        else:
            wq = b.quant(w, 2.0 / np.sqrt(n) / 2 ** (w_bits - 1), 0.0, w_bits, narrow=True)
        last = i == n_layers - 1
        h = b.node("MatMul", [h, wq], name=f"fc{i}", outputs=["y"] if last else None)
        if not last:
            if a_bits == 1:
                h = b.bipolar_quant(h, 1.0)
            else:
                h = b.quant(h, 0.5, 0.0, a_bits)
    b.output("y", [1, TFC_WIDTHS[-1]])
    return b.model()


def _flatten_chain(b: GraphBuilder, x: str) -> str:
    """Reshape x to [batch, -1] through a Shape/Gather/Unsqueeze/Concat chain."""
    shape = b.node("Shape", [x], name="shape")
    idx = b.node("Constant", [], name="batch_index", value=TensorValue(np.asarray(0, dtype=np.int64)))
    batch = b.node("Gather", [shape, idx], name="gather", axis=0)
    axes = b.node("Constant", [], name="unsqueeze_axes", value=TensorValue(np.asarray([0], dtype=np.int64)))
    batch1 = b.node("Unsqueeze", [batch, axes], name="unsqueeze")
    rest = b.node("Constant", [], name="rest", value=TensorValue(np.asarray([-1], dtype=np.int64)))
    target = b.node("Concat", [batch1, rest], name="concat", axis=0)
    return b.node("Reshape", [x, target], name="reshape")


def shape_chain(seed: int = 0) -> Model:
    """Quantized activations flattened through a shape-computing chain, then MatMul."""
    rng = _rng(seed)
    b = GraphBuilder("shape_chain")
    x = b.input("x", [1, 4, 2, 2])
    q = b.quant(x, 0.125, 0.0, 4, name="act_quant")
    flat = _flatten_chain(b, q)
    w = b.const(rng.normal(size=(16, 3)), name="fc_weight")
    wq = b.quant(w, 0.25, 0.0, 3, name="weight_quant")
    b.node("MatMul", [flat, wq], name="fc", outputs=["y"])
    b.output("y", [1, 3])
    return b.model()


def cnv_like(seed: int = 0) -> Model:
    """Two conv blocks ending in a [1,256,4,4] activation, then a classifier."""
    rng = _rng(seed)
    b = GraphBuilder("cnv_like")
    x = b.input("x", [1, 3, 10, 10])
    h = b.quant(x, 1.0 / 128, 0.0, 8, name="input_quant")
    w0 = b.const(rng.normal(0, 0.2, size=(16, 3, 3, 3)), name="conv0_weight")
    h = b.node("Conv", [h, b.quant(w0, 0.125, 0.0, 2, narrow=True, name="conv0_wq")],
               name="conv0", kernel_shape=(3, 3))
    c = 16
    bn = [b.const(v, name=f"bn0_{k}") for k, v in (
        ("scale", rng.uniform(0.5, 1.5, c)), ("bias", rng.normal(0, 0.1, c)),
        ("mean", rng.normal(0, 0.1, c)), ("var", rng.uniform(0.5, 1.5, c)))]
    h = b.node("BatchNormalization", [h, *bn], name="bn0", epsilon=1e-5)
    h = b.quant(h, 0.5, 0.0, 2, name="act0_quant")
    h = b.node("MaxPool", [h], name="pool0", kernel_shape=(2, 2), strides=(2, 2))
    w1 = b.const(rng.normal(0, 0.05, size=(256, 16, 3, 3)), name="conv1_weight")
    h = b.node("Conv", [h, b.quant(w1, 0.0625, 0.0, 2, narrow=True, name="conv1_wq")],
               name="conv1", kernel_shape=(3, 3), pads=(1, 1, 1, 1))
    h = b.node("Relu", [h], name="relu1")
    h = b.quant(h, 0.5, 0.0, 2, signed=False, name="act1_quant")
    flat = _flatten_chain(b, h)
    w2 = b.const(rng.normal(0, 0.02, size=(4096, 10)), name="fc_weight")
    b.node("MatMul", [flat, b.quant(w2, 0.03125, 0.0, 2, narrow=True, name="fc_wq")], name="fc",
           outputs=["y"])
    b.output("y", [1, 10])
    return b.model()


def conv_relu_conv(seed: int = 0) -> Model:
    rng = _rng(seed)
    b = GraphBuilder("conv_relu_conv")
    x = b.input("x", [1, 3, 8, 8])
    w0 = b.const(rng.normal(size=(4, 3, 3, 3)), name="conv0_weight")
    h = b.node("Conv", [x, w0], name="conv0", pads=(1, 1, 1, 1))
    h = b.node("Relu", [h], name="relu")
    w1 = b.const(rng.normal(size=(5, 4, 3, 3)), name="conv1_weight")
    b.node("Conv", [h, w1], name="conv1", outputs=["y"])
    b.output("y", [1, 5, 6, 6])
    return b.model()


def trunc_avgpool(n_inputs: int = 4, bit_width: int = 8) -> Model:
    """Sum of quantized integer inputs followed by a FLOOR truncation dropping two bits."""
    b = GraphBuilder("trunc_avgpool")
    acc = None
    for i in range(n_inputs):
        x = b.input(f"x{i}", [1, 16])
        q = b.quant(x, 1.0, 0.0, bit_width, name=f"quant{i}")
        acc = q if acc is None else b.node("Add", [acc, q], name=f"add{i}")
    in_bits = bit_width + 2
    b.trunc(acc, 1.0, 0.0, in_bits, in_bits - 2, rounding_mode="FLOOR", out="y")
    b.output("y", [1, 16])
    return b.model()


FIXTURES = {
    "minimal_quant": minimal_quant,
    "quant_b9": quant_b9,
    "dynamic_scale": dynamic_scale,
    "per_channel_bit_width": per_channel_bit_width,
    "tfc_w1a1": lambda: tfc(1, 1),
    "tfc_w2a2": lambda: tfc(2, 2),
    "shape_chain": shape_chain,
    "cnv_like": cnv_like,
    "conv_relu_conv": conv_relu_conv,
    "trunc_avgpool": trunc_avgpool,
}
