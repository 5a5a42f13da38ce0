"""Seeded generators of small QCDQ-eligible QONNX graphs."""

from dataclasses import dataclass

import numpy as np

from qonnx_kit.builder import GraphBuilder
from qonnx_kit.ir import Model
from qonnx_kit.kernels import clamp_bounds


@dataclass(frozen=True)
class QuantSpec:
    bits: int
    signed: bool
    narrow: bool
    zero_point: int
    scale: np.ndarray

    @property
    def bounds(self):
        b = clamp_bounds(self.bits, self.signed, self.narrow)
        return int(b.y_min), int(b.y_max)


def random_spec(rng: np.random.Generator, channels: int | None = None) -> QuantSpec:
    bits = int(rng.integers(2, 9))
    signed = bool(rng.integers(2))
    narrow = bool(rng.integers(2)) and signed
    z = int(rng.integers(-128, 128)) if signed else int(rng.integers(0, 256))
    shape = () if channels is None else (1, channels)
    scale = np.exp(rng.uniform(np.log(2**-8), np.log(4.0), size=shape)).astype(np.float32)
    return QuantSpec(bits, signed, narrow, z, scale)


def _add(b: GraphBuilder, x: str, spec: QuantSpec, **kw) -> str:
    return b.quant(x, spec.scale, float(spec.zero_point), float(spec.bits), signed=spec.signed,
                   narrow=spec.narrow, **kw)


def single_quant(seed: int) -> tuple[Model, list[QuantSpec]]:
    rng = np.random.default_rng(seed)
    width = int(rng.integers(1, 9))
    spec = random_spec(rng, width if rng.integers(2) else None)
    b = GraphBuilder(f"single_quant_{seed}")
    _add(b, b.input("x", [1, width]), spec, out="y")
    b.output("y", [1, width])
    return b.model(), [spec]


def quant_matmul_quant(seed: int) -> tuple[Model, list[QuantSpec]]:
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 17)), int(rng.integers(1, 9))
    first, second = random_spec(rng), random_spec(rng, m if rng.integers(2) else None)
    b = GraphBuilder(f"quant_matmul_quant_{seed}")
    h = _add(b, b.input("x", [1, n]), first)
    h = b.node("MatMul", [h, b.const(rng.normal(0, 1 / np.sqrt(n), size=(n, m)))])
    _add(b, h, second, out="y")
    b.output("y", [1, m])
    return b.model(), [first, second]
