"""Reference element-wise semantics of uniform quantization.

Intermediate arithmetic is done in float64 and results are cast to float32 at
the end, so rounding decisions do not depend on the platform's float32 code
paths. Scale, zero point and bit width follow multidirectional broadcasting
against the data tensor, which is how per-tensor and per-channel variants are
expressed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qonnx_kit.errors import BitWidthError, BroadcastError, QonnxError, UnsupportedError


class RoundingMode(str, enum.Enum):
    ROUND = "ROUND"  # half to even
    ROUND_TO_ZERO = "ROUND_TO_ZERO"
    CEIL = "CEIL"
    FLOOR = "FLOOR"

    @classmethod
    def parse(cls, value: "str | RoundingMode") -> "RoundingMode":
        try:
            return cls(value.upper() if isinstance(value, str) else value)
        except ValueError:
            raise UnsupportedError(f"unknown rounding mode {value!r}") from None


_ROUNDERS = {
    RoundingMode.ROUND: np.rint,
    RoundingMode.ROUND_TO_ZERO: np.trunc,
    RoundingMode.CEIL: np.ceil,
    RoundingMode.FLOOR: np.floor,
}


def apply_rounding(values: np.ndarray, mode: RoundingMode | str) -> np.ndarray:
    return _ROUNDERS[RoundingMode.parse(mode)](np.asarray(values, dtype=np.float64))


def broadcast_shapes(a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
    """Multidirectional (numpy-style) broadcast of two static shapes."""
    a, b = tuple(a), tuple(b)
    rank = max(len(a), len(b))
    a = (1,) * (rank - len(a)) + a
    b = (1,) * (rank - len(b)) + b
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise BroadcastError(f"shapes {list(a)} and {list(b)} do not broadcast")
    return tuple(out)


def _broadcast_all(*arrays: np.ndarray) -> tuple[int, ...]:
    shape: tuple[int, ...] = ()
    for arr in arrays:
        shape = broadcast_shapes(shape, np.shape(arr))
    return shape


@dataclass(frozen=True)
class ClampBounds:
    y_min: float
    y_max: float


def _bounds(bit_width: np.ndarray, signed: bool, narrow: bool) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(bit_width, dtype=np.float64)
    if np.any(~(b >= 2)):
        raise BitWidthError(f"bit width must be >= 2, got {b.min() if b.size else b}")
    if signed:
        y_min = -np.exp2(b - 1)
        y_max = np.exp2(b - 1) - 1
        if narrow:
            y_min = y_min + 1
    else:
        y_min = np.zeros_like(b)
        y_max = np.exp2(b) - 1
        if narrow:
            y_max = y_max - 1
    # real-valued bit widths describe an interval that is not a power of two;
    # shrink it to the integers it contains
    return np.ceil(y_min), np.floor(y_max)


def clamp_bounds(bit_width: float, signed: bool, narrow: bool) -> ClampBounds:
    lo, hi = _bounds(np.float64(bit_width), signed, narrow)
    return ClampBounds(float(lo), float(hi))


@dataclass(frozen=True)
class QuantParams:
    scale: np.ndarray
    zero_point: np.ndarray
    bit_width: np.ndarray
    signed: bool = True
    narrow: bool = False
    rounding_mode: RoundingMode = RoundingMode.ROUND

    def __post_init__(self):
        for name in ("scale", "zero_point", "bit_width"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "rounding_mode", RoundingMode.parse(self.rounding_mode))
        if np.any(~(self.scale > 0)):
            raise QonnxError("scale must be strictly positive", code="E_ARG")
        if np.any(~(self.bit_width >= 2)):
            raise BitWidthError("bit width must be >= 2")

    @classmethod
    def of(cls, scale, zero_point=0.0, bit_width=8, signed=True, narrow=False,
           rounding_mode="ROUND") -> "QuantParams":
        # go through float32 so scalars behave like the tensors found in models
        return cls(
            np.asarray(scale, dtype=np.float32),
            np.asarray(zero_point, dtype=np.float32),
            np.asarray(bit_width, dtype=np.float32),
            bool(signed),
            bool(narrow),
            RoundingMode.parse(rounding_mode),
        )

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return _bounds(self.bit_width, self.signed, self.narrow)


def _quantize64(x: np.ndarray, p: QuantParams) -> np.ndarray:
    x = np.asarray(x)
    _broadcast_all(x, p.scale, p.zero_point, p.bit_width)
    y_min, y_max = p.bounds
    v = x.astype(np.float64) / p.scale + p.zero_point
    # "+ 0.0" turns -0.0 into +0.0 so codes and outputs have one zero
    return np.clip(apply_rounding(v, p.rounding_mode), y_min, y_max) + 0.0


def quantize(x: np.ndarray, p: QuantParams) -> np.ndarray:
    """Integer codes clamp(round(x / s + z), y_min, y_max), stored as float32."""
    return _quantize64(x, p).astype(np.float32)


def dequantize(y: np.ndarray, scale: np.ndarray, zero_point: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    _broadcast_all(y, scale, zero_point)
    s = np.asarray(scale, dtype=np.float64)
    z = np.asarray(zero_point, dtype=np.float64)
    return (s * (y.astype(np.float64) - z)).astype(np.float32)


def quant_op(x: np.ndarray, p: QuantParams) -> np.ndarray:
    """Fused quantize-dequantize."""
    q = _quantize64(x, p)
    return (p.scale * (q - p.zero_point) + 0.0).astype(np.float32)


def bipolar_quant_op(x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """s * sign(x) with sign(0) = +1."""
    x = np.asarray(x)
    s = np.asarray(scale, dtype=np.float64)
    _broadcast_all(x, s)
    if np.any(~(s > 0)):
        raise QonnxError("scale must be strictly positive", code="E_ARG")
    sign = np.where(x.astype(np.float64) >= 0, 1.0, -1.0)
    return (s * sign).astype(np.float32)


_TRUNC_MODES = (RoundingMode.ROUND, RoundingMode.CEIL, RoundingMode.FLOOR)


def trunc_op(
    x: np.ndarray,
    scale: np.ndarray,
    zero_point: np.ndarray,
    in_bit_width: np.ndarray,
    out_bit_width: np.ndarray,
    mode: RoundingMode | str = RoundingMode.FLOOR,
) -> np.ndarray:
    """Drop the (in_bit_width - out_bit_width) least significant bits.

    No clamping is applied, and the input's scale and zero point are reused
    for the output.
    """
    mode = RoundingMode.parse(mode)
    if mode not in _TRUNC_MODES:
        raise UnsupportedError(f"Trunc does not support rounding mode {mode.value}")
    x = np.asarray(x)
    s = np.asarray(scale, dtype=np.float64)
    z = np.asarray(zero_point, dtype=np.float64)
    b_in = np.asarray(in_bit_width, dtype=np.float64)
    b_out = np.asarray(out_bit_width, dtype=np.float64)
    _broadcast_all(x, s, z, b_in, b_out)
    if np.any(~(b_in >= 2)) or np.any(~(b_out >= 2)):
        raise BitWidthError("Trunc bit widths must be >= 2")
    if np.any(b_out > b_in):
        raise BitWidthError("Trunc out_bit_width must not exceed in_bit_width")
    q = np.rint(x.astype(np.float64) / s + z)
    shifted = apply_rounding(q / np.exp2(b_in - b_out), mode)
    return (s * (shifted - z) + 0.0).astype(np.float32)
