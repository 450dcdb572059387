"""BrainFloat16 values and packed integer words.

Every datum the NPE touches is a 16-bit pattern. Floating point patterns use
the BF16 layout (1 sign, 8 exponent, 7 mantissa bits); integer data is packed
as two int8 or four int4 two's-complement lanes, lane 0 in the low bits.

The array functions here are the single source of truth for rounding; the
scalar helpers wrap them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BF16_ONE = 0x3F80
BF16_ZERO = 0x0000
BF16_NEG_ZERO = 0x8000
BF16_POS_INF = 0x7F80
BF16_NEG_INF = 0xFF80
BF16_QNAN = 0x7FC0

SIGN_MASK = 0x8000
_MIN_NORMAL_EXP = -126
_MANTISSA_BITS = 7


def round_to_bf16(x) -> np.ndarray:
    """Round float64 values to BF16 bit patterns, nearest-even.

    Subnormals are kept, overflow goes to signed infinity, NaN becomes a
    canonical quiet NaN (0x7FC0) carrying the input sign.
    """
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        _, exp = np.frexp(x)
        quantum = np.maximum(exp - 1, _MIN_NORMAL_EXP) - _MANTISSA_BITS
        # scaling by a power of two is exact; rint is round-half-even
        rounded = np.ldexp(np.rint(np.ldexp(x, -quantum)), quantum)
        as_f32 = rounded.astype(np.float32)
    bits = (as_f32.view(np.uint32) >> 16).astype(np.uint16)
    nan = np.isnan(x)
    if nan.any():
        canonical = np.where(np.signbit(x), SIGN_MASK | BF16_QNAN, BF16_QNAN)
        bits = np.where(nan, canonical, bits).astype(np.uint16)
    return bits


def bf16_to_float(bits) -> np.ndarray:
    """Exact widening of BF16 patterns to float64."""
    bits = np.asarray(bits, dtype=np.uint16)
    return (bits.astype(np.uint32) << 16).view(np.float32).astype(np.float64)


def encode(x: float) -> int:
    return int(round_to_bf16(np.float64(x)))


def decode(bits: int) -> float:
    return float(bf16_to_float(np.uint16(bits & 0xFFFF)))


def is_nan_bits(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint16)
    return ((bits & 0x7F80) == 0x7F80) & ((bits & 0x007F) != 0)


@dataclass(frozen=True)
class Value16:
    """A BF16 scalar held as its raw bit pattern."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"bit pattern out of range: {self.bits:#x}")

    @classmethod
    def from_float(cls, x: float) -> "Value16":
        return cls(encode(x))

    def __float__(self) -> float:
        return decode(self.bits)

    @property
    def is_zero(self) -> bool:
        return (self.bits & 0x7FFF) == 0

    def __repr__(self) -> str:
        return f"Value16({float(self)!r}, bits={self.bits:#06x})"


class PackMode(enum.Enum):
    BF16 = "bf16"
    INT8 = "int8"
    INT4 = "int4"

    @property
    def lanes(self) -> int:
        return {"bf16": 1, "int8": 2, "int4": 4}[self.value]

    @property
    def lane_bits(self) -> int:
        return 16 // self.lanes

    @property
    def lane_range(self) -> tuple[int, int]:
        half = 1 << (self.lane_bits - 1)
        return -half, half - 1


def unpack_lanes(bits, mode: PackMode) -> np.ndarray:
    """Split words into sign-extended integer lanes, shape (..., lanes)."""
    if mode is PackMode.BF16:
        raise ValueError("bf16 words carry no integer lanes")
    bits = np.asarray(bits, dtype=np.int32)
    width = mode.lane_bits
    shifts = np.arange(mode.lanes) * width
    raw = (bits[..., None] >> shifts) & ((1 << width) - 1)
    return np.where(raw >= 1 << (width - 1), raw - (1 << width), raw).astype(np.int16)


def pack_lanes(lanes, mode: PackMode) -> np.ndarray:
    """Inverse of :func:`unpack_lanes`; the last axis holds the lanes."""
    if mode is PackMode.BF16:
        raise ValueError("bf16 words carry no integer lanes")
    lanes = np.asarray(lanes, dtype=np.int32)
    if lanes.shape[-1] != mode.lanes:
        raise ValueError(f"{mode.value} packs {mode.lanes} lanes, got {lanes.shape[-1]}")
    lo, hi = mode.lane_range
    if (lanes < lo).any() or (lanes > hi).any():
        raise ValueError(f"lane value outside [{lo}, {hi}]")
    width = mode.lane_bits
    shifts = np.arange(mode.lanes) * width
    word = ((lanes & ((1 << width) - 1)) << shifts).sum(axis=-1)
    return word.astype(np.uint16)


@dataclass(frozen=True)
class PackedWord:
    bits: int
    mode: PackMode = PackMode.BF16

    def lanes(self) -> tuple:
        if self.mode is PackMode.BF16:
            return (Value16(self.bits),)
        return tuple(int(v) for v in unpack_lanes(self.bits, self.mode))

    @classmethod
    def from_lanes(cls, lanes: Sequence[int], mode: PackMode) -> "PackedWord":
        return cls(int(pack_lanes(list(lanes), mode)), mode)
