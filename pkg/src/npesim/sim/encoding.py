"""Input encodings: Poisson spike trains and quantized activations."""

from __future__ import annotations

import numpy as np

from ..bf16 import BF16_ZERO, round_to_bf16
from ..errors import ConfigError
from ..isa import Mnemonic, alu


def poisson_encode(image, steps: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Independent Bernoulli(value) spikes per pixel and step, shape (steps, pixels)."""
    x = np.asarray(image, dtype=np.float64).ravel()
    if x.size and (np.isnan(x).any() or x.min() < 0 or x.max() > 1):
        raise ConfigError("pixel intensities must lie in [0, 1]")
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.random((steps, x.size)) < x


def quantize_activation(x, q) -> np.ndarray:
    """ReLU then round to a multiple of ``q``, with the same BF16 ops as the delta kernel.

    Takes and returns bit patterns.
    """
    xb = np.asarray(x, dtype=np.uint16)
    qb = np.full_like(xb, q)
    r = alu(Mnemonic.MAX, xb, np.full_like(xb, BF16_ZERO))
    r = alu(Mnemonic.DIV, r, qb)
    r = alu(Mnemonic.RND, r)
    return alu(Mnemonic.MUL, r, qb)


def delta_events(prev_bits, new_bits) -> tuple[np.ndarray, np.ndarray]:
    """Indices and BF16 payloads of the non-zero differences ``new - prev``."""
    d = alu(Mnemonic.SUB, new_bits, prev_bits)
    idx = np.flatnonzero(d & 0x7FFF)
    return idx, d[idx]


def to_bits(values) -> np.ndarray:
    return round_to_bf16(np.asarray(values, dtype=np.float64))
