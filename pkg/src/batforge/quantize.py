"""Binarization, elastic activation quantization and the clip-unit bit logic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (BinWeight, NumericFault, QTensor, code_range, f16_mul_exact,
                   f16_round)

INT16_MIN, INT16_MAX = -(1 << 15), (1 << 15) - 1


class DegenerateWeightError(ValueError):
    pass


@dataclass
class ElasticParams:
    """Frozen quantizer parameters for one quantizer site.

    ``inv_scale`` is the pre-computed reciprocal; it is stored, never derived
    online.
    """

    scale: np.float16
    bias: np.float16 = np.float16(0.0)
    bit_width: int = 4
    signed: bool = True
    inv_scale: np.float16 | None = field(default=None)

    def __post_init__(self):
        self.scale = np.float16(self.scale)
        self.bias = np.float16(self.bias)
        if not self.scale > 0:
            raise ValueError("elastic scale must be positive")
        if self.inv_scale is None:
            self.inv_scale = f16_round(1.0 / float(self.scale))
        self.inv_scale = np.float16(self.inv_scale)

    @property
    def qrange(self) -> tuple[int, int]:
        return code_range(self.bit_width, self.signed)


def bwn_binarize(w: np.ndarray) -> BinWeight:
    """Sign bits plus mean-absolute-value scale; sign(0) is taken as +1."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot binarize an empty matrix")
    if w.ndim == 1:
        w = w[None, :]
    scale = np.abs(w).mean()
    if scale == 0:
        raise DegenerateWeightError("all-zero weight matrix has zero scale")
    return BinWeight.from_signs(np.where(w >= 0, 1, -1), scale)


def clip_unit(x, out_bits: int, signed: bool = True):
    """Saturate a 16-bit two's-complement value to ``out_bits`` using the
    compare-high-bits / select logic of the hardware clip stage."""
    if not 1 <= out_bits < 16:
        raise ValueError("clip_unit supports 1 <= out_bits < 16")
    scalar = np.ndim(x) == 0
    xs = np.asarray(x, dtype=np.int64)
    if ((xs < INT16_MIN) | (xs > INT16_MAX)).any():
        raise ValueError("clip_unit input must be a 16-bit signed integer")
    raw = xs.astype(np.int16).view(np.uint16).astype(np.int64)
    sign = (raw >> 15) & 1
    if signed:
        # bits [15 : N-1] must all equal the sign bit
        high = raw >> (out_bits - 1)
        ones = (1 << (16 - out_bits + 1)) - 1
        in_range = (high == 0) | (high == ones)
        sat = np.where(sign == 0, (1 << (out_bits - 1)) - 1, -(1 << (out_bits - 1)))
    else:
        in_range = (raw >> out_bits) == 0
        sat = np.where(sign == 0, (1 << out_bits) - 1, 0)
    out = np.where(in_range, xs, sat)
    return int(out) if scalar else out


def f16_to_int16(t: np.ndarray) -> np.ndarray:
    """Float-to-fixed converter: ties-to-even, saturating to int16."""
    t = np.asarray(t, dtype=np.float16)
    if np.isnan(t).any():
        raise NumericFault("NaN reached the float-to-int converter")
    r = np.rint(t.astype(np.float64))
    return np.clip(r, INT16_MIN, INT16_MAX).astype(np.int64)


def elastic_quantize(x, p: ElasticParams) -> QTensor:
    """Bias add, multiply by stored reciprocal, convert, clip; all in F16."""
    x = np.asarray(x, dtype=np.float16)
    with np.errstate(over="ignore"):      # overflow to inf saturates below
        t = x + p.bias
        t = t * p.inv_scale
    fixed = f16_to_int16(t)
    if p.bit_width >= 16:
        codes = fixed
    else:
        codes = clip_unit(fixed, p.bit_width, p.signed)
    return QTensor(codes, p.bit_width, p.signed, p.scale, p.bias)


def dequantize(q: QTensor) -> np.ndarray:
    return f16_mul_exact(q.codes, q.scale)


def arithmetic_clip(x, out_bits: int, signed: bool):
    lo, hi = code_range(out_bits, signed)
    return np.clip(x, lo, hi)
