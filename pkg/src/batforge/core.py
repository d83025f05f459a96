"""Numeric foundations: binary16 helpers, integer code tensors, seeded RNG.

All "full precision" values on the accelerator path are numpy ``float16``.
numpy evaluates float16 add/sub/mul/div/sqrt in float32 and rounds once to
float16; float32 carries more than 2*11+2 significand bits, so those results
are correctly rounded (ties-to-even) and bit-reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

F16 = np.float16
RNG_ALGORITHM = "philox4x64-10"


class NumericFault(ArithmeticError):
    """Raised when a NaN shows up on the inference path."""


def f16_round(x) -> np.float16:
    """Nearest binary16 value of a real number, ties-to-even; overflow gives inf."""
    with np.errstate(over="ignore"):
        return np.float16(float(x))


def f16_bits(x) -> int | np.ndarray:
    arr = np.asarray(x, dtype=np.float16)
    bits = arr.view(np.uint16)
    return int(bits) if bits.ndim == 0 else bits.copy()


def f16_from_bits(bits) -> np.float16 | np.ndarray:
    arr = np.asarray(bits, dtype=np.uint16)
    out = arr.view(np.float16)
    return out[()] if out.ndim == 0 else out.copy()


def to_f16(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float16)


def f16_mul_exact(a, b) -> np.ndarray:
    """Round the exact product of ``a`` and ``b`` once to binary16.

    Used for int-code x scale products; exact in float64 for |a| < 2**42.
    """
    prod = np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)
    with np.errstate(over="ignore"):
        return prod.astype(np.float16)


def _build_lut(fn) -> np.ndarray:
    # one entry per binary16 bit pattern, so evaluation never depends on array layout
    xs = np.arange(1 << 16, dtype=np.uint16).view(np.float16).astype(np.float64)
    out = np.empty(xs.shape, dtype=np.float16)
    with np.errstate(all="ignore"):
        for i, v in enumerate(xs.tolist()):
            out[i] = np.float16(np.float32(fn(v)))
    return out


def _exp(v: float) -> float:
    if math.isnan(v):
        return v
    if v > 88.0:
        return math.inf
    return math.exp(v)


def _rsqrt(v: float) -> float:
    if math.isnan(v) or v < 0:
        return math.nan
    if v == 0:
        return math.inf
    return 1.0 / math.sqrt(v)


_EXP_LUT: np.ndarray | None = None
_RSQRT_LUT: np.ndarray | None = None


def exp_f16(x) -> np.ndarray:
    """exp evaluated in binary32, rounded to binary16 (table driven)."""
    global _EXP_LUT
    if _EXP_LUT is None:
        _EXP_LUT = _build_lut(_exp)
    return _EXP_LUT[np.asarray(x, dtype=np.float16).view(np.uint16)]


def rsqrt_f16(x) -> np.ndarray:
    """1/sqrt evaluated in binary32, rounded to binary16 (table driven)."""
    global _RSQRT_LUT
    if _RSQRT_LUT is None:
        _RSQRT_LUT = _build_lut(_rsqrt)
    return _RSQRT_LUT[np.asarray(x, dtype=np.float16).view(np.uint16)]


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if np.isnan(x).any():
        raise NumericFault(f"NaN produced in {where}")
    return x


# -- integer code tensors ---------------------------------------------------

SUPPORTED_BITS = (1, 2, 4, 8, 16)


def code_range(bit_width: int, signed: bool) -> tuple[int, int]:
    """(Q_n, Q_p) for an N-bit signed or unsigned integer."""
    if signed:
        return -(1 << (bit_width - 1)), (1 << (bit_width - 1)) - 1
    return 0, (1 << bit_width) - 1


@dataclass
class QTensor:
    """Integer-coded activation tensor; real value = scale * code."""

    codes: np.ndarray
    bit_width: int
    signed: bool
    scale: np.float16
    bias: np.float16 = field(default_factory=lambda: np.float16(0.0))

    def __post_init__(self):
        if self.bit_width not in SUPPORTED_BITS:
            raise ValueError(f"unsupported bit width {self.bit_width}")
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.scale = np.float16(self.scale)
        self.bias = np.float16(self.bias)
        if not self.scale > 0:
            raise ValueError("QTensor scale must be positive")
        lo, hi = code_range(self.bit_width, self.signed)
        if self.codes.size and (self.codes.min() < lo or self.codes.max() > hi):
            raise ValueError(
                f"codes outside [{lo}, {hi}] for {self.bit_width}-bit "
                f"{'signed' if self.signed else 'unsigned'}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape

    @property
    def qrange(self) -> tuple[int, int]:
        return code_range(self.bit_width, self.signed)


@dataclass
class BinWeight:
    """Bit-packed {-1, +1} matrix with one per-tensor scale.

    Bits are row-major, LSB-first within each byte; bit 1 means +1.
    """

    shape: tuple[int, int]
    bits: np.ndarray
    scale: np.float64

    @classmethod
    def from_signs(cls, signs: np.ndarray, scale) -> "BinWeight":
        signs = np.asarray(signs)
        if signs.ndim != 2:
            raise ValueError("BinWeight expects a 2-D sign matrix")
        if not np.isin(signs, (-1, 1)).all():
            raise ValueError("signs must be exactly -1 or +1")
        packed = np.packbits((signs > 0).astype(np.uint8).ravel(), bitorder="little")
        return cls(tuple(signs.shape), packed, np.float64(scale))

    def signs(self) -> np.ndarray:
        n = self.shape[0] * self.shape[1]
        raw = np.unpackbits(self.bits, count=n, bitorder="little")
        return (raw.astype(np.int8) * 2 - 1).reshape(self.shape)

    def dequantize(self) -> np.ndarray:
        return self.scale * self.signs().astype(np.float64)

    @property
    def scale_f16(self) -> np.float16:
        return f16_round(self.scale)


# -- randomness -------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) so streams match on every platform."""
    return np.random.Generator(np.random.Philox(int(seed) & ((1 << 64) - 1)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-worker streams derived from one seed."""
    base = np.random.Philox(int(seed) & ((1 << 64) - 1))
    return [np.random.Generator(base.jumped(i + 1)) for i in range(n)]


def gaussian_sample(rng: np.random.Generator, mean: float, variance: float, n: int) -> np.ndarray:
    if variance < 0:
        raise ValueError("variance must be non-negative")
    if variance == 0:
        return np.full(n, float(mean))
    return rng.normal(mean, math.sqrt(variance), size=n)
