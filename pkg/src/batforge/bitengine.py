"""Bit-exact models of the QMM arithmetic core.

The PE is a right-shifting bit-serial multiplier.  ``x`` (the activation) is
applied in parallel, ``y`` (weight or second activation) is streamed one
ternary digit per cycle, LSB first.  Sign Bit Elimination turns every partial
product into an unsigned (N_x+1)-bit word: the partial product is written in
N_x+1 bits two's complement and its top bit is inverted, which adds 2**N_x per
cycle.  Over N_y cycles this contributes 2**N_x * (2**N_y - 1); a single
"initial product" 2**N_x fed to the adder in cycle 0 tops it up to
2**(N_x+N_y), which is removed by inverting the top bit of the final result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BINARY_WEIGHT = "binary-weight"
SIGNED_ACT = "signed-activation"
UNSIGNED_ACT = "unsigned-activation"
DATA_CONFIGS = (BINARY_WEIGHT, SIGNED_ACT, UNSIGNED_ACT)

# bit decoder look-up table: digit -> 2-bit code
DIGIT_CODE = {1: 0b01, 0: 0b00, -1: 0b11}
CODE_DIGIT = {v: k for k, v in DIGIT_CODE.items()}

PE_WIDTHS = (1, 2, 4, 8)
DEFAULT_P_PE = 64


@dataclass(frozen=True)
class TernBitStream:
    digits: tuple[int, ...]
    data_config: str

    @property
    def encoding(self) -> tuple[int, ...]:
        return tuple(DIGIT_CODE[d] for d in self.digits)

    @property
    def value(self) -> int:
        return sum(d << i for i, d in enumerate(self.digits))

    def __len__(self):
        return len(self.digits)


def operand_range(bits: int, data_config: str) -> tuple[int, int]:
    if data_config == BINARY_WEIGHT:
        return 0, 1
    if data_config == SIGNED_ACT:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if data_config == UNSIGNED_ACT:
        return 0, (1 << bits) - 1
    raise ValueError(f"unknown data config {data_config!r}")


def decode_operand(raw: int, data_config: str, bits: int = 1) -> TernBitStream:
    """Decode an operand into its stream of real bit values.

    A binary weight bit decodes to a single +1/-1 digit.  A signed activation
    is two's complement, so only its MSB can decode to -1.
    """
    lo, hi = operand_range(bits, data_config)
    if not lo <= raw <= hi:
        raise ValueError(f"operand {raw} outside {data_config} range [{lo}, {hi}]")
    if data_config == BINARY_WEIGHT:
        return TernBitStream((1 if raw else -1,), data_config)
    u = raw & ((1 << bits) - 1)
    digits = [(u >> i) & 1 for i in range(bits)]
    if data_config == SIGNED_ACT:
        digits[-1] = -digits[-1]
    return TernBitStream(tuple(digits), data_config)


def stream_from_codes(codes: tuple[int, ...], data_config: str) -> TernBitStream:
    """Rebuild a stream from 2-bit decoder codes."""
    return TernBitStream(tuple(CODE_DIGIT[c] for c in codes), data_config)


def _check_x(x: int, n_x: int, x_signed: bool) -> None:
    if n_x not in PE_WIDTHS:
        raise ValueError(f"unsupported activation width N_x={n_x}")
    lo, hi = operand_range(n_x, SIGNED_ACT if x_signed else UNSIGNED_ACT)
    if not lo <= x <= hi:
        raise ValueError(f"x={x} does not fit {n_x}-bit {'signed' if x_signed else 'unsigned'}")


def sbe_case(n_x: int, x_signed: bool) -> str:
    if not x_signed:
        return "unsigned"
    return "signed-top" if n_x > 1 else "signed-bottom"


@dataclass
class PeResult:
    value: int
    cycles: int
    case: str
    trace: list = field(default_factory=list)


def pe_multiply(x: int, n_x: int, x_signed: bool, y: TernBitStream, trace: bool = False) -> PeResult:
    """Cycle-by-cycle simulation of the SBE bit-serial PE."""
    _check_x(x, n_x, x_signed)
    n_y = len(y)
    if n_y < 1:
        raise ValueError("empty y stream")
    width = n_x + 1
    mask = (1 << width) - 1
    top = 1 << n_x
    inv_x = -x - 1  # ~x within the partial-product width
    psum = 0
    shifted = 0
    steps = []
    for i, d in enumerate(y.digits):
        if d == 1:
            p, c_in = x, 0
        elif d == 0:
            p, c_in = 0, 0
        else:
            p, c_in = inv_x, 1
        u = (p & mask) ^ top
        addend = top if i == 0 else psum  # initial product enters on cycle 0
        s = addend + u + c_in
        assert u <= mask and addend <= mask, "adder operand exceeds N_x+1 bits"
        assert s < (1 << (width + 1))
        shifted |= (s & 1) << i
        psum = s >> 1
        assert psum <= mask
        if trace:
            steps.append({"cycle": i, "digit": d, "p": u, "c_in": c_in, "psum": psum})
    total = (psum << n_y) | shifted
    value = total - (1 << (n_x + n_y))
    return PeResult(value, n_y, sbe_case(n_x, x_signed), steps)


def digits_array(codes: np.ndarray, data_config: str, bits: int) -> np.ndarray:
    """Vectorized bit decoder; returns digits along a new last axis."""
    codes = np.asarray(codes, dtype=np.int64)
    if data_config == BINARY_WEIGHT:
        return np.where(codes > 0, 1, -1)[..., None].astype(np.int64)
    u = codes & ((1 << bits) - 1)
    d = (u[..., None] >> np.arange(bits)) & 1
    if data_config == SIGNED_ACT:
        d[..., -1] = -d[..., -1]
    return d


def pe_multiply_array(x: np.ndarray, n_x: int, digits: np.ndarray) -> np.ndarray:
    """The same SBE datapath applied lane-parallel with numpy.

    ``x`` broadcasts against ``digits[..., 0]``; the last axis of ``digits``
    is the serial stream.
    """
    if n_x not in PE_WIDTHS:
        raise ValueError(f"unsupported activation width N_x={n_x}")
    x = np.asarray(x, dtype=np.int64)
    n_y = digits.shape[-1]
    width = n_x + 1
    mask = (1 << width) - 1
    top = 1 << n_x
    inv_x = -x - 1
    psum = None
    shifted = None
    for i in range(n_y):
        d = digits[..., i]
        p = np.where(d == 1, x, np.where(d == 0, 0, inv_x))
        c_in = (d == -1).astype(np.int64)
        u = (p & mask) ^ top
        s = (top if i == 0 else psum) + u + c_in
        bit = (s & 1) << i
        shifted = bit if shifted is None else shifted | bit
        psum = s >> 1
    total = (psum << n_y) | shifted
    return total - (1 << (n_x + n_y))


# -- 4:2 compressor tree ----------------------------------------------------

def csa(a, b, c):
    """3:2 carry-save adder on two's-complement integers."""
    s = a ^ b ^ c
    carry = ((a & b) | (a & c) | (b & c)) << 1
    return s, carry


def compress42(a, b, c, d):
    s1, c1 = csa(a, b, c)
    return csa(s1, c1, d)


def tree_levels(lanes: int) -> int:
    """Number of 4:2 stages that reduce ``lanes`` operands to two."""
    n, levels = max(lanes, 1), 0
    while n > 2:
        n = 2 * math.ceil(n / 4)
        levels += 1
    return levels


def tree_depth(lanes: int) -> int:
    """Pipeline depth of the DPU adder tree: 4:2 stages plus the final CPA."""
    return tree_levels(lanes) + 1


def _reduce42(ops: list) -> tuple[list, int]:
    levels = 0
    while len(ops) > 2:
        zero = ops[0] ^ ops[0]
        while len(ops) % 4:
            ops.append(zero)
        nxt = []
        for k in range(0, len(ops), 4):
            nxt.extend(compress42(*ops[k:k + 4]))
        ops = nxt
        levels += 1
    return ops, levels


def compressor_tree_sum(values, lanes: int = DEFAULT_P_PE) -> tuple[int, int]:
    """Exact sum through a 4:2 compressor tree sized for ``lanes`` inputs.

    Returns (sum, depth) where depth counts 4:2 stages plus the final
    carry-propagate add.
    """
    values = [int(v) for v in values]
    if len(values) > lanes:
        raise ValueError(f"{len(values)} values exceed {lanes} lanes")
    ops = values + [0] * (lanes - len(values))
    ops, _ = _reduce42(ops)
    total = ops[0] + ops[1] if len(ops) == 2 else ops[0]
    return total, tree_depth(lanes)


def compressor_tree_sum_array(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorized tree reduction of int64 lanes along ``axis``."""
    v = np.moveaxis(np.asarray(values, dtype=np.int64), axis, 0)
    ops = [v[i] for i in range(v.shape[0])]
    if not ops:
        return np.zeros(v.shape[1:], dtype=np.int64)
    ops, _ = _reduce42(ops)
    return ops[0] + ops[1] if len(ops) == 2 else ops[0]


# -- dot-product unit ---------------------------------------------------------

@dataclass
class DotResult:
    value: int
    cycles: int
    chunks: int
    serial_cycles: int
    fill: int
    trace: list = field(default_factory=list)


def dpu_dot(x_codes, n_x: int, x_signed: bool, y_codes, y_config: str, y_bits: int = 1,
            p_pe: int = DEFAULT_P_PE) -> DotResult:
    """Dot product on one DPU: p_pe PEs per chunk, tree-summed and accumulated.

    The PE array works on chunk c during cycles [c*s, (c+1)*s); the tree is
    pipelined, so chunk c's partial sum reaches the accumulator ``fill``
    cycles after its PEs finish.
    """
    x_codes = [int(v) for v in np.ravel(x_codes)]
    y_codes = [int(v) for v in np.ravel(y_codes)]
    if len(x_codes) != len(y_codes):
        raise ValueError("dot operands differ in length")
    serial = 1 if y_config == BINARY_WEIGHT else y_bits
    fill = tree_depth(p_pe)
    acc = 0
    events = []
    chunks = math.ceil(len(x_codes) / p_pe) if x_codes else 0
    for c in range(chunks):
        xs = x_codes[c * p_pe:(c + 1) * p_pe]
        ys = y_codes[c * p_pe:(c + 1) * p_pe]
        prods = []
        for xv, yv in zip(xs, ys):
            r = pe_multiply(xv, n_x, x_signed, decode_operand(yv, y_config, y_bits))
            assert r.cycles == serial
            prods.append(r.value)
        part, depth = compressor_tree_sum(prods, p_pe)
        acc += part
        start = c * serial
        events.append((start, "pe-start", c))
        events.append((start + serial, "pe-done", c))
        events.append((start + serial + depth, "acc", c))
    cycles = events[-1][0] if events else 0
    return DotResult(acc, cycles, chunks, serial, fill, events)


def qmm_bitserial(x_codes: np.ndarray, n_x: int, y_codes: np.ndarray, y_config: str,
                  y_bits: int = 1, p_pe: int = DEFAULT_P_PE) -> np.ndarray:
    """Integer matrix product x @ y computed through the PE/tree datapath.

    x: (M, K) activation codes, y: (K, N) weight bits or activation codes.
    """
    x = np.asarray(x_codes, dtype=np.int64)
    y = np.asarray(y_codes, dtype=np.int64)
    m, k = x.shape
    k2, n = y.shape
    if k != k2:
        raise ValueError(f"inner dimensions differ: {k} vs {k2}")
    digits = digits_array(y, y_config, y_bits)          # (K, N, Ny)
    chunks = max(1, math.ceil(k / p_pe))
    pad = chunks * p_pe - k
    out = np.empty((m, n), dtype=np.int64)
    for r in range(m):
        prods = pe_multiply_array(x[r][:, None], n_x, digits)   # (K, N)
        if pad:
            prods = np.concatenate([prods, np.zeros((pad, n), dtype=np.int64)])
        parts = compressor_tree_sum_array(prods.reshape(chunks, p_pe, n), axis=1)
        acc = np.zeros(n, dtype=np.int64)
        for c in range(chunks):
            acc = acc + parts[c]
        out[r] = acc
    return out
