"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import math
import struct


def f16_pack(v: float) -> int:
    """Bit pattern of the binary16 nearest to ``v`` (ties-to-even), via struct."""
    try:
        return struct.unpack("<H", struct.pack("<e", v))[0]
    except OverflowError:
        return 0x7C00 if v > 0 else 0xFC00


def f16_unpack(bits: int) -> float:
    return struct.unpack("<e", struct.pack("<H", bits))[0]


def f16_op(a_bits: int, b_bits: int, op: str) -> int:
    """Correctly rounded binary16 result of a op b; the exact value fits a double."""
    a, b = f16_unpack(a_bits), f16_unpack(b_bits)
    if math.isnan(a) or math.isnan(b):
        return 0x7E00
    with_inf = math.isinf(a) or math.isinf(b)
    if op == "mul":
        if with_inf and (a == 0 or b == 0):
            return 0x7E00
        r = a * b
    else:
        if with_inf and math.isinf(a) and math.isinf(b) and (a > 0) != (b > 0):
            return 0x7E00
        r = a + b
    if math.isinf(r):
        return 0x7C00 if r > 0 else 0xFC00
    return f16_pack(r)


def clip_oracle(x: int, n: int, signed: bool) -> int:
    lo, hi = (-(1 << (n - 1)), (1 << (n - 1)) - 1) if signed else (0, (1 << n) - 1)
    return min(max(x, lo), hi)


def dominated(q, p) -> bool:
    """q dominates p on (accuracy max, robustness max, latency min)."""
    ge = q[0] >= p[0] and q[1] >= p[1] and q[2] <= p[2]
    gt = q[0] > p[0] or q[1] > p[1] or q[2] < p[2]
    return ge and gt


def brute_pareto(points) -> set:
    return {i for i, p in enumerate(points)
            if not any(dominated(q, p) for j, q in enumerate(points) if j != i)}


def two_module_schedule(t_mha, t_ffn, layers: int, batch: int) -> int:
    """Explicit list schedule of the batch-interleaved two-module pipeline.

    Jobs run layer-major, sample-minor; each module serves one job at a time
    in issue order, and layer l of a sample needs layer l-1 of that sample.
    """
    m_free = f_free = 0
    prev_f = [0] * batch
    for layer in range(layers):
        tm = t_mha[layer] if isinstance(t_mha, (list, tuple)) else t_mha
        tf = t_ffn[layer] if isinstance(t_ffn, (list, tuple)) else t_ffn
        for b in range(batch):
            m_start = max(m_free, prev_f[b])
            m_free = m_start + tm
            f_start = max(f_free, m_free)
            f_free = f_start + tf
            prev_f[b] = f_free
    return f_free


def chain_pipeline(costs, rows: int) -> int:
    """Row pipeline with one dedicated unit per stage (flow-shop recurrence)."""
    done = [0] * len(costs)
    for _ in range(rows):
        prev = 0
        for k, c in enumerate(costs):
            start = max(prev, done[k])
            done[k] = start + c
            prev = done[k]
    return done[-1] if costs else 0
