import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from batforge import core
from batforge.core import BinWeight, QTensor

from oracles import f16_op, f16_pack, f16_unpack


def _random_f16_bits(rng, n):
    bits = rng.integers(0, 1 << 16, size=n, dtype=np.uint32).astype(np.uint16)
    # bias a third of the draws toward moderate magnitudes so results stay finite
    mid = rng.integers(0x2000, 0x5800, size=n // 3, dtype=np.uint32).astype(np.uint16)
    sign = rng.integers(0, 2, size=n // 3, dtype=np.uint32).astype(np.uint16) << 15
    bits[: n // 3] = mid | sign
    return bits


@pytest.mark.parametrize("op", ["mul", "add"])
def test_f16_arithmetic_matches_struct_oracle(op):
    rng = np.random.default_rng(1234)
    n = 1_000_000
    a = _random_f16_bits(rng, n)
    b = _random_f16_bits(rng, n)
    fa, fb = a.view(np.float16), b.view(np.float16)
    with np.errstate(all="ignore"):
        got = (fa * fb if op == "mul" else fa + fb).view(np.uint16)
    nan = np.isnan(got.view(np.float16))
    mism = 0
    for x, y, g, isn in zip(a.tolist(), b.tolist(), got.tolist(), nan.tolist()):
        want = f16_op(x, y, op)
        if isn:
            mism += not math.isnan(f16_unpack(want))
        elif want != g:
            mism += 1
    assert mism == 0


def test_f16_mul_exact_single_rounding():
    rng = np.random.default_rng(5)
    codes = rng.integers(-(1 << 20), 1 << 20, size=20000)
    scales = rng.uniform(1e-4, 1.0, size=20000).astype(np.float16)
    got = core.f16_mul_exact(codes, scales).view(np.uint16)
    for c, s, g in zip(codes.tolist(), scales.astype(np.float64).tolist(), got.tolist()):
        assert f16_pack(c * s) == g


def test_f16_bits_roundtrip():
    bits = np.arange(1 << 16, dtype=np.uint16)
    back = core.f16_bits(core.f16_from_bits(bits))
    assert np.array_equal(back, bits)
    assert core.f16_bits(np.float16(1.0)) == 0x3C00


def test_f16_round_ties_to_even():
    # 2049 lies halfway between 2048 and 2050; even mantissa wins
    assert float(core.f16_round(2049.0)) == 2048.0
    assert float(core.f16_round(2051.0)) == 2052.0
    assert math.isinf(float(core.f16_round(70000.0)))


def test_exp_lut_matches_float32_evaluation():
    xs = np.arange(1 << 16, dtype=np.uint16).view(np.float16)
    got = core.exp_f16(xs)
    for v, g in zip(xs.astype(np.float64).tolist()[::7], got.view(np.uint16).tolist()[::7]):
        if math.isnan(v):
            continue
        want = math.inf if v > 88 else float(np.float32(math.exp(v)))
        assert f16_pack(want) == g


def test_rsqrt_lut_values():
    assert float(core.rsqrt_f16(np.float16(4.0))) == 0.5
    assert math.isinf(float(core.rsqrt_f16(np.float16(0.0))))
    assert math.isnan(float(core.rsqrt_f16(np.float16(-1.0))))


def test_check_finite_raises_on_nan():
    with pytest.raises(core.NumericFault):
        core.check_finite(np.array([1.0, np.nan], np.float16), "test")
    x = np.array([np.inf], np.float16)
    assert core.check_finite(x, "inf is allowed") is x


@pytest.mark.parametrize("bits,signed,lo,hi", [(1, True, -1, 0), (4, True, -8, 7), (4, False, 0, 15),
                                               (8, True, -128, 127), (2, False, 0, 3)])
def test_code_range(bits, signed, lo, hi):
    assert core.code_range(bits, signed) == (lo, hi)


def test_qtensor_validation():
    QTensor(np.array([-8, 7]), 4, True, np.float16(0.5))
    with pytest.raises(ValueError):
        QTensor(np.array([8]), 4, True, np.float16(0.5))
    with pytest.raises(ValueError):
        QTensor(np.array([1]), 3, True, np.float16(0.5))
    with pytest.raises(ValueError):
        QTensor(np.array([1]), 4, True, np.float16(0.0))


def test_binweight_packing_is_lsb_first():
    signs = np.array([[1, -1, -1, -1, -1, -1, -1, -1, -1, 1]])
    w = BinWeight.from_signs(signs, 0.5)
    assert w.bits.tolist() == [0x01, 0x02]
    assert np.array_equal(w.signs(), signs)
    assert np.array_equal(w.dequantize(), 0.5 * signs)


@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_binweight_roundtrip(r, c, seed):
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1, 1], size=(r, c))
    w = BinWeight.from_signs(signs, 1.0)
    assert len(w.bits) == (r * c + 7) // 8
    assert np.array_equal(w.signs(), signs)


def test_binweight_rejects_non_signs():
    with pytest.raises(ValueError):
        BinWeight.from_signs(np.array([[0, 1]]), 1.0)


def test_rng_is_philox_and_reproducible():
    a = core.make_rng(42).standard_normal(5)
    b = core.make_rng(42).standard_normal(5)
    assert np.array_equal(a, b)
    assert isinstance(core.make_rng(1).bit_generator, np.random.Philox)
    s1, s2 = core.spawn_rngs(7, 2)
    assert not np.array_equal(s1.standard_normal(4), s2.standard_normal(4))


def test_gaussian_sample_variance():
    x = core.gaussian_sample(core.make_rng(3), 0.0, 0.01, 200000)
    assert abs(x.var() - 0.01) < 5e-4
    assert np.all(core.gaussian_sample(core.make_rng(3), 2.0, 0.0, 4) == 2.0)
    with pytest.raises(ValueError):
        core.gaussian_sample(core.make_rng(3), 0.0, -1.0, 4)
