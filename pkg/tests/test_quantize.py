import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batforge.core import NumericFault
from batforge.quantize import (DegenerateWeightError, ElasticParams, arithmetic_clip, bwn_binarize,
                               clip_unit, dequantize, elastic_quantize, f16_to_int16)

from oracles import clip_oracle

ALL16 = np.arange(-(1 << 15), 1 << 15, dtype=np.int64)
CLIP_CASES = [(n, s) for n in (1, 2, 4, 8) for s in (True, False)]


@pytest.mark.parametrize("n,signed", CLIP_CASES)
def test_clip_unit_exhaustive(n, signed):
    got = clip_unit(ALL16, n, signed)
    want = np.array([clip_oracle(int(x), n, signed) for x in ALL16])
    assert np.array_equal(got, want)
    assert np.array_equal(got, arithmetic_clip(ALL16, n, signed))


def test_clip_unit_worked_examples():
    assert clip_unit(15, 4, True) == 7
    assert clip_unit(-8, 4, True) == -8
    assert clip_unit(-9, 4, True) == -8
    assert clip_unit(300, 8, True) == 127
    assert clip_unit(-1, 4, False) == 0
    assert clip_unit(16, 4, False) == 15


def test_clip_unit_rejects_out_of_range():
    with pytest.raises(ValueError):
        clip_unit(1 << 15, 4, True)
    with pytest.raises(ValueError):
        clip_unit(0, 16, True)


def test_bwn_scale_is_mean_abs():
    w = np.array([[0.5, -1.5], [0.0, -2.0]])
    b = bwn_binarize(w)
    assert b.scale == pytest.approx(1.0)
    assert b.signs().tolist() == [[1, -1], [1, -1]]


def test_bwn_degenerate():
    with pytest.raises(DegenerateWeightError):
        bwn_binarize(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        bwn_binarize(np.zeros((0, 3)))


def test_elastic_quantize_saturates():
    p = ElasticParams(np.float16(1.0), np.float16(0.0), 8, True)
    q = elastic_quantize(np.array([300.0, -300.0, 2.5, 3.5]), p)
    assert q.codes.tolist() == [127, -128, 2, 4]


def test_elastic_pipeline_order_bias_then_reciprocal():
    # (x + bias) * inv_scale, with the stored reciprocal (not a division)
    p = ElasticParams(np.float16(3.0), np.float16(0.25), 8, True)
    x = np.array([1.0, -2.0, 7.7], dtype=np.float16)
    t = (x + p.bias) * p.inv_scale
    want = np.clip(np.rint(t.astype(np.float64)), -128, 127)
    assert elastic_quantize(x, p).codes.tolist() == want.astype(int).tolist()
    assert p.inv_scale == np.float16(1.0 / 3.0)


def test_elastic_unsigned():
    p = ElasticParams(np.float16(0.1), np.float16(0.0), 4, False)
    q = elastic_quantize(np.array([-1.0, 0.0, 0.3, 5.0]), p)
    assert q.codes.tolist() == [0, 0, 3, 15]


def test_int16_conversion_saturates_and_faults():
    assert f16_to_int16(np.array([60000.0, -60000.0, 2.5, -0.5])).tolist() == [32767, -32768, 2, 0]
    with pytest.raises(NumericFault):
        f16_to_int16(np.array([np.nan]))


def test_dequantize_single_rounding():
    p = ElasticParams(np.float16(0.1), np.float16(0.0), 4, True)
    q = elastic_quantize(np.array([0.31, -0.52]), p)
    assert dequantize(q).tolist() == [np.float16(3 * float(np.float16(0.1))),
                                      np.float16(-5 * float(np.float16(0.1)))]


def test_elastic_params_validation():
    with pytest.raises(ValueError):
        ElasticParams(np.float16(0.0))


@settings(max_examples=200)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=1, max_size=32),
       st.sampled_from([1, 2, 4, 8]), st.booleans(),
       st.floats(1e-3, 10.0), st.floats(-2.0, 2.0))
def test_codes_always_in_range(xs, bits, signed, scale, bias):
    p = ElasticParams(np.float16(scale), np.float16(bias), bits, signed)
    q = elastic_quantize(np.array(xs), p)
    lo, hi = p.qrange
    assert q.codes.min() >= lo and q.codes.max() <= hi


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=16))
def test_quantize_is_monotone(xs):
    p = ElasticParams(np.float16(0.5), np.float16(0.0), 8, True)
    xs = np.sort(np.array(xs, dtype=np.float16))
    codes = elastic_quantize(xs, p).codes
    assert np.all(np.diff(codes) >= 0)
