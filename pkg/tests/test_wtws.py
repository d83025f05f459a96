import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batforge.wtws import (DegenerateTernaryError, SplitDegenerateError, TernaryLayer,
                           split_coefficients, split_latent, split_residual, ternarize,
                           tws_split, wtws_forward)


def _random_latent(rng, shape):
    return rng.normal(0, 1, size=shape) * rng.uniform(0.01, 3.0)


def test_identity_on_random_layers():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(300):
        shape = tuple(rng.integers(1, 65, size=2))
        tern = ternarize(_random_latent(rng, shape))
        s = tws_split(tern)
        worst = max(worst, split_residual(tern, s))
        assert s.w1.scale == pytest.approx(s.w2.scale, rel=1e-12)
        assert s.w1.scale + s.w2.scale == pytest.approx(tern.delta, rel=1e-12)
    assert worst < 1e-12


def test_split_coefficient_a_is_half_for_symmetric_zero_set():
    w = np.array([[2.0, -2.0, 0.1, -0.1]])
    tern = ternarize(w)
    a, b = split_coefficients(tern)
    assert a == pytest.approx(0.5)
    assert b > 0


def test_printed_coefficient_form_breaks_identity():
    # swapping the J and K sums moves a away from the value that equalizes scales
    rng = np.random.default_rng(9)
    w = rng.normal(0, 1, size=(8, 8)) + 0.3
    tern = ternarize(w)
    lat, t = tern.latent.ravel(), tern.ternary.ravel()
    mag = np.abs(lat)
    in_i = t != 0
    in_j = (~in_i) & (lat > 0)
    in_k = (~in_i) & ~in_j
    s_i, s_j, s_k = mag[in_i].sum(), mag[in_j].sum(), mag[in_k].sum()
    a_printed = (s_i + s_j - s_k) / (2 * s_i)
    a, _ = split_coefficients(tern)
    assert a != pytest.approx(a_printed)
    w1, w2, _, _ = split_latent(tern)
    assert np.abs(w1).mean() == pytest.approx(np.abs(w2).mean(), rel=1e-12)


def test_no_zero_entries_uses_zero_offset():
    # equal magnitudes: every entry survives the threshold, so J and K are empty
    w = np.array([[1.0, -1.0], [1.0, -1.0]])
    tern = ternarize(w)
    assert not (tern.ternary == 0).any()
    a, b = split_coefficients(tern)
    assert b == 0.0
    s = tws_split(tern)
    assert split_residual(tern, s) < 1e-12


def test_degenerate_inputs():
    with pytest.raises(DegenerateTernaryError):
        ternarize(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ternarize(np.zeros((0, 2)))


def test_ternary_layer_validation():
    with pytest.raises(ValueError):
        TernaryLayer(np.ones((2, 2)), np.array([[1.0, 0.5], [0.0, 1.0]]), 1.0)


def test_forward_equals_ternary_product():
    rng = np.random.default_rng(3)
    tern = ternarize(rng.normal(size=(16, 8)))
    s = tws_split(tern)
    x = rng.normal(size=(4, 16))
    assert np.allclose(wtws_forward(x, s), x @ tern.ternary, atol=1e-12)
    with pytest.raises(ValueError):
        wtws_forward(np.ones((2, 3)), s)


def test_column_sigma_recombination():
    rng = np.random.default_rng(4)
    tern = ternarize(rng.normal(size=(6, 5)))
    s = tws_split(tern)
    s.set_sigma(np.full(5, 2.0), np.full(5, 2.0))
    assert np.allclose(s.effective_weight(), 2.0 * tern.ternary, atol=1e-12)
    with pytest.raises(ValueError):
        s.set_sigma(np.ones(4), np.ones(5))


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_identity_property(r, c, seed):
    rng = np.random.default_rng(seed)
    w = _random_latent(rng, (r, c))
    try:
        tern = ternarize(w)
        s = tws_split(tern)
    except (DegenerateTernaryError, SplitDegenerateError):
        return
    assert split_residual(tern, s) < 1e-12
    a, _ = split_coefficients(tern)
    assert 0 < a < 1
