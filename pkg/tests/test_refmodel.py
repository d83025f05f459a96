import math

import numpy as np
import pytest

from batforge import refmodel as rm
from batforge.core import NumericFault, make_rng
from batforge.quantize import ElasticParams


def tiny_cfg(**kw):
    base = dict(layers=2, d_hid=32, d_inter=64, num_head=2, b_act=4, model_kind="BMT", seq_len=8)
    base.update(kw)
    return rm.ModelConfig(**base)


def test_model_config_validation():
    with pytest.raises(ValueError):
        tiny_cfg(num_head=3)
    with pytest.raises(ValueError):
        tiny_cfg(model_kind="GPT")
    assert tiny_cfg().d_head == 16
    assert rm.ModelConfig().in_design_space()


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 3, size=(5, 40)).astype(np.float16)
    p = rm.softmax_rows(x)
    assert p.dtype == np.float16
    assert np.allclose(p.astype(np.float64).sum(axis=1), 1.0, atol=2e-2)
    assert np.array_equal(rm.softmax_row(x[2]), p[2])
    assert int(np.argmax(p[1])) == int(np.argmax(x[1]))


def test_softmax_is_shift_invariant_on_exact_shift():
    x = np.array([0.0, 1.0, 2.0, 3.0], np.float16)
    assert np.array_equal(rm.softmax_row(x), rm.softmax_row(x + np.float16(4.0)))


def test_layernorm_statistics():
    rng = np.random.default_rng(1)
    x = rng.normal(5, 2, size=(3, 64)).astype(np.float16)
    y = rm.layernorm_rows(x, np.ones(64, np.float16), np.zeros(64, np.float16)).astype(np.float64)
    assert np.allclose(y.mean(axis=1), 0, atol=2e-2)
    assert np.allclose(y.std(axis=1), 1, atol=2e-2)


def test_relu():
    assert rm.relu_f16(np.array([-1.0, 0.0, 2.0], np.float16)).tolist() == [0.0, 0.0, 2.0]


@pytest.mark.parametrize("split", [False, True])
def test_forward_is_deterministic(split):
    cfg = tiny_cfg()
    w1 = rm.random_weights(cfg, make_rng(11), split=split)
    w2 = rm.random_weights(cfg, make_rng(11), split=split)
    x = make_rng(12).standard_normal((cfg.seq_len, cfg.d_hid)).astype(np.float16)
    a = rm.encoder_forward(x, w1, cfg)
    b = rm.encoder_forward(x, w2, cfg)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (cfg.seq_len, cfg.d_hid) and a.dtype == np.float16


def test_zero_input_zero_bias_gives_zero():
    cfg = tiny_cfg(layers=1)
    w = rm.random_weights(cfg, make_rng(3))
    for lw in w.layers:
        lw.ln1_bias[:] = 0
        lw.ln2_bias[:] = 0
    out = rm.encoder_forward(np.zeros((cfg.seq_len, cfg.d_hid), np.float16), w, cfg)
    assert not out.any()


def test_shape_mismatch_and_nan_fault():
    cfg = tiny_cfg(layers=1)
    w = rm.random_weights(cfg, make_rng(4))
    with pytest.raises(ValueError):
        rm.encoder_forward(np.zeros((cfg.seq_len + 1, cfg.d_hid)), w, cfg)
    x = np.zeros((cfg.seq_len, cfg.d_hid), np.float16)
    x[0, 0] = np.nan
    with pytest.raises(NumericFault):
        rm.encoder_forward(x, w, cfg)


def test_missing_quantizer_site_rejected():
    cfg = tiny_cfg(layers=1)
    w = rm.random_weights(cfg, make_rng(5))
    w.layers[0].quant["q"] = None
    with pytest.raises(ValueError):
        rm.encoder_forward(np.zeros((cfg.seq_len, cfg.d_hid), np.float16), w, cfg)


def test_passthrough_tracks_float_reference():
    # with 16-bit fine-scale quantizers the integer path approximates F16 math
    cfg = tiny_cfg(layers=1, b_act=8)
    w = rm.random_weights(cfg, make_rng(6))
    rm.passthrough_quantizers(w)
    x = (0.5 * make_rng(7).standard_normal((cfg.seq_len, cfg.d_hid))).astype(np.float16)
    trace = []
    rm.encoder_forward(x, w, cfg, trace)
    q = trace[0]["q"].astype(np.float64)
    wq = w.layers[0].linears["wq"].dequantize()
    assert np.allclose(q, x.astype(np.float64) @ wq, atol=0.05 * np.abs(q).max())


def test_trace_records_intermediates():
    cfg = tiny_cfg(layers=1)
    w = rm.random_weights(cfg, make_rng(8))
    trace = []
    rm.encoder_forward(np.ones((cfg.seq_len, cfg.d_hid), np.float16), w, cfg, trace)
    assert {"q", "k", "v", "probs", "ctx", "h1", "r1", "out"} <= set(trace[0])
    assert (trace[0]["r1"] >= 0).all()


def test_score_scale_single_rounding():
    p = ElasticParams(np.float16(0.3), np.float16(0), 4, True)
    k = ElasticParams(np.float16(0.7), np.float16(0), 4, True)
    assert rm.score_scale(p, k) == np.float16(float(np.float16(0.3)) * float(np.float16(0.7)))
    assert rm.attn_scale(tiny_cfg()) == np.float16(0.25)


def test_perturbation_magnitude():
    x = make_rng(1).standard_normal((3, 8, 16)).astype(np.float16)
    y = rm.perturb_embeddings(x, make_rng(2))
    for xi, yi in zip(x, y):
        ratio = np.linalg.norm((yi.astype(np.float64) - xi)) / np.linalg.norm(xi.astype(np.float64))
        assert ratio == pytest.approx(0.1, rel=0.02)


def test_perturbed_accuracy_runs():
    cfg = tiny_cfg(layers=1)
    w = rm.random_weights(cfg, make_rng(9))
    head = rm.Classifier(make_rng(10).standard_normal((cfg.d_hid, 2)), np.zeros(2))
    model = rm.Model(cfg, w, head)
    xs = make_rng(11).standard_normal((6, cfg.seq_len, cfg.d_hid)).astype(np.float16)
    ys = np.array([model.predict(x) for x in xs])
    data = rm.Dataset(xs, ys)
    accs, a0 = rm.perturbed_accuracy_runs(model, data, make_rng(12), runs=3)
    assert a0 == 1.0
    assert accs.shape == (3,) and np.all((0 <= accs) & (accs <= 1))
    with pytest.raises(ValueError):
        rm.Dataset(xs[:0], ys[:0])


def test_weight_bits_layout():
    cfg = tiny_cfg(layers=1)
    w = rm.random_weights(cfg, make_rng(13), split=True)
    bits = rm.weight_bits(w.layers[0].linears["wq"])
    assert len(bits) == 2 and set(np.unique(bits[0])) <= {0, 1}
    assert math.isfinite(float(w.layers[0].linears["wq"].w1.scale))
