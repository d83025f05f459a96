"""Bit-exact functional reference of the binarized encoder stack.

This is the golden model.  Every full-precision step is binary16 with a fixed
operation order; reductions are exactly-rounded (``math.fsum``) so results do
not depend on array layout.  The cycle simulator must reproduce these outputs
bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (BinWeight, NumericFault, check_finite, exp_f16, f16_mul_exact,
                   f16_round, gaussian_sample, rsqrt_f16)
from .quantize import ElasticParams, bwn_binarize, elastic_quantize
from .wtws import SplitLayer, tws_split, ternarize

MODEL_KINDS = ("BinaryBERT", "BMT", "BiT")
LEGAL_BACT = {"BinaryBERT": (8, 4), "BMT": (4, 2), "BiT": (1,)}
LN_EPS = 1e-5

LINEARS = ("wq", "wk", "wv", "wo", "w1", "w2")

# quantizer site -> signed?  (x/y operands of each QMM)
SITES = {
    "mha_in": True,   # x of AW (Q/K/V projections)
    "q": True,        # x of QK^T
    "k": True,        # y of QK^T
    "v": True,        # y of SV
    "s": False,       # x of SV, post-softmax
    "attn": True,     # x of BW
    "ffn_in": True,   # x of CW
    "r1": False,      # x of R1W, post-ReLU
}

# (x site, y site or linear) for every QMM of a layer
QMM_OPERANDS = {
    "qkv": ("mha_in", "wq/wk/wv"),
    "qk": ("q", "k"),
    "sv": ("s", "v"),
    "bw": ("attn", "wo"),
    "cw": ("ffn_in", "w1"),
    "r1w": ("r1", "w2"),
}


@dataclass
class ModelConfig:
    layers: int = 12
    d_hid: int = 384
    d_inter: int = 1536
    num_head: int = 6
    b_act: int = 4
    model_kind: str = "BMT"
    seq_len: int = 128

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.layers < 1 or self.seq_len < 1 or self.d_inter < 1:
            raise ValueError("layers, seq_len and d_inter must be positive")
        if self.num_head < 1 or self.d_hid % self.num_head:
            raise ValueError("d_hid must be divisible by num_head")
        if self.b_act not in (1, 2, 4, 8, 16):
            raise ValueError(f"unsupported activation width {self.b_act}")

    @property
    def d_head(self) -> int:
        return self.d_hid // self.num_head

    def in_design_space(self) -> bool:
        return self.b_act in LEGAL_BACT[self.model_kind]


@dataclass
class LayerWeights:
    linears: dict
    quant: dict
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class EncoderWeights:
    layers: list

    def check(self, cfg: ModelConfig) -> None:
        if len(self.layers) != cfg.layers:
            raise ValueError(f"expected {cfg.layers} layers, got {len(self.layers)}")
        d, di = cfg.d_hid, cfg.d_inter
        shapes = {"wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
                  "w1": (d, di), "w2": (di, d)}
        for i, lw in enumerate(self.layers):
            for name, shp in shapes.items():
                if tuple(lw.linears[name].shape) != shp:
                    raise ValueError(f"layer {i} {name}: shape {lw.linears[name].shape} != {shp}")
            check_sites(lw.quant)


def check_sites(quant: dict) -> None:
    """Quantizer signedness must follow the operand table."""
    for site, signed in SITES.items():
        if site not in quant:
            raise ValueError(f"missing quantizer site {site!r}")
        if quant[site] is not None and quant[site].signed != signed:
            kind = "signed" if signed else "unsigned"
            raise ValueError(f"quantizer site {site!r} must be {kind}")


# -- row primitives shared with the simulator's units -------------------------

def softmax_row(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float16)
    d = x - x.max()
    e = exp_f16(d)
    s = f16_round(math.fsum(e.astype(np.float64).tolist()))
    return e * (np.float16(1.0) / s)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float16)
    out = np.empty_like(x)
    for idx in np.ndindex(*x.shape[:-1]):
        out[idx] = softmax_row(x[idx])
    return out


def layernorm_row(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float16)
    n = x.shape[-1]
    mean = f16_round(math.fsum(x.astype(np.float64).tolist()) / n)
    d = x - mean
    d64 = d.astype(np.float64)
    var = f16_round(math.fsum((d64 * d64).tolist()) / n)
    inv = rsqrt_f16(var + np.float16(LN_EPS))
    y = d * inv
    return y * np.asarray(gain, dtype=np.float16) + np.asarray(bias, dtype=np.float16)


def layernorm_rows(x: np.ndarray, gain, bias) -> np.ndarray:
    x = np.asarray(x, dtype=np.float16)
    out = np.empty_like(x)
    for idx in np.ndindex(*x.shape[:-1]):
        out[idx] = layernorm_row(x[idx], gain, bias)
    return out


def relu_f16(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float16)
    return np.where(x > 0, x, np.float16(0.0)).astype(np.float16)


def linear_scales(x_scale, w) -> tuple:
    """Per-column F16 dequant scales for one or two binary weight halves."""
    xs = float(x_scale)
    if isinstance(w, SplitLayer):
        s1 = (xs * float(w.w1.scale_f16) * w.sigma1).astype(np.float16)
        s2 = (xs * float(w.w2.scale_f16) * w.sigma2).astype(np.float16)
        return s1, s2
    return (f16_round(xs * float(w.scale_f16)),)


def weight_bits(w) -> tuple:
    """0/1 weight-bit matrices fed to the QMM engine."""
    if isinstance(w, SplitLayer):
        return ((w.w1.signs() > 0).astype(np.int64), (w.w2.signs() > 0).astype(np.int64))
    return ((w.signs() > 0).astype(np.int64),)


def dequant_linear(accs: tuple, scales: tuple) -> np.ndarray:
    """Vector-unit dequantization of one linear output (split halves summed in F16)."""
    out = f16_mul_exact(accs[0], scales[0])
    for acc, sc in zip(accs[1:], scales[1:]):
        out = out + f16_mul_exact(acc, sc)
    return out


def score_scale(q: ElasticParams, k: ElasticParams) -> np.float16:
    return f16_round(float(q.scale) * float(k.scale))


def attn_scale(cfg: ModelConfig) -> np.float16:
    return f16_round(1.0 / math.sqrt(cfg.d_head))


# -- forward ------------------------------------------------------------------

def _calibrated(quant: dict, site: str, x: np.ndarray, bits: int, margin: float = 1.0):
    p = quant.get(site)
    if p is not None:
        return p
    signed = SITES[site]
    lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
    peak = float(np.abs(x.astype(np.float64)).max()) * margin
    scale = peak / max(hi, 1) if peak > 0 else 1.0
    p = ElasticParams(f16_round(max(scale, 2.0 ** -14)), np.float16(0.0), bits, signed)
    quant[site] = p
    return p


def _frozen(quant: dict, site: str) -> ElasticParams:
    p = quant.get(site)
    if p is None:
        raise ValueError(f"quantizer site {site!r} has no parameters (uncalibrated weights)")
    return p


def int_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.int64) @ np.asarray(b, dtype=np.int64)


def _linear(xq_codes, w, scales) -> np.ndarray:
    signs = (w.w1.signs(), w.w2.signs()) if isinstance(w, SplitLayer) else (w.signs(),)
    accs = tuple(int_matmul(xq_codes, s) for s in signs)
    return dequant_linear(accs, scales)


def layer_forward(x: np.ndarray, lw: LayerWeights, cfg: ModelConfig,
                  trace: dict | None = None, calibrate: bool = False) -> np.ndarray:
    """One encoder layer: MHA block then FFN block, both post-LN."""
    x = np.asarray(x, dtype=np.float16)
    quant = lw.quant
    bits = cfg.b_act
    get = (lambda site, t: _calibrated(quant, site, t, bits)) if calibrate else (lambda site, t: _frozen(quant, site))
    check_sites(quant)
    rec = trace if trace is not None else {}

    p_in = get("mha_in", x)
    a = elastic_quantize(x, p_in)
    q = _linear(a.codes, lw.linears["wq"], linear_scales(p_in.scale, lw.linears["wq"]))
    k = _linear(a.codes, lw.linears["wk"], linear_scales(p_in.scale, lw.linears["wk"]))
    v = _linear(a.codes, lw.linears["wv"], linear_scales(p_in.scale, lw.linears["wv"]))
    rec.update(q=q, k=k, v=v)

    pq, pk, pv = get("q", q), get("k", k), get("v", v)
    qq, kq, vq = elastic_quantize(q, pq), elastic_quantize(k, pk), elastic_quantize(v, pv)
    dh = cfg.d_head
    sc_qk = score_scale(pq, pk)
    scale = attn_scale(cfg)
    heads = []
    probs = []
    for h in range(cfg.num_head):
        cols = slice(h * dh, (h + 1) * dh)
        acc = int_matmul(qq.codes[:, cols], kq.codes[:, cols].T)
        scores = f16_mul_exact(acc, sc_qk) * scale
        probs.append(softmax_rows(scores))
    prob_all = np.concatenate(probs, axis=1)
    ps = get("s", prob_all)
    for h in range(cfg.num_head):
        cols = slice(h * dh, (h + 1) * dh)
        sq = elastic_quantize(probs[h], ps)
        acc = int_matmul(sq.codes, vq.codes[:, cols])
        heads.append(f16_mul_exact(acc, score_scale(ps, pv)))
    ctx = np.concatenate(heads, axis=1)
    rec.update(probs=prob_all, ctx=ctx)

    p_attn = get("attn", ctx)
    cq = elastic_quantize(ctx, p_attn)
    o = _linear(cq.codes, lw.linears["wo"], linear_scales(p_attn.scale, lw.linears["wo"]))
    h1 = layernorm_rows(x + o, lw.ln1_gain, lw.ln1_bias)
    rec.update(attn_out=o, h1=h1)

    p_f = get("ffn_in", h1)
    fq = elastic_quantize(h1, p_f)
    r = _linear(fq.codes, lw.linears["w1"], linear_scales(p_f.scale, lw.linears["w1"]))
    r1 = relu_f16(r)
    p_r = get("r1", r1)
    rq = elastic_quantize(r1, p_r)
    f = _linear(rq.codes, lw.linears["w2"], linear_scales(p_r.scale, lw.linears["w2"]))
    out = layernorm_rows(h1 + f, lw.ln2_gain, lw.ln2_bias)
    rec.update(r1=r1, ffn_out=f, out=out)
    return check_finite(out, "encoder layer")


def encoder_forward(x: np.ndarray, w: EncoderWeights, cfg: ModelConfig,
                    trace: list | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float16)
    if x.shape != (cfg.seq_len, cfg.d_hid):
        raise ValueError(f"input shape {x.shape} != {(cfg.seq_len, cfg.d_hid)}")
    w.check(cfg)
    check_finite(x, "encoder input")
    for lw in w.layers:
        rec = {} if trace is not None else None
        x = layer_forward(x, lw, cfg, rec)
        if trace is not None:
            trace.append(rec)
    return x


# -- weight construction ------------------------------------------------------

def _binary_linear(rng, shape, split: bool):
    latent = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
    if split:
        half = ternarize(latent)
        return tws_split(half)
    return bwn_binarize(latent)


def random_weights(cfg: ModelConfig, rng: np.random.Generator, split: bool = False,
                   calib_input: np.ndarray | None = None) -> EncoderWeights:
    """Random binarized weights; quantizer scales are calibrated on one input."""
    d, di = cfg.d_hid, cfg.d_inter
    shapes = {"wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
              "w1": (d, di), "w2": (di, d)}
    layers = []
    for _ in range(cfg.layers):
        lin = {name: _binary_linear(rng, shp, split) for name, shp in shapes.items()}
        layers.append(LayerWeights(
            linears=lin,
            quant={site: None for site in SITES},
            ln1_gain=(1.0 + 0.1 * rng.standard_normal(d)).astype(np.float16),
            ln1_bias=(0.1 * rng.standard_normal(d)).astype(np.float16),
            ln2_gain=(1.0 + 0.1 * rng.standard_normal(d)).astype(np.float16),
            ln2_bias=(0.1 * rng.standard_normal(d)).astype(np.float16),
        ))
    if calib_input is None:
        calib_input = rng.standard_normal((cfg.seq_len, d)).astype(np.float16)
    x = np.asarray(calib_input, dtype=np.float16)
    for lw in layers:
        x = layer_forward(x, lw, cfg, calibrate=True)
    return EncoderWeights(layers)


def passthrough_quantizers(w: EncoderWeights, scale=1.0 / 1024) -> None:
    """Set every quantizer to 16-bit with a fine scale (near-F16 behaviour)."""
    for lw in w.layers:
        for site, signed in SITES.items():
            lw.quant[site] = ElasticParams(np.float16(scale), np.float16(0.0), 16, signed)


# -- classification and robustness --------------------------------------------

@dataclass
class Classifier:
    """Linear F16 head on the first token."""

    weight: np.ndarray
    bias: np.ndarray

    def logits(self, h: np.ndarray) -> np.ndarray:
        cls = np.asarray(h, dtype=np.float16)[0].astype(np.float64)
        return cls @ self.weight + self.bias

    def predict(self, h: np.ndarray) -> int:
        return int(np.argmax(self.logits(h)))


@dataclass
class Model:
    cfg: ModelConfig
    weights: EncoderWeights
    head: Classifier

    def predict(self, x: np.ndarray) -> int:
        return self.head.predict(encoder_forward(x, self.weights, self.cfg))


@dataclass
class Dataset:
    x: np.ndarray          # (n, seq_len, d_hid) float16
    y: np.ndarray          # (n,) int labels

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float16)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) == 0 or len(self.x) != len(self.y):
            raise ValueError("dataset must be non-empty with one label per sample")

    def __len__(self):
        return len(self.y)


def accuracy(model, data: Dataset, inputs: np.ndarray | None = None) -> float:
    xs = data.x if inputs is None else inputs
    hits = sum(int(model.predict(xi) == yi) for xi, yi in zip(xs, data.y))
    return hits / len(data)


def perturb_embeddings(x: np.ndarray, rng, variance: float = 0.01, magnitude: float = 0.1) -> np.ndarray:
    """Gaussian noise drawn at the given variance, rescaled to ``magnitude`` of ||x||."""
    x = np.asarray(x, dtype=np.float16)
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        noise = gaussian_sample(rng, 0.0, variance, xi.size).reshape(xi.shape)
        norm_x = float(np.linalg.norm(xi.astype(np.float64)))
        norm_n = float(np.linalg.norm(noise))
        factor = magnitude * norm_x / norm_n if norm_n > 0 else 0.0
        out[i] = (xi.astype(np.float64) + factor * noise).astype(np.float16)
    return out


def perturbed_accuracy_runs(model, data: Dataset, rng, runs: int = 20,
                            variance: float = 0.01, magnitude: float = 0.1):
    """Returns (A, A0): accuracies under ``runs`` independent perturbations and the clean one."""
    a0 = accuracy(model, data)
    accs = np.empty(runs)
    for r in range(runs):
        accs[r] = accuracy(model, data, perturb_embeddings(data.x, rng, variance, magnitude))
    return accs, a0
