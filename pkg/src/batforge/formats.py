"""On-disk formats: binarized weight files, ternary checkpoints, tensors, datasets.

Weight file layout (all little-endian)::

    magic   b"BATW"
    u16     version
    header  u16 layers, u32 d_hid, u32 d_inter, u16 num_head, u8 b_act,
            u8 model_kind index, u32 seq_len
    per layer
      per linear (wq wk wv wo w1 w2)
        u8 kind (0 binary, 1 split)
        binary: u32 rows, u32 cols, packed sign bits (row-major, LSB first), f16 scale
        split:  two binary blocks, then f32[cols] sigma1, f32[cols] sigma2
      f16[d_hid] x 4: ln1 gain, ln1 bias, ln2 gain, ln2 bias
      per quantizer site: u8 present; if present f16 scale, f16 bias, f16 inv_scale,
                          u8 bit width, u8 signed
    u8 head present; if present u16 classes, f32[d_hid*classes] weight, f32[classes] bias
    u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import io
import struct
import zlib

import numpy as np

from . import refmodel as rm
from .core import BinWeight
from .quantize import ElasticParams
from .wtws import SplitLayer

MAGIC = b"BATW"
VERSION = 1


class FormatError(ValueError):
    pass


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt, *vals):
        self.buf.write(struct.pack("<" + fmt, *vals))

    def raw(self, b: bytes):
        self.buf.write(b)

    def array(self, a, dtype):
        self.buf.write(np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("weight file is truncated")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size))

    def array(self, dtype, count):
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dtype)


def _put_bin(w: _Writer, b: BinWeight):
    rows, cols = b.shape
    w.pack("II", rows, cols)
    w.raw(np.asarray(b.bits, dtype=np.uint8).tobytes())
    w.array([b.scale_f16], np.float16)


def _get_bin(r: _Reader) -> BinWeight:
    rows, cols = r.unpack("II")
    nbytes = (rows * cols + 7) // 8
    bits = np.frombuffer(r.take(nbytes), dtype=np.uint8).copy()
    scale = float(r.array(np.float16, 1)[0])
    if not scale > 0:
        raise FormatError("binary weight scale must be positive")
    return BinWeight((rows, cols), bits, scale)


def dumps_weights(cfg: rm.ModelConfig, weights: rm.EncoderWeights, head: rm.Classifier | None = None) -> bytes:
    weights.check(cfg)
    w = _Writer()
    w.raw(MAGIC)
    w.pack("H", VERSION)
    w.pack("HIIHBBI", cfg.layers, cfg.d_hid, cfg.d_inter, cfg.num_head, cfg.b_act,
           rm.MODEL_KINDS.index(cfg.model_kind), cfg.seq_len)
    for lw in weights.layers:
        for name in rm.LINEARS:
            lin = lw.linears[name]
            if isinstance(lin, SplitLayer):
                w.pack("B", 1)
                _put_bin(w, lin.w1)
                _put_bin(w, lin.w2)
                w.array(lin.sigma1, np.float32)
                w.array(lin.sigma2, np.float32)
            else:
                w.pack("B", 0)
                _put_bin(w, lin)
        for arr in (lw.ln1_gain, lw.ln1_bias, lw.ln2_gain, lw.ln2_bias):
            w.array(arr, np.float16)
        for site in rm.SITES:
            p = lw.quant[site]
            if p is None:
                w.pack("B", 0)
                continue
            w.pack("B", 1)
            w.array([p.scale, p.bias, p.inv_scale], np.float16)
            w.pack("BB", p.bit_width, int(p.signed))
    if head is None:
        w.pack("B", 0)
    else:
        wt = np.asarray(head.weight, dtype=np.float64)
        w.pack("BH", 1, wt.shape[1])
        w.array(wt, np.float32)
        w.array(head.bias, np.float32)
    body = w.buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads_weights(data: bytes):
    """Returns (ModelConfig, EncoderWeights, Classifier or None)."""
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("not a weight file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError("weight file checksum mismatch")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("H")
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    layers, d, di, heads, b_act, kind, seq = r.unpack("HIIHBBI")
    if kind >= len(rm.MODEL_KINDS):
        raise FormatError(f"bad model kind index {kind}")
    cfg = rm.ModelConfig(layers=layers, d_hid=d, d_inter=di, num_head=heads, b_act=b_act,
                         model_kind=rm.MODEL_KINDS[kind], seq_len=seq)
    out = []
    for _ in range(layers):
        lin = {}
        for name in rm.LINEARS:
            (k,) = r.unpack("B")
            if k == 0:
                lin[name] = _get_bin(r)
            elif k == 1:
                w1, w2 = _get_bin(r), _get_bin(r)
                cols = w1.shape[1]
                s1 = r.array(np.float32, cols).astype(np.float64)
                s2 = r.array(np.float32, cols).astype(np.float64)
                lin[name] = SplitLayer(w1, w2, s1, s2)
            else:
                raise FormatError(f"bad linear kind {k}")
        ln = [r.array(np.float16, d) for _ in range(4)]
        quant = {}
        for site in rm.SITES:
            (present,) = r.unpack("B")
            if not present:
                quant[site] = None
                continue
            sc, bi, inv = r.array(np.float16, 3)
            bits, signed = r.unpack("BB")
            quant[site] = ElasticParams(sc, bi, bits, bool(signed), inv)
        out.append(rm.LayerWeights(lin, quant, *ln))
    (has_head,) = r.unpack("B")
    head = None
    if has_head:
        (classes,) = r.unpack("H")
        wt = r.array(np.float32, d * classes).reshape(d, classes).astype(np.float64)
        bias = r.array(np.float32, classes).astype(np.float64)
        head = rm.Classifier(wt, bias)
    if r.pos != len(body):
        raise FormatError("trailing bytes in weight file")
    weights = rm.EncoderWeights(out)
    try:
        weights.check(cfg)
    except ValueError as e:
        raise FormatError(str(e)) from e
    return cfg, weights, head


def save_weights(path, cfg, weights, head=None) -> None:
    with open(path, "wb") as f:
        f.write(dumps_weights(cfg, weights, head))


def load_weights(path):
    with open(path, "rb") as f:
        return loads_weights(f.read())


# -- ternary checkpoints ----------------------------------------------------------

def save_checkpoint(path, cfg: rm.ModelConfig, latents: list, ln: list | None = None) -> None:
    """Latent (pre-ternarization) weights: one dict of LINEARS per layer."""
    arrays = {"config": np.frombuffer(_cfg_bytes(cfg), dtype=np.uint8)}
    for i, layer in enumerate(latents):
        for name in rm.LINEARS:
            arrays[f"layer{i}.{name}"] = np.asarray(layer[name], dtype=np.float64)
        if ln is not None:
            for j, key in enumerate(("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")):
                arrays[f"layer{i}.{key}"] = np.asarray(ln[i][j], dtype=np.float16)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            files = {k: z[k] for k in z.files}
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read checkpoint: {e}") from e
    if "config" not in files:
        raise FormatError("checkpoint has no config entry")
    cfg = _cfg_from_bytes(files["config"].tobytes())
    latents, ln = [], []
    for i in range(cfg.layers):
        try:
            latents.append({n: files[f"layer{i}.{n}"] for n in rm.LINEARS})
        except KeyError as e:
            raise FormatError(f"checkpoint misses {e.args[0]}") from e
        keys = [f"layer{i}.{k}" for k in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")]
        ln.append(tuple(files[k] for k in keys) if all(k in files for k in keys) else None)
    return cfg, latents, ln


def _cfg_bytes(cfg: rm.ModelConfig) -> bytes:
    return struct.pack("<HIIHBBI", cfg.layers, cfg.d_hid, cfg.d_inter, cfg.num_head, cfg.b_act,
                       rm.MODEL_KINDS.index(cfg.model_kind), cfg.seq_len)


def _cfg_from_bytes(b: bytes) -> rm.ModelConfig:
    try:
        layers, d, di, h, ba, kind, seq = struct.unpack("<HIIHBBI", b)
    except struct.error as e:
        raise FormatError("bad config entry") from e
    return rm.ModelConfig(layers=layers, d_hid=d, d_inter=di, num_head=h, b_act=ba,
                          model_kind=rm.MODEL_KINDS[kind], seq_len=seq)


# -- tensors / datasets ------------------------------------------------------------

def load_inputs(path):
    """A single (seq, d) tensor (.npy) or a dataset (.npz with x and optional y)."""
    try:
        obj = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read input: {e}") from e
    if isinstance(obj, np.lib.npyio.NpzFile):
        with obj:
            if "x" not in obj.files:
                raise FormatError("dataset file needs an 'x' array")
            x = obj["x"]
            y = obj["y"] if "y" in obj.files else None
    else:
        x, y = obj, None
    x = np.asarray(x)
    if x.size == 0:
        raise FormatError("input tensor is empty")
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise FormatError(f"input must be (seq, d) or (n, seq, d), got shape {x.shape}")
    return x.astype(np.float16), y


def save_tensor(path, x) -> None:
    with open(path, "wb") as f:
        np.save(f, np.asarray(x, dtype=np.float16), allow_pickle=False)
