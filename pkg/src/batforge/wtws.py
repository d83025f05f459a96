"""Ternary weight splitting with weighted recombination.

A half-sized ternary linear layer is split into two binary layers whose sum
reproduces the ternary weights exactly; per-column coefficients ``sigma1`` and
``sigma2`` then re-weight the halves.  All math here is offline (binary64).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinWeight
from .quantize import bwn_binarize

TERNARY_THRESHOLD = 0.7


class DegenerateTernaryError(ValueError):
    pass


class SplitDegenerateError(ValueError):
    pass


@dataclass
class TernaryLayer:
    latent: np.ndarray
    ternary: np.ndarray
    delta: float

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        self.ternary = np.asarray(self.ternary, dtype=np.float64)
        if self.latent.shape != self.ternary.shape:
            raise ValueError("latent and ternary shapes differ")
        if not self.delta > 0:
            raise ValueError("ternary scale must be positive")
        ok = np.isin(self.ternary, (-self.delta, 0.0, self.delta))
        if not ok.all():
            raise ValueError("ternary entries must be in {-delta, 0, +delta}")


@dataclass
class SplitLayer:
    w1: BinWeight
    w2: BinWeight
    sigma1: np.ndarray
    sigma2: np.ndarray
    a: float = float("nan")
    b: float = float("nan")

    @classmethod
    def with_unit_sigma(cls, w1: BinWeight, w2: BinWeight, a=float("nan"), b=float("nan")):
        cols = w1.shape[1]
        return cls(w1, w2, np.ones(cols), np.ones(cols), a, b)

    def set_sigma(self, sigma1, sigma2) -> None:
        s1 = np.asarray(sigma1, dtype=np.float64).ravel()
        s2 = np.asarray(sigma2, dtype=np.float64).ravel()
        cols = self.w1.shape[1]
        if s1.shape != (cols,) or s2.shape != (cols,):
            raise ValueError(f"sigma vectors must have length {cols}")
        self.sigma1, self.sigma2 = s1, s2

    def effective_weight(self) -> np.ndarray:
        return (self.w1.dequantize() * self.sigma1[None, :]
                + self.w2.dequantize() * self.sigma2[None, :])

    @property
    def shape(self) -> tuple[int, int]:
        return self.w1.shape


def ternarize(latent: np.ndarray) -> TernaryLayer:
    """Threshold ternarizer: t = 0.7 * mean|W|, delta = mean|W| over kept entries."""
    w = np.asarray(latent, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot ternarize an empty matrix")
    mag = np.abs(w)
    thresh = TERNARY_THRESHOLD * mag.mean()
    keep = mag > thresh
    if not keep.any():
        raise DegenerateTernaryError("no entry exceeds the ternary threshold")
    delta = float(mag[keep].mean())
    tern = np.where(keep, np.where(w >= 0, delta, -delta), 0.0)
    return TernaryLayer(w, tern, delta)


def split_coefficients(layer: TernaryLayer) -> tuple[float, float]:
    """Scalars (a, b) of the splitting operator.

    The coefficient ``a`` is written so that both binary halves get equal
    scales: a = (S_I + S_K - S_J) / (2 S_I).  The commonly printed form has
    S_J and S_K swapped, which breaks W1 + W2 == ternary on the zero set.
    Entries that are exactly 0 in both latent and ternary weights take the
    "otherwise" branch, so they are counted with K.
    """
    w, t = layer.latent.ravel(), layer.ternary.ravel()
    mag = np.abs(w)
    in_i = t != 0
    in_j = (~in_i) & (w > 0)
    in_k = (~in_i) & ~in_j
    s_i, s_j, s_k = mag[in_i].sum(), mag[in_j].sum(), mag[in_k].sum()
    n_i, n_jk = int(in_i.sum()), int(in_j.sum() + in_k.sum())
    if n_i == 0:
        raise SplitDegenerateError("ternary layer has no nonzero entries")
    a = (s_i + s_k - s_j) / (2.0 * s_i)
    if n_jk == 0:
        b = 0.0
    else:
        b = (w.size / n_i * s_i - mag.sum()) / (2.0 * n_jk)
    return float(a), float(b)


def split_latent(layer: TernaryLayer) -> tuple[np.ndarray, np.ndarray, float, float]:
    a, b = split_coefficients(layer)
    if not 0.0 < a < 1.0:
        raise SplitDegenerateError(f"split coefficient a={a:.6g} outside (0, 1)")
    w, t = layer.latent, layer.ternary
    if b <= 0 and (t == 0).any():
        # only happens when delta is not the mean magnitude of the kept set
        raise SplitDegenerateError(f"split offset b={b:.6g} must be positive")
    nz = t != 0
    pos = (~nz) & (w > 0)
    rest = (~nz) & ~pos
    w1 = np.where(nz, a * w, np.where(pos, b + w, b))
    w2 = np.where(nz, (1.0 - a) * w, np.where(pos, -b, w - b))
    return w1, w2, a, b


def tws_split(layer: TernaryLayer) -> SplitLayer:
    w1, w2, a, b = split_latent(layer)
    w1, w2 = np.atleast_2d(w1), np.atleast_2d(w2)
    return SplitLayer.with_unit_sigma(bwn_binarize(w1), bwn_binarize(w2), a, b)


def split_residual(layer: TernaryLayer, split: SplitLayer) -> float:
    """max |binarize(W1) + binarize(W2) - ternary|."""
    recon = split.w1.dequantize() + split.w2.dequantize()
    return float(np.abs(recon - np.atleast_2d(layer.ternary)).max())


def wtws_forward(x: np.ndarray, split: SplitLayer) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != split.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight rows {split.shape[0]}")
    return x @ split.effective_weight()
