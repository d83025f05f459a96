"""Linear FPGA resource model anchored on the reference implementation's breakdown.

Every coefficient is a calibration: the anchor configuration (MHA
<16,128,32,8>, FFN <16,128,96,8>, default buffers) reproduces the measured
breakdown exactly, and other configurations scale linearly.
"""
from __future__ import annotations

from .accel import ResourceEstimate
from .config import OPTIMAL_FFN, OPTIMAL_MHA, HwConfig

AVAILABLE = ResourceEstimate(lut=274080, ff=548160, bram=912, dsp=2520)
RESOURCE_CAP = 0.8

# measured anchors (LUT, FF, BRAM, DSP)
ANCHOR_QMM_MHA = (37338, 13725)
ANCHOR_QMM_FFN = (37330, 13702)
ANCHOR_QU = (13952, 29952, 0, 256)
ANCHOR_OTHERS = (57845, 79594, 114, 768)

_PE_REF = OPTIMAL_MHA.p_dpu * OPTIMAL_MHA.p_pe
_QU_REF = OPTIMAL_MHA.p_quan + OPTIMAL_FFN.p_quan
_VEC_REF = OPTIMAL_MHA.p_vu + OPTIMAL_MHA.p_ln + OPTIMAL_FFN.p_vu + OPTIMAL_FFN.p_ln
_BUF_REF = OPTIMAL_MHA.buffer_bytes + OPTIMAL_FFN.buffer_bytes


def module_resources(hw: HwConfig, module: str) -> tuple[float, float, float, float]:
    """One module's share (LUT, FF, BRAM, DSP); the two shares add up to the total."""
    if module not in ("mha", "ffn"):
        raise ValueError(f"unknown module {module!r}")
    anchor = ANCHOR_QMM_MHA if module == "mha" else ANCHOR_QMM_FFN
    k = hw.p_dpu * hw.p_pe / _PE_REF
    q = hw.p_quan / _QU_REF
    v = (hw.p_vu + hw.p_ln) / _VEC_REF
    b = hw.buffer_bytes / _BUF_REF
    lut = anchor[0] * k + ANCHOR_QU[0] * q + ANCHOR_OTHERS[0] * v
    ff = anchor[1] * k + ANCHOR_QU[1] * q + ANCHOR_OTHERS[1] * v
    return lut, ff, ANCHOR_OTHERS[2] * b, ANCHOR_QU[3] * q + ANCHOR_OTHERS[3] * v


def estimate_resources(hw_mha: HwConfig, hw_ffn: HwConfig) -> ResourceEstimate:
    m = module_resources(hw_mha, "mha")
    f = module_resources(hw_ffn, "ffn")
    return ResourceEstimate(*(a + b for a, b in zip(m, f)))


def within_cap(est: ResourceEstimate, cap: float = RESOURCE_CAP) -> bool:
    return (est.lut <= cap * AVAILABLE.lut and est.ff <= cap * AVAILABLE.ff
            and est.bram <= cap * AVAILABLE.bram and est.dsp <= cap * AVAILABLE.dsp)


def utilization(est: ResourceEstimate) -> dict:
    return {k: getattr(est, k) / getattr(AVAILABLE, k) for k in ("lut", "ff", "bram", "dsp")}
