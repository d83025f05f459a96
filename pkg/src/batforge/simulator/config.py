from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..bitengine import DEFAULT_P_PE, tree_depth

CLOCK_HZ = 200e6
UNIT_LATENCY = 4          # pipeline depth of QU / VU / LN / softmax units
SOFTMAX_PARALLELISM = 4
DEFAULT_BUFFER_BYTES = 640 * 1024
DEFAULT_DRAM_BPC = 16.0   # 128-bit DMA at fabric clock
WEIGHT_CHUNK_BYTES = 4096

P_DPU_OPTIONS = (8, 16, 32, 48, 64, 96)
P_QUAN_OPTIONS = (32, 64, 128)
P_VU_OPTIONS = (32, 64, 96, 128, 160)
P_LN_OPTIONS = (8, 16, 32, 48)


class ConfigurationInfeasible(ValueError):
    """Raised when a configuration cannot be mapped (e.g. buffers too small)."""


@dataclass(frozen=True)
class HwConfig:
    p_dpu: int = 16
    p_quan: int = 128
    p_vu: int = 32
    p_ln: int = 8
    p_pe: int = DEFAULT_P_PE
    softmax_parallelism: int = SOFTMAX_PARALLELISM
    buffer_bytes: int = DEFAULT_BUFFER_BYTES
    dram_bytes_per_cycle: float = DEFAULT_DRAM_BPC
    unit_latency: int = UNIT_LATENCY

    def __post_init__(self):
        for name in ("p_dpu", "p_quan", "p_vu", "p_ln", "p_pe", "softmax_parallelism"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dram_bytes_per_cycle <= 0:
            raise ValueError("dram_bytes_per_cycle must be positive")
        if self.buffer_bytes < 0 or self.unit_latency < 0:
            raise ValueError("buffer_bytes and unit_latency must be non-negative")

    @property
    def qmm_fill(self) -> int:
        return tree_depth(self.p_pe)

    def transfer_cycles(self, nbytes: float) -> int:
        if nbytes <= 0 or math.isinf(self.dram_bytes_per_cycle):
            return 0
        return math.ceil(nbytes / self.dram_bytes_per_cycle)

    def in_design_space(self) -> bool:
        return (self.p_dpu in P_DPU_OPTIONS and self.p_quan in P_QUAN_OPTIONS
                and self.p_vu in P_VU_OPTIONS and self.p_ln in P_LN_OPTIONS)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "HwConfig":
        d = asdict(self)
        d.update(kw)
        return HwConfig(**d)


OPTIMAL_MHA = HwConfig(p_dpu=16, p_quan=128, p_vu=32, p_ln=8)
OPTIMAL_FFN = HwConfig(p_dpu=16, p_quan=128, p_vu=96, p_ln=8)
