"""Run configuration files (YAML or JSON).

Every section is optional; omitted keys take the defaults below and unknown
keys are rejected.  ``dump_config(load_config(text))`` is a fixed point, so a
dumped file reloads to the same configuration.

    seed: 0                      # u64, drives every random choice
    workers: null                # DSE worker processes (null = logical cores)
    model:                       # encoder shape
      layers: 12, d_hid: 384, d_inter: 1536, num_head: 6, b_act: 4,
      model_kind: BMT, seq_len: 128
    mha: / ffn:                  # one hardware block per module
      p_dpu: 16, p_quan: 128, p_vu: 32 (mha) / 96 (ffn), p_ln: 8, p_pe: 64,
      softmax_parallelism: 4, buffer_bytes: 655360,
      dram_bytes_per_cycle: 16.0, unit_latency: 4
    simulate:
      batch: 2
    dse:
      task: MRPC                 # GLUE column used for accuracy
      accuracy: lookup           # lookup | table
      accuracy_table: null       # list of {model_kind, d_hid, d_inter, b_act, accuracy}
      robustness: table          # table | live
      robustness_table: null     # path to a measurement table (bundled one if null)
      acc_floor: null            # fraction; null = baseline - 0.01
      model_kinds: [BinaryBERT, BMT, BiT]
      d_hid: [192, 384, 768]
      d_inter: [768, 1536, 3072]
      b_act: {BinaryBERT: [8, 4], BMT: [4, 2], BiT: [1]}
      p_dpu: [8, 16, 32, 48, 64, 96]
      p_quan: [32, 64, 128]
      p_vu: [32, 64, 96, 128, 160]
      p_ln: [8, 16, 32, 48]
      layers: 12, seq_len: 128, batch: 2
      write_points: true         # emit points.csv
    paths:
      checkpoint, weights, input, output, out_dir   # all null by default
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

import yaml

from . import refmodel as rm
from .simulator.config import (
    DEFAULT_BUFFER_BYTES, DEFAULT_DRAM_BPC, P_DPU_OPTIONS, P_LN_OPTIONS, P_QUAN_OPTIONS,
    P_VU_OPTIONS, UNIT_LATENCY, HwConfig,
)


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    layers: int = 12
    d_hid: int = 384
    d_inter: int = 1536
    num_head: int = 6
    b_act: int = 4
    model_kind: str = "BMT"
    seq_len: int = 128

    def build(self) -> rm.ModelConfig:
        return rm.ModelConfig(**dataclasses.asdict(self))


@dataclass
class HwSection:
    p_dpu: int = 16
    p_quan: int = 128
    p_vu: int = 32
    p_ln: int = 8
    p_pe: int = 64
    softmax_parallelism: int = 4
    buffer_bytes: int = DEFAULT_BUFFER_BYTES
    dram_bytes_per_cycle: float = DEFAULT_DRAM_BPC
    unit_latency: int = UNIT_LATENCY

    def build(self) -> HwConfig:
        return HwConfig(**dataclasses.asdict(self))


def _ffn_hw() -> HwSection:
    return HwSection(p_vu=96)


@dataclass
class SimulateSection:
    batch: int = 2


@dataclass
class DseSection:
    task: str = "MRPC"
    accuracy: str = "lookup"
    accuracy_table: list | None = None
    robustness: str = "table"
    robustness_table: str | None = None
    acc_floor: float | None = None
    model_kinds: list = field(default_factory=lambda: list(rm.MODEL_KINDS))
    d_hid: list = field(default_factory=lambda: [192, 384, 768])
    d_inter: list = field(default_factory=lambda: [768, 1536, 3072])
    b_act: dict = field(default_factory=lambda: {k: list(v) for k, v in rm.LEGAL_BACT.items()})
    p_dpu: list = field(default_factory=lambda: list(P_DPU_OPTIONS))
    p_quan: list = field(default_factory=lambda: list(P_QUAN_OPTIONS))
    p_vu: list = field(default_factory=lambda: list(P_VU_OPTIONS))
    p_ln: list = field(default_factory=lambda: list(P_LN_OPTIONS))
    layers: int = 12
    seq_len: int = 128
    batch: int = 2
    write_points: bool = True


@dataclass
class PathsSection:
    checkpoint: str | None = None
    weights: str | None = None
    input: str | None = None
    output: str | None = None
    out_dir: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    workers: int | None = None
    model: ModelSection = field(default_factory=ModelSection)
    mha: HwSection = field(default_factory=HwSection)
    ffn: HwSection = field(default_factory=_ffn_hw)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    dse: DseSection = field(default_factory=DseSection)
    paths: PathsSection = field(default_factory=PathsSection)


_SECTIONS = {"model": ModelSection, "mha": HwSection, "ffn": HwSection,
             "simulate": SimulateSection, "dse": DseSection, "paths": PathsSection}


def _check_scalar(where: str, value, default):
    """Reject values whose type clearly disagrees with the default."""
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
    return value


def _section(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    base = cls() if cls is not HwSection or where != "ffn" else _ffn_hw()
    kw = {}
    for f in fields(cls):
        if f.name in data:
            kw[f.name] = _check_scalar(f"{where}.{f.name}", data[f.name], getattr(base, f.name))
    return dataclasses.replace(base, **kw)


def from_dict(data: dict | None) -> RunConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(map(str, unknown))}")
    kw = {}
    for name in ("seed", "workers"):
        if name in data:
            kw[name] = _check_scalar(name, data[name], 0)
    for name, cls in _SECTIONS.items():
        kw[name] = _section(cls, data.get(name), name)
    cfg = RunConfig(**kw)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if not 0 <= cfg.seed < 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.workers is not None and cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    try:
        cfg.model.build()
        cfg.mha.build()
        cfg.ffn.build()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if cfg.simulate.batch < 1 or cfg.dse.batch < 1:
        raise ConfigError("batch must be >= 1")
    d = cfg.dse
    if d.accuracy == "table" and not d.accuracy_table:
        raise ConfigError("dse.accuracy: 'table' needs dse.accuracy_table")


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def loads_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse configuration: {e}") from e
    return from_dict(data)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return from_dict({})
    with open(path) as f:
        return loads_config(f.read())


def dump_config(cfg: RunConfig, fmt: str = "yaml") -> str:
    d = to_dict(cfg)
    if fmt == "json":
        return json.dumps(d, indent=2, sort_keys=True) + "\n"
    return yaml.safe_dump(d, sort_keys=True, default_flow_style=None)
