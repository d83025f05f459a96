"""Grid design-space exploration over model and accelerator parameters.

Latency and resources separate by module, so each algorithmic configuration
needs only 360 MHA and 360 FFN module evaluations; the 360 x 360 hardware
pairs are then combined with array arithmetic.  For a fixed algorithmic
configuration accuracy and robustness are constant, so only its fastest
feasible hardware pairs can be Pareto-optimal; the Pareto filter runs on those.
"""
from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal, localcontext
from importlib import resources as ilr

import numpy as np

from . import refmodel as rm
from .simulator import HwConfig
from .simulator.accel import analytic_module, ffn_model, mha_model
from .simulator.config import (CLOCK_HZ, P_DPU_OPTIONS, P_LN_OPTIONS, P_QUAN_OPTIONS,
                               P_VU_OPTIONS, ConfigurationInfeasible)
from .simulator.resources import AVAILABLE, RESOURCE_CAP, module_resources
from .simulator.schedule import two_module_total

log = logging.getLogger(__name__)

FULL_D_HID, FULL_D_INTER = 384, 1536
SIZE_PENALTY = 1.5            # accuracy points lost per halving below full size
HEAD_DIM = 64
DEFAULT_LAYERS = 12
ROBUSTNESS_RUNS = 20

# GLUE development-set results of the 1-bit-weight models and the full
# precision baseline, as reported for full-size models.  Columns are frozen.
GLUE_TASKS = ("MNLI-m", "MNLI-mm", "QQP", "QNLI", "SST-2", "CoLA", "STS-B", "MRPC", "RTE", "Avg")
_GLUE_ROWS = """\
BERT,32-32-32,84.9,85.5,91.4,92.1,93.2,59.7,90.1,86.3,72.2,83.9
Q-BERT,2-8-8,76.6,77.0,,,84.6,,,68.3,52.7,
Q2BERT,2-8-8,47.2,47.3,67.0,61.3,80.6,0,4.4,68.4,52.7,47.7
TernaryBERT,2-2-8,83.3,83.3,90.1,,,50.7,,87.5,68.2,
BinaryBERT,1-1-8,84.2,84.7,91.2,91.5,92.6,53.4,88.6,85.5,72.2,82.7
BinaryBERT,1-1-4,83.9,84.2,91.2,90.9,92.3,44.4,87.2,83.3,65.3,79.9
BiT,1-1-4,83.6,84.4,87.8,91.3,91.5,42.0,86.3,86.8,66.4,79.5
BMT,1-1-4,83.2,83.3,91.0,90.4,92.4,49.7,83.5,87.5,67.1,80.9
BinaryBERT,1-1-2,62.7,63.9,79.9,52.6,82.5,14.6,6.5,78.3,52.7,41.0
BiT,1-1-2,82.1,82.5,87.1,89.3,90.8,32.1,82.2,78.4,58.1,75.0
BMT,1-1-2,81.2,81.5,90.0,88.3,91.5,37.4,71.4,82.1,61.7,76.1
BiT,1-1-1,79.5,79.4,85.4,86.4,89.9,32.9,72.0,79.9,62.1,73.5
"""
GLUE_SOURCE = "reported GLUE dev result (full-size model)"


def _parse_glue() -> dict:
    table = {}
    for line in _GLUE_ROWS.strip().splitlines():
        name, bits, *vals = line.split(",")
        table[(name, bits)] = {t: (float(v) if v else None) for t, v in zip(GLUE_TASKS, vals)}
    return table


GLUE_TABLE = _parse_glue()
BASELINE = ("BERT", "32-32-32")


class MetricUnavailable(LookupError):
    pass


class NoFeasiblePoint(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or []


# -- robustness ---------------------------------------------------------------

def robustness(accs, a0) -> float:
    """A0 / sqrt(mean((A_i - A0)^2)); +inf when every run equals A0.

    Evaluated in decimal arithmetic on the shortest representation of each
    accuracy, so decimal fixtures come out exact (0.8 with +-0.1 gives 8.0).
    """
    accs = [float(a) for a in np.asarray(accs, dtype=np.float64).ravel()]
    if len(accs) != ROBUSTNESS_RUNS:
        raise ValueError(f"robustness needs exactly {ROBUSTNESS_RUNS} perturbed accuracies")
    with localcontext() as ctx:
        ctx.prec = 60
        d0 = Decimal(repr(float(a0)))
        ss = sum((Decimal(repr(a)) - d0) ** 2 for a in accs)
        if ss == 0:
            return math.inf
        rms = (ss / len(accs)).sqrt()
        return float(d0 / rms)


def upper_quartile(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return -math.inf
    return float(np.percentile(v, 75))


# -- design space ---------------------------------------------------------------

@dataclass(frozen=True)
class AlgoConfig:
    model_kind: str
    d_hid: int
    d_inter: int
    b_act: int

    def key(self) -> tuple:
        return (rm.MODEL_KINDS.index(self.model_kind), self.d_hid, self.d_inter, -self.b_act)

    def model_config(self, layers: int = DEFAULT_LAYERS, seq_len: int = 128) -> rm.ModelConfig:
        return rm.ModelConfig(layers=layers, d_hid=self.d_hid, d_inter=self.d_inter,
                              num_head=max(1, self.d_hid // HEAD_DIM), b_act=self.b_act,
                              model_kind=self.model_kind, seq_len=seq_len)

    def label(self) -> str:
        return f"<{self.model_kind}, {self.d_hid}, {self.d_inter}, {self.b_act}>"


@dataclass(frozen=True)
class DesignSpace:
    model_kinds: tuple = rm.MODEL_KINDS
    d_hid: tuple = (192, 384, 768)
    d_inter: tuple = (768, 1536, 3072)
    b_act: dict = field(default_factory=lambda: dict(rm.LEGAL_BACT))
    p_dpu: tuple = P_DPU_OPTIONS
    p_quan: tuple = P_QUAN_OPTIONS
    p_vu: tuple = P_VU_OPTIONS
    p_ln: tuple = P_LN_OPTIONS

    def __post_init__(self):
        for k in self.model_kinds:
            if k not in rm.MODEL_KINDS:
                raise ValueError(f"unknown model kind {k!r}")
            for b in self.b_act.get(k, ()):
                if b not in rm.LEGAL_BACT[k]:
                    raise ValueError(f"b_act {b} is not legal for {k}")
        for name in ("d_hid", "d_inter", "p_dpu", "p_quan", "p_vu", "p_ln"):
            if not getattr(self, name):
                raise ValueError(f"design space dimension {name} is empty")

    def algorithmic(self) -> list:
        out = []
        for k in self.model_kinds:
            for d, di, b in itertools.product(self.d_hid, self.d_inter, self.b_act.get(k, ())):
                out.append(AlgoConfig(k, d, di, b))
        return sorted(out, key=AlgoConfig.key)

    def hardware(self) -> list:
        return [HwConfig(p_dpu=a, p_quan=b, p_vu=c, p_ln=d)
                for a, b, c, d in itertools.product(self.p_dpu, self.p_quan, self.p_vu, self.p_ln)]

    def size(self) -> int:
        return len(self.algorithmic()) * len(self.hardware()) ** 2

    def to_dict(self) -> dict:
        return asdict(self)


# -- providers ----------------------------------------------------------------

@dataclass
class AccuracyProvider:
    """Accuracy per algorithmic configuration, as a fraction in [0, 1].

    ``lookup`` uses the reported full-size results and applies a synthetic
    size penalty below full size; ``table`` uses an explicit mapping.
    """

    mode: str = "lookup"
    task: str = "MRPC"
    table: dict | None = None

    def __post_init__(self):
        if self.mode not in ("lookup", "table"):
            raise ValueError(f"unknown accuracy mode {self.mode!r}")
        if self.task not in GLUE_TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def baseline(self) -> float:
        return GLUE_TABLE[BASELINE][self.task] / 100.0

    def __call__(self, a: AlgoConfig) -> tuple[float, str]:
        if self.mode == "table":
            key = (a.model_kind, a.d_hid, a.d_inter, a.b_act)
            if not self.table or key not in self.table:
                raise MetricUnavailable(f"no accuracy entry for {a.label()}")
            return float(self.table[key]), "table"
        row = GLUE_TABLE.get((a.model_kind, f"1-1-{a.b_act}"))
        if row is None or row.get(self.task) is None:
            raise MetricUnavailable(f"no reported {self.task} result for {a.label()}")
        acc = row[self.task]
        halvings = (max(0.0, math.log2(FULL_D_HID / a.d_hid))
                    + max(0.0, math.log2(FULL_D_INTER / a.d_inter)))
        if halvings:
            return (acc - SIZE_PENALTY * halvings) / 100.0, "synthetic size penalty on " + GLUE_SOURCE
        return acc / 100.0, GLUE_SOURCE


PROXY_SCALE = 8
PROXY_SEQ = 16
PROXY_LAYERS = 2
PROXY_SAMPLES = 64


def measure_robustness(d_hid: int, d_inter: int, b_act: int, seed: int = 0,
                       samples: int = PROXY_SAMPLES, runs: int = ROBUSTNESS_RUNS,
                       scale: int = PROXY_SCALE, seq_len: int = PROXY_SEQ,
                       layers: int = PROXY_LAYERS) -> tuple[float, np.ndarray, float]:
    """Perturbed-accuracy runs of a width-scaled proxy through the reference model.

    A 16-bit copy of the same binarized network labels random inputs (teacher);
    the b_act-bit network is scored against it, clean and under perturbation.
    Weights, data and noise depend only on (seed, d_hid, d_inter), so activation
    widths are compared on common random numbers.
    Returns (robustness, perturbed accuracies, clean accuracy).
    """
    ss = np.random.SeedSequence([seed, d_hid, d_inter])
    rng = np.random.Generator(np.random.Philox(ss))
    dp, dip = max(1, d_hid // scale), max(1, d_inter // scale)
    cfg = rm.ModelConfig(layers=layers, d_hid=dp, d_inter=dip,
                         num_head=max(1, d_hid // HEAD_DIM), b_act=b_act, seq_len=seq_len)
    calib = rng.standard_normal((seq_len, dp)).astype(np.float16)
    student = rm.random_weights(cfg, rng, calib_input=calib)
    teacher = copy.deepcopy(student)
    rm.passthrough_quantizers(teacher)
    head = rm.Classifier(rng.standard_normal((dp, 2)), np.zeros(2))
    x = rng.standard_normal((samples, seq_len, dp)).astype(np.float16)
    tm = rm.Model(cfg, teacher, head)
    data = rm.Dataset(x, np.array([tm.predict(xi) for xi in x]))
    accs, a0 = rm.perturbed_accuracy_runs(rm.Model(cfg, student, head), data, rng, runs)
    return robustness(accs, a0), accs, a0


def _measure_entry(args):
    d, di, b, seed = args
    r, accs, a0 = measure_robustness(d, di, b, seed)
    return {"d_hid": d, "d_inter": di, "b_act": b, "robustness": r,
            "clean_accuracy": a0, "accuracies": [float(a) for a in accs]}


def measure_robustness_table(space: DesignSpace | None = None, seed: int = 0,
                             workers: int = 1) -> dict:
    space = space or DesignSpace()
    keys = sorted({(a.d_hid, a.d_inter, a.b_act) for a in space.algorithmic()})
    jobs = [(d, di, b, seed) for d, di, b in keys]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_measure_entry, jobs))
    else:
        rows = [_measure_entry(j) for j in jobs]
    return {
        "provenance": (f"live proxy measurement: width 1/{PROXY_SCALE}, seq {PROXY_SEQ}, "
                       f"{PROXY_LAYERS} layers, {PROXY_SAMPLES} samples, seed {seed}"),
        "entries": rows,
    }


def default_robustness_table() -> dict:
    with ilr.files("batforge.data").joinpath("robustness_proxy.json").open() as f:
        return json.load(f)


@dataclass
class RobustnessProvider:
    """Robustness per algorithmic configuration.

    ``table`` reads (d_hid, d_inter, b_act) entries from a measurement table
    (the bundled one by default); ``live`` measures on the proxy model.
    """

    mode: str = "table"
    table: dict | None = None
    seed: int = 0
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("table", "live"):
            raise ValueError(f"unknown robustness mode {self.mode!r}")
        if self.mode == "table":
            t = self.table if self.table is not None else default_robustness_table()
            self.table = t
            self._index = {(e["d_hid"], e["d_inter"], e["b_act"]): float(e["robustness"])
                           for e in t["entries"]}

    def __call__(self, a: AlgoConfig) -> tuple[float, str]:
        key = (a.d_hid, a.d_inter, a.b_act)
        if self.mode == "live":
            return measure_robustness(*key, seed=self.seed)[0], f"live proxy seed {self.seed}"
        if key not in self._index:
            raise MetricUnavailable(f"no robustness entry for {a.label()}")
        return self._index[key], self.table.get("provenance", "table")


@dataclass
class Providers:
    accuracy: AccuracyProvider = field(default_factory=AccuracyProvider)
    robustness: RobustnessProvider = field(default_factory=RobustnessProvider)
    layers: int = DEFAULT_LAYERS
    seq_len: int = 128
    batch: int = 2


# -- points ---------------------------------------------------------------------

@dataclass
class DesignPoint:
    algo: AlgoConfig
    hw_mha: HwConfig
    hw_ffn: HwConfig
    accuracy: float | None = None
    robustness: float | None = None
    latency_cycles: int | None = None
    resources: dict | None = None
    feasible: bool | None = None
    provenance: dict = field(default_factory=dict)
    status: str = "ok"

    @property
    def evaluated(self) -> bool:
        return self.accuracy is not None and self.robustness is not None and self.latency_cycles is not None

    @property
    def latency_ms(self) -> float | None:
        return None if self.latency_cycles is None else 1e3 * self.latency_cycles / CLOCK_HZ

    def params(self) -> tuple:
        h = lambda c: (c.p_dpu, c.p_quan, c.p_vu, c.p_ln)
        return (self.algo.key(), h(self.hw_mha), h(self.hw_ffn))

    def as_dict(self) -> dict:
        h = lambda c: {"p_dpu": c.p_dpu, "p_quan": c.p_quan, "p_vu": c.p_vu, "p_ln": c.p_ln}
        rob = self.robustness
        return {
            "algorithm": {"model_kind": self.algo.model_kind, "d_hid": self.algo.d_hid,
                          "d_inter": self.algo.d_inter, "b_act": self.algo.b_act},
            "mha": h(self.hw_mha), "ffn": h(self.hw_ffn),
            "accuracy": self.accuracy,
            "robustness": "inf" if rob is not None and math.isinf(rob) else rob,
            "latency_cycles": self.latency_cycles, "latency_ms": self.latency_ms,
            "resources": self.resources, "feasible": self.feasible,
            "provenance": dict(self.provenance), "status": self.status,
        }


def _module_times(a: AlgoConfig, hws: list, prov: Providers):
    cfg = a.model_config(prov.layers, prov.seq_len)
    tm, tf = [], []
    for hw in hws:
        try:
            tm.append(analytic_module(_checked(mha_model(cfg, hw), hw), hw))
        except ConfigurationInfeasible:
            tm.append(-1)
        try:
            tf.append(analytic_module(_checked(ffn_model(cfg, hw), hw), hw))
        except ConfigurationInfeasible:
            tf.append(-1)
    return np.array(tm, dtype=np.int64), np.array(tf, dtype=np.int64)


def _checked(model, hw):
    if model.buffer_need > hw.buffer_bytes:
        raise ConfigurationInfeasible(f"{model.name} buffer overflow")
    return model


def evaluate_point(a: AlgoConfig, hw_mha: HwConfig, hw_ffn: HwConfig,
                   providers: Providers | None = None) -> DesignPoint:
    prov = providers or Providers()
    p = DesignPoint(a, hw_mha, hw_ffn)
    try:
        p.accuracy, p.provenance["accuracy"] = prov.accuracy(a)
        p.robustness, p.provenance["robustness"] = prov.robustness(a)
    except MetricUnavailable as e:
        log.warning("point %s excluded: %s", a.label(), e)
        p.status = f"metric-unavailable: {e}"
        return p
    cfg = a.model_config(prov.layers, prov.seq_len)
    try:
        tm = analytic_module(_checked(mha_model(cfg, hw_mha), hw_mha), hw_mha)
        tf = analytic_module(_checked(ffn_model(cfg, hw_ffn), hw_ffn), hw_ffn)
    except ConfigurationInfeasible as e:
        p.status = f"infeasible: {e}"
        p.feasible = False
        return p
    p.latency_cycles = int(two_module_total(tm, tf, prov.batch * prov.layers))
    p.provenance["latency"] = "analytic"
    m, f = module_resources(hw_mha, "mha"), module_resources(hw_ffn, "ffn")
    p.resources = dict(zip(("lut", "ff", "bram", "dsp"), (x + y for x, y in zip(m, f))))
    p.feasible = all(p.resources[k] <= RESOURCE_CAP * getattr(AVAILABLE, k) for k in p.resources)
    if not p.feasible:
        p.status = "resource-infeasible"
    return p


# -- pareto / selection -----------------------------------------------------------

def dominates(q, p) -> bool:
    ge = q.accuracy >= p.accuracy and q.robustness >= p.robustness and q.latency_cycles <= p.latency_cycles
    gt = q.accuracy > p.accuracy or q.robustness > p.robustness or q.latency_cycles < p.latency_cycles
    return ge and gt


def _order(p):
    return (p.latency_cycles, -p.accuracy, -p.robustness, p.params())


def pareto_filter(points) -> list:
    """Non-dominated subset (max accuracy, max robustness, min latency).

    After sorting by (latency, -accuracy, -robustness) a point can only be
    dominated by an earlier one, and only the running front needs checking.
    """
    pts = sorted((p for p in points), key=_order)
    if not pts:
        raise ValueError("pareto_filter needs at least one point")
    front = []
    for p in pts:
        if not any(dominates(q, p) for q in front):
            front.append(p)
    return front


def select_under_constraints(pareto, acc_floor: float, robustness_rule: float) -> DesignPoint:
    """Lowest-latency Pareto point with accuracy >= floor and robustness > rule.

    ``robustness_rule`` is the threshold (normally the upper quartile of all
    evaluated robustness values); +inf robustness always passes.
    """
    if not pareto:
        raise ValueError("empty Pareto set")
    ok = [p for p in pareto if p.accuracy >= acc_floor - 1e-12 and p.robustness > robustness_rule]
    if not ok:
        diag = sorted(pareto, key=lambda p: (max(0.0, acc_floor - p.accuracy)
                                            + (0.0 if p.robustness > robustness_rule else 1.0),
                                            p.latency_cycles))[:5]
        lines = [f"{p.algo.label()} acc={p.accuracy:.4f} rob={p.robustness:.4g} "
                 f"lat={p.latency_cycles}" for p in diag]
        raise NoFeasiblePoint(
            f"no Pareto point meets accuracy >= {acc_floor:.4f} and robustness > {robustness_rule:.4g}",
            lines)
    return min(ok, key=lambda p: (p.latency_cycles, -p.accuracy, p.params()))


# -- sweep ----------------------------------------------------------------------

POINT_COLUMNS = (
    "model_kind", "d_hid", "d_inter", "b_act",
    "mha_p_dpu", "mha_p_quan", "mha_p_vu", "mha_p_ln",
    "ffn_p_dpu", "ffn_p_quan", "ffn_p_vu", "ffn_p_ln",
    "accuracy", "accuracy_source", "robustness", "robustness_source",
    "latency_cycles", "latency_ms", "latency_source",
    "lut", "ff", "bram", "dsp", "feasible", "pareto", "status",
)
CSV_VERSION = 1


@dataclass
class AlgoResult:
    algo: AlgoConfig
    accuracy: float | None
    acc_src: str
    robustness: float | None
    rob_src: str
    t_mha: np.ndarray | None
    t_ffn: np.ndarray | None
    status: str = "ok"


@dataclass
class SweepResult:
    space: DesignSpace
    hardware: list
    algos: list
    feasible: np.ndarray            # (H, H) hardware-pair feasibility
    resources: np.ndarray           # (H, H, 4)
    pareto: list
    q3: float
    acc_floor: float
    selection: DesignPoint | None
    error: NoFeasiblePoint | None
    depth: int

    def latency(self, i: int) -> np.ndarray:
        r = self.algos[i]
        tm, tf = r.t_mha[:, None], r.t_ffn[None, :]
        return tm + (self.depth - 1) * np.maximum(tm, tf) + tf

    def n_points(self) -> int:
        return len(self.algos) * len(self.hardware) ** 2


def _eval_algo(args):
    a, hws, prov = args
    try:
        acc, acc_src = prov.accuracy(a)
        rob, rob_src = prov.robustness(a)
    except MetricUnavailable as e:
        log.warning("configuration %s excluded: %s", a.label(), e)
        return AlgoResult(a, None, "", None, "", None, None, f"metric-unavailable: {e}")
    tm, tf = _module_times(a, hws, prov)
    return AlgoResult(a, acc, acc_src, rob, rob_src, tm, tf)


def sweep(space: DesignSpace | None = None, providers: Providers | None = None,
          workers: int = 1, acc_floor: float | None = None) -> SweepResult:
    """Evaluate every legal design point; Pareto-filter and select."""
    space = space or DesignSpace()
    prov = providers or Providers()
    hws = space.hardware()
    algos = space.algorithmic()
    jobs = [(a, hws, prov) for a in algos]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_eval_algo, jobs))
    else:
        results = [_eval_algo(j) for j in jobs]
    results.sort(key=lambda r: r.algo.key())

    res_m = np.array([module_resources(h, "mha") for h in hws])
    res_f = np.array([module_resources(h, "ffn") for h in hws])
    res = res_m[:, None, :] + res_f[None, :, :]
    cap = RESOURCE_CAP * np.array([AVAILABLE.lut, AVAILABLE.ff, AVAILABLE.bram, AVAILABLE.dsp])
    feasible = (res <= cap).all(axis=-1)
    depth = prov.batch * prov.layers
    if acc_floor is None:
        acc_floor = prov.accuracy.baseline() - 0.01

    nh = len(hws)
    rob_vals, rob_counts = [], []
    cands = []
    for r in results:
        if r.accuracy is None:
            continue
        ok_m, ok_f = r.t_mha >= 0, r.t_ffn >= 0
        rob_vals.append(r.robustness)
        rob_counts.append(int(ok_m.sum()) * int(ok_f.sum()))
        tm, tf = r.t_mha[:, None], r.t_ffn[None, :]
        lat = tm + (depth - 1) * np.maximum(tm, tf) + tf
        valid = feasible & ok_m[:, None] & ok_f[None, :]
        if not valid.any():
            continue
        best = lat[valid].min()
        for i, j in zip(*np.nonzero(valid & (lat == best))):
            p = DesignPoint(r.algo, hws[i], hws[j], r.accuracy, r.robustness, int(best),
                            dict(zip(("lut", "ff", "bram", "dsp"), res[i, j].tolist())), True,
                            {"accuracy": r.acc_src, "robustness": r.rob_src, "latency": "analytic"})
            cands.append(p)
    # every evaluated point counts once in the quartile
    weights = np.array(rob_counts)
    vals = np.array(rob_vals, dtype=np.float64)
    q3 = upper_quartile(np.repeat(vals, weights)) if len(vals) else -math.inf
    pareto = pareto_filter(cands) if cands else []
    sel, err = None, None
    try:
        sel = select_under_constraints(pareto, acc_floor, q3)
    except (NoFeasiblePoint, ValueError) as e:
        err = e if isinstance(e, NoFeasiblePoint) else NoFeasiblePoint(str(e))
    return SweepResult(space, hws, results, feasible, res, pareto, q3, acc_floor,
                       sel, err, depth)


def _fmt(x, spec):
    if x is None:
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return format(x, spec)


def write_points_csv(result: SweepResult, stream) -> int:
    """One row per design point; returns the row count."""
    w = stream
    w.write(",".join(POINT_COLUMNS) + "\n")
    hws = result.hardware
    hstr = [f"{h.p_dpu},{h.p_quan},{h.p_vu},{h.p_ln}" for h in hws]
    pareto_keys = {p.params() for p in result.pareto}
    res = result.resources
    res_s = [[f"{res[i, j, 0]:.1f},{res[i, j, 1]:.1f},{res[i, j, 2]:.1f},{res[i, j, 3]:.1f}"
              for j in range(len(hws))] for i in range(len(hws))]
    feas = result.feasible
    n = 0
    for idx, r in enumerate(result.algos):
        a = r.algo
        head = f"{a.model_kind},{a.d_hid},{a.d_inter},{a.b_act}"
        if r.accuracy is None:
            for i in range(len(hws)):
                for j in range(len(hws)):
                    w.write(f"{head},{hstr[i]},{hstr[j]},,,,,,,,,,,,,,{_csv_safe(r.status)}\n")
                    n += 1
            continue
        metr = (f"{r.accuracy:.4f},{_csv_safe(r.acc_src)},{_fmt(r.robustness, '.6f')},"
                f"{_csv_safe(r.rob_src)}")
        lat = result.latency(idx)
        for i in range(len(hws)):
            lines = []
            for j in range(len(hws)):
                if r.t_mha[i] < 0 or r.t_ffn[j] < 0:
                    lines.append(f"{head},{hstr[i]},{hstr[j]},{metr},,,,{res_s[i][j]},0,0,"
                                 "buffer-infeasible\n")
                    continue
                c = int(lat[i, j])
                ok = bool(feas[i, j])
                par = (a.key(), (hws[i].p_dpu, hws[i].p_quan, hws[i].p_vu, hws[i].p_ln),
                       (hws[j].p_dpu, hws[j].p_quan, hws[j].p_vu, hws[j].p_ln)) in pareto_keys
                lines.append(f"{head},{hstr[i]},{hstr[j]},{metr},{c},{1e3 * c / CLOCK_HZ:.6f},"
                             f"analytic,{res_s[i][j]},{int(ok)},{int(par)},"
                             f"{'ok' if ok else 'resource-infeasible'}\n")
            w.write("".join(lines))
            n += len(lines)
    return n


def _csv_safe(s: str) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([s])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def write_artifacts(result: SweepResult, out_dir: str, points: bool = True) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    if points:
        paths["points"] = os.path.join(out_dir, "points.csv")
        with open(paths["points"], "w", newline="") as f:
            write_points_csv(result, f)
    paths["pareto"] = os.path.join(out_dir, "pareto.json")
    with open(paths["pareto"], "w") as f:
        json.dump({"csv_version": CSV_VERSION, "count": len(result.pareto),
                   "points": [p.as_dict() for p in result.pareto]},
                  f, indent=1, sort_keys=True, default=_json_default)
        f.write("\n")
    paths["selection"] = os.path.join(out_dir, "selection.json")
    sel = {
        "accuracy_floor": result.acc_floor,
        "robustness_upper_quartile": result.q3,
        "design_points": result.n_points(),
        "pareto_size": len(result.pareto),
    }
    if result.selection is not None:
        s = result.selection
        sel["selected"] = s.as_dict()
        sel["algorithmic"] = {"model_kind": s.algo.model_kind, "d_hid": s.algo.d_hid,
                              "d_inter": s.algo.d_inter, "b_act": s.algo.b_act}
    else:
        sel["selected"] = None
        sel["error"] = str(result.error)
        sel["diagnostics"] = result.error.diagnostics if result.error else []
    with open(paths["selection"], "w") as f:
        json.dump(sel, f, indent=1, sort_keys=True, default=_json_default)
        f.write("\n")
    return paths
