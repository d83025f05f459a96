"""QMM tile mapping, intra-layer row pipelining and the inter-layer pipeline."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .config import HwConfig
from .events import Stage, run_rows


@dataclass
class TilePlan:
    pattern: str                      # "aw" (multicast activations) or "aa" (unicast)
    assignments: list                 # per DPU: (head or None, row slice, column slice)
    batches: int
    per_dpu_cols: int
    row_split: int
    cycles: int
    multicast: bool
    idle_dpus: int = 0
    notes: list = field(default_factory=list)


def _check_dims(*dims):
    if any(int(d) <= 0 for d in dims):
        raise ValueError("matrix dimensions must be positive")


def aw_row_cycles(k: int, n_cols: int, hw: HwConfig, weight_bits: int = 1) -> int:
    """Cycles for one activation row against an (K, N) weight matrix."""
    return math.ceil(n_cols / hw.p_dpu) * math.ceil(k / hw.p_pe) * weight_bits


def qmm_schedule_aw(m: int, k: int, n_cols: int, hw: HwConfig, operand_bits: int = 1) -> TilePlan:
    """Activation x weight: weight columns tiled over DPUs, activation rows multicast.

    ``operand_bits`` is the bit-serial width of the weight operand (1 for binary).
    """
    _check_dims(m, k, n_cols, operand_bits)
    per = math.ceil(n_cols / hw.p_dpu)
    assign = []
    for d in range(hw.p_dpu):
        lo = min(d * per, n_cols)
        hi = min(lo + per, n_cols)
        assign.append((None, slice(0, m), slice(lo, hi)))
    idle = sum(1 for a in assign if a[2].start == a[2].stop)
    cycles = per * m * math.ceil(k / hw.p_pe) * operand_bits + hw.qmm_fill
    return TilePlan("aw", assign, 1, per, 1, cycles, True, idle)


def aa_row_groups(num_head: int, p_dpu: int) -> int:
    """DPUs cooperating on one head's rows (1 when heads >= DPUs)."""
    return max(1, p_dpu // num_head)


def aa_batches(num_head: int, p_dpu: int) -> int:
    return math.ceil(num_head / p_dpu)


def qmm_schedule_aa(m: int, k: int, n_cols: int, num_head: int, hw: HwConfig, bits: int) -> TilePlan:
    """Activation x activation (per-head) mapping.

    Heads go one per DPU.  With more heads than DPUs they are serialized in
    batches; with fewer, each head's rows are divided over
    floor(p_dpu / num_head) DPUs and the remainder idles.
    """
    _check_dims(m, k, n_cols, num_head, bits)
    batches = aa_batches(num_head, hw.p_dpu)
    g = aa_row_groups(num_head, hw.p_dpu)
    notes = []
    if num_head < hw.p_dpu and hw.p_dpu % num_head:
        notes.append(f"{hw.p_dpu % num_head} DPUs idle: p_dpu not a multiple of num_head")
    rows_per = math.ceil(m / g)
    assign = []
    for h in range(num_head):
        for j in range(g):
            lo = min(j * rows_per, m)
            assign.append((h, slice(lo, min(lo + rows_per, m)), slice(0, n_cols)))
    used = min(num_head, hw.p_dpu) * g
    cycles = batches * rows_per * n_cols * math.ceil(k / hw.p_pe) * bits + hw.qmm_fill
    return TilePlan("aa", assign, batches, n_cols, g, cycles, False, hw.p_dpu - used, notes)


# -- intra-layer ---------------------------------------------------------------

@dataclass
class PipelineResult:
    cycles: int
    sequential_cycles: int
    buffer_rows: int          # rows simultaneously in flight
    stage_busy: dict


def run_intra_layer_pipeline(stage_costs, rows: int, latencies=None) -> PipelineResult:
    """Row-pipelined makespan of a chain where every stage has its own unit.

    ``stage_costs`` is a list of per-row cycle costs (or ``Stage`` objects).
    """
    stages = []
    for i, c in enumerate(stage_costs):
        if isinstance(c, Stage):
            stages.append(c)
        else:
            lat = 0 if latencies is None else int(latencies[i])
            stages.append(Stage(f"s{i}", f"u{i}", int(c), lat))
    if not stages:
        raise ValueError("need at least one stage")
    units = {}
    for s in stages:
        units.setdefault(s.unit, 1)
    res = run_rows(stages, rows, units, dma_unit="")
    seq = rows * sum(s.cost + s.latency for s in stages)
    return PipelineResult(res.makespan, seq, res.max_rows_in_flight, res.stage_busy)


def pipelined_bound(stage_costs, rows: int) -> int:
    """fill + (rows - 1) * bottleneck for a chain of distinct units."""
    costs = [int(c) for c in stage_costs]
    return sum(costs) + (rows - 1) * max(costs)


# -- inter-layer ---------------------------------------------------------------

def two_module_total(t_mha: float, t_ffn: float, depth: int):
    """Makespan of ``depth`` jobs alternating through the MHA and FFN modules."""
    if depth < 1:
        raise ValueError("pipeline depth must be >= 1")
    return t_mha + (depth - 1) * max(t_mha, t_ffn) + t_ffn


@dataclass
class InterLayerResult:
    total_cycles: int
    depth: int
    mha_spans: list           # (job, start, end)
    ffn_spans: list


def inter_layer_schedule(t_mha, t_ffn, layers: int, batch: int = 2) -> InterLayerResult:
    """Event simulation of the MHA/FFN alternation.

    Jobs are (sample, layer), issued layer-major and sample-minor.  ``t_mha`` and
    ``t_ffn`` may be scalars or per-layer sequences.  The MHA step of layer l
    of a sample needs that sample's FFN step of layer l-1.
    """
    if layers < 1 or batch < 1:
        raise ValueError("layers and batch must be >= 1")
    tm = [t_mha] * layers if not hasattr(t_mha, "__len__") else list(t_mha)
    tf = [t_ffn] * layers if not hasattr(t_ffn, "__len__") else list(t_ffn)
    if len(tm) != layers or len(tf) != layers:
        raise ValueError("per-layer stage times must have one entry per layer")
    jobs = [(b, l) for l in range(layers) for b in range(batch)]
    ffn_end = {}
    mha_free = ffn_free = 0
    mha_spans, ffn_spans = [], []
    # both modules serve jobs in issue order; a heap keeps the event order total
    pending = []
    for j, (b, l) in enumerate(jobs):
        heapq.heappush(pending, (j, b, l))
    while pending:
        j, b, l = heapq.heappop(pending)
        dep = ffn_end.get((b, l - 1), 0)
        ms = max(mha_free, dep)
        me = ms + tm[l]
        mha_free = me
        fs = max(ffn_free, me)
        fe = fs + tf[l]
        ffn_free = fe
        ffn_end[(b, l)] = fe
        mha_spans.append((j, ms, me))
        ffn_spans.append((j, fs, fe))
    total = max(e for _, _, e in ffn_spans)
    return InterLayerResult(total, len(jobs), mha_spans, ffn_spans)
