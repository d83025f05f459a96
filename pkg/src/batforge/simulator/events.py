"""Deterministic discrete-event engine for row-pipelined module execution.

A job is a chain of stages applied to every row.  Stages are grouped into
segments; a segment may not start on any row until every row has finished
the previous segment (e.g. K must be complete before QK^T).  Each stage runs
on a unit with a fixed number of servers; a task holds ``need`` servers for
``cost`` cycles and its result is visible ``latency`` cycles after that.

Weight blocks are loaded by the DMA unit in chunks and gate every stage that
lists them.

Each unit serves its tasks in a fixed order, (segment, weights first,
row + lag(stage), stage): a software-pipelined diagonal that lets row r+1
enter while row r is deeper in the chain.  The lag grows by one per stage, or
by the number of rows a multi-server stage can hold side by side.  The order never depends on
durations, so the schedule is a max-plus system and shortening any task can
never delay any other (no list-scheduling anomalies).  Every dependency points
to an earlier key, so in-order service cannot deadlock.  Events are totally
ordered by (time, sequence number) and units are scanned in declaration order.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

ALL_SERVERS = -1


@dataclass(frozen=True)
class Stage:
    name: str
    unit: str
    cost: int                 # cycles the unit is occupied per row
    latency: int = 0          # extra cycles before the result is visible
    segment: int = 0
    need: int = 1             # servers held; ALL_SERVERS takes the whole unit
    weights: tuple = ()       # weight blocks that must be resident


@dataclass(frozen=True)
class WeightLoad:
    name: str
    nbytes: int
    segment: int = 0          # segment of first use, sets DMA priority


@dataclass
class EngineResult:
    makespan: int
    busy: dict                # unit -> server-cycles occupied
    servers: dict
    stage_busy: dict          # stage name -> unit-cycles
    segment_end: list
    max_rows_in_flight: int
    trace: list = field(default_factory=list)

    def utilization(self, unit: str) -> float:
        if self.makespan == 0:
            return 0.0
        return self.busy[unit] / (self.servers[unit] * self.makespan)


def run_rows(stages: list, rows: int, units: dict, weights: tuple = (),
             dma_unit: str = "dma", bytes_per_cycle: float = 16.0,
             chunk_bytes: int = 4096, trace: bool = False) -> EngineResult:
    """Simulate ``rows`` rows through ``stages``; returns the makespan and unit stats."""
    if not stages:
        raise ValueError("a stage chain needs at least one stage")
    if rows < 1:
        raise ValueError("rows must be >= 1")
    nst = len(stages)
    segs = [s.segment for s in stages]
    if any(b < a for a, b in zip(segs, segs[1:])):
        raise ValueError("stage segments must be non-decreasing")
    unit_names = list(units)
    uidx = {u: i for i, u in enumerate(unit_names)}
    for s in stages:
        if s.unit not in uidx:
            raise ValueError(f"stage {s.name!r} uses unknown unit {s.unit!r}")
        if s.cost < 0 or s.latency < 0:
            raise ValueError(f"stage {s.name!r} has negative timing")
    cap = [units[u] for u in unit_names]
    need = [cap[uidx[s.unit]] if s.need == ALL_SERVERS else s.need for s in stages]
    for s, n in zip(stages, need):
        if n > cap[uidx[s.unit]]:
            raise ValueError(f"stage {s.name!r} needs {n} servers, unit has {cap[uidx[s.unit]]}")
    s_unit = [uidx[s.unit] for s in stages]
    s_cost = [s.cost for s in stages]
    s_lat = [s.latency for s in stages]
    seg_first = {}
    for k, s in enumerate(stages):
        seg_first.setdefault(s.segment, k)
    seg_order = sorted(seg_first)
    seg_next = {a: b for a, b in zip(seg_order, seg_order[1:])}
    last_of_seg = {k for k in range(nst) if k == nst - 1 or segs[k + 1] != segs[k]}

    # weight chunks as extra DMA tasks
    known = {w.name for w in weights}
    for s in stages:
        for w in s.weights:
            if w not in known:
                raise ValueError(f"stage {s.name!r} needs unknown weight {w!r}")
    if weights and dma_unit not in uidx:
        raise ValueError("weight loads need a DMA unit")
    chunks = []            # (weight index, cost)
    left = []
    for wi, w in enumerate(weights):
        n = max(1, math.ceil(w.nbytes / chunk_bytes)) if w.nbytes > 0 else 0
        left.append(n)
        rem = w.nbytes
        for _ in range(n):
            b = min(chunk_bytes, rem)
            rem -= b
            c = 0 if math.isinf(bytes_per_cycle) else math.ceil(b / bytes_per_cycle)
            chunks.append((wi, c))
    wname_idx = {w.name: i for i, w in enumerate(weights)}
    gated = [[] for _ in weights]          # stage indices gated by each weight
    for k, s in enumerate(stages):
        for w in s.weights:
            gated[wname_idx[w]].append(k)

    # pending dependency counts for row tasks: task id = r * nst + k
    pending = [0] * (rows * nst)
    for r in range(rows):
        base = r * nst
        for k, s in enumerate(stages):
            c = len(s.weights)
            if k > 0:
                c += 1          # previous stage (or segment barrier)
            pending[base + k] = c
    weight_done = [n == 0 for n in left]
    for wi, done in enumerate(weight_done):
        if done:
            for k in gated[wi]:
                for r in range(rows):
                    pending[r * nst + k] -= 1
    seg_remaining = {g: rows for g in seg_order}

    nunits = len(unit_names)
    free = cap[:]
    busy = [0] * nunits
    stage_busy = [0] * nst
    events = []
    seq = 0
    tr = [] if trace else None
    nrow_tasks = rows * nst
    nchunks = len(chunks)
    ready = bytearray(nrow_tasks + nchunks)
    for tid in range(nrow_tasks):
        if pending[tid] == 0:
            ready[tid] = 1
    for ci in range(nchunks):
        ready[nrow_tasks + ci] = 1

    # static service order per unit
    # a stage that can run ``m`` rows side by side pushes later stages m slots back
    lag, acc = [], 0
    for k in range(nst):
        lag.append(acc)
        acc += cap[s_unit[k]] // need[k]
    order = [[] for _ in range(nunits)]
    for r in range(rows):
        for k in range(nst):
            order[s_unit[k]].append(((segs[k], 1, r + lag[k], k), r * nst + k))
    if nchunks:
        dma = uidx[dma_unit]
        for ci, (wi, _) in enumerate(chunks):
            order[dma].append(((weights[wi].segment, 0, ci, 0), nrow_tasks + ci))
    seqs = []
    for q in order:
        q.sort()
        seqs.append([task for _, task in q])
    ptr = [0] * nunits

    def release(tid):
        pending[tid] -= 1
        if pending[tid] == 0:
            ready[tid] = 1

    started_rows = 0
    finished_rows = 0
    in_flight_max = 0
    segment_end = {}
    t = 0
    while True:
        for u in range(nunits):
            q = seqs[u]
            while ptr[u] < len(q):
                task = q[ptr[u]]
                if not ready[task]:
                    break
                if task < nrow_tasks:
                    k = task % nst
                    n, c, lat = need[k], s_cost[k], s_lat[k]
                else:
                    n, c, lat = 1, chunks[task - nrow_tasks][1], 0
                if n > free[u]:
                    break
                ptr[u] += 1
                free[u] -= n
                busy[u] += n * c
                if task < nrow_tasks:
                    stage_busy[k] += c
                    if k == 0:
                        started_rows += 1
                        in_flight_max = max(in_flight_max, started_rows - finished_rows)
                if tr is not None:
                    tr.append((t, unit_names[u], task, c))
                heapq.heappush(events, (t + c, seq, 0, u, n))
                seq += 1
                heapq.heappush(events, (t + c + lat, seq, 1, task, 0))
                seq += 1
        if not events:
            break
        t = events[0][0]
        while events and events[0][0] == t:
            _, _, kind, a, b = heapq.heappop(events)
            if kind == 0:
                free[a] += b
                continue
            task = a
            if task >= nrow_tasks:
                wi = chunks[task - nrow_tasks][0]
                left[wi] -= 1
                if left[wi] == 0:
                    for k in gated[wi]:
                        for r in range(rows):
                            release(r * nst + k)
                continue
            r, k = divmod(task, nst)
            if k == nst - 1:
                finished_rows += 1
            if k in last_of_seg:
                g = segs[k]
                seg_remaining[g] -= 1
                if seg_remaining[g] == 0:
                    segment_end[g] = t
                    if g in seg_next:
                        k2 = seg_first[seg_next[g]]
                        for r2 in range(rows):
                            release(r2 * nst + k2)
            else:
                release(task + 1)

    if finished_rows != rows:
        raise RuntimeError("event simulation stalled before all rows completed")
    return EngineResult(
        makespan=t,
        busy={u: busy[i] for i, u in enumerate(unit_names)},
        servers=dict(units),
        stage_busy={s.name: stage_busy[k] for k, s in enumerate(stages)},
        segment_end=[segment_end[g] for g in seg_order],
        max_rows_in_flight=in_flight_max,
        trace=tr or [],
    )
