import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batforge import refmodel as rm
from batforge.core import make_rng
from batforge.simulator import (AVAILABLE, OPTIMAL_FFN, OPTIMAL_MHA, ConfigurationInfeasible, HwConfig,
                                Stage, WeightLoad, analytic_latency, analytic_report,
                                estimate_resources, two_module_total, ffn_model, inter_layer_schedule,
                                mha_model, qmm_schedule_aa, qmm_schedule_aw,
                                run_inter_layer_pipeline, run_intra_layer_pipeline, run_rows,
                                simulate_encoder, simulate_module, within_cap)
from batforge.simulator.accel import analytic_module, _weight_cycles
from batforge.simulator.config import (P_DPU_OPTIONS, P_LN_OPTIONS, P_QUAN_OPTIONS, P_VU_OPTIONS)
from batforge.simulator.events import ALL_SERVERS
from batforge.simulator.resources import module_resources, utilization

from oracles import chain_pipeline, two_module_schedule

OPTIMAL_CFG = rm.ModelConfig()


def random_tiny(rng: random.Random):
    heads = rng.choice([1, 2, 4])
    d = heads * rng.choice([8, 16])
    cfg = rm.ModelConfig(layers=rng.randint(1, 2), d_hid=d, d_inter=rng.choice([16, 32, 64]),
                         num_head=heads, b_act=rng.choice([1, 2, 4, 8]),
                         model_kind=rng.choice(rm.MODEL_KINDS), seq_len=rng.randint(1, 16))
    hw = HwConfig(p_dpu=rng.choice(P_DPU_OPTIONS), p_quan=rng.choice(P_QUAN_OPTIONS),
                  p_vu=rng.choice(P_VU_OPTIONS), p_ln=rng.choice(P_LN_OPTIONS),
                  p_pe=rng.choice([8, 16, 64]))
    return cfg, hw


def golden_case(seed: int) -> bool:
    r = random.Random(seed)
    cfg, hw = random_tiny(r)
    rng = make_rng(seed)
    x = rng.standard_normal((cfg.seq_len, cfg.d_hid)).astype(np.float16)
    w = rm.random_weights(cfg, rng, split=r.random() < 0.5, calib_input=x)
    ref = rm.encoder_forward(x, w, cfg)
    out, times = simulate_encoder(cfg, w, hw, x)
    return out.tobytes() == ref.tobytes() and len(times) == cfg.layers


@pytest.mark.parametrize("seed", range(6))
def test_golden_equivalence_sample(seed):
    assert golden_case(1000 + seed)


# -- intra-layer pipeline ----------------------------------------------------------

def test_intra_layer_worked_example():
    r = run_intra_layer_pipeline([3, 5], 10)
    assert r.cycles == 53
    assert r.sequential_cycles == 80


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=7), st.integers(1, 25))
def test_intra_layer_matches_flow_shop_oracle(costs, rows):
    r = run_intra_layer_pipeline(costs, rows)
    assert r.cycles == chain_pipeline(costs, rows)
    assert r.cycles <= r.sequential_cycles
    if rows > 1 and sum(1 for c in costs if c) >= 2:
        assert r.cycles < r.sequential_cycles


def test_intra_layer_latencies_count_once_per_row():
    r = run_intra_layer_pipeline([2, 2], 3, latencies=[1, 0])
    assert r.cycles == 2 + 1 + 2 + 2 * 2


# -- inter-layer pipeline ------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 24), st.integers(1, 4))
def test_inter_layer_matches_list_schedule_oracle(tm, tf, layers, batch):
    res = inter_layer_schedule(tm, tf, layers, batch)
    assert res.total_cycles == two_module_schedule(tm, tf, layers, batch)
    if batch == 2:
        assert res.total_cycles == two_module_total(tm, tf, 2 * layers)


def test_inter_layer_per_layer_times():
    rng = random.Random(3)
    for _ in range(50):
        layers = rng.randint(1, 8)
        tm = [rng.randint(1, 100) for _ in range(layers)]
        tf = [rng.randint(1, 100) for _ in range(layers)]
        assert inter_layer_schedule(tm, tf, layers, 2).total_cycles == two_module_schedule(tm, tf, layers, 2)


def test_inter_layer_rejects_bad_input():
    with pytest.raises(ValueError):
        inter_layer_schedule(1, 1, 0)
    with pytest.raises(ValueError):
        inter_layer_schedule([1, 2], [1], 2)
    with pytest.raises(ValueError):
        two_module_total(1, 1, 0)


def test_end_to_end_uses_two_module_formula():
    rep = run_inter_layer_pipeline(OPTIMAL_CFG, None, (OPTIMAL_MHA, OPTIMAL_FFN))
    assert rep.total_cycles == rep.formula_cycles
    assert rep.depth == 24
    assert rep.gops == pytest.approx(2 * rep.macs / (rep.total_cycles / 200e6) / 1e9)


# -- QMM tile plans -------------------------------------------------------------------

@pytest.mark.parametrize("heads,p_dpu", [(6, 16), (6, 8), (12, 12), (4, 32), (16, 8), (6, 96)])
def test_aa_plan_matches_multi_server_engine(heads, p_dpu):
    hw = HwConfig(p_dpu=p_dpu)
    m, k, n, bits = 37, 64, 128, 4
    plan = qmm_schedule_aa(m, k, n, heads, hw, bits)
    per_row = n * math.ceil(k / hw.p_pe) * bits
    g = max(1, p_dpu // heads)
    stage = [Stage("aa", "dpu", per_row, hw.qmm_fill)]
    if heads <= p_dpu:
        # each head owns g DPUs that share its m rows
        assert plan.cycles == run_rows(stage, m, {"dpu": g}).makespan
        if m % g == 0:
            assert plan.cycles == run_rows(stage, m * heads, {"dpu": heads * g}).makespan
    else:
        # heads are served in batches of p_dpu, one head per DPU
        one = run_rows(stage, m, {"dpu": 1}).makespan
        batches = math.ceil(heads / p_dpu)
        assert plan.cycles == batches * (one - hw.qmm_fill) + hw.qmm_fill
        if heads % p_dpu == 0:
            assert plan.cycles == run_rows(stage, m * heads, {"dpu": p_dpu}).makespan
    assert plan.idle_dpus == p_dpu - min(heads, p_dpu) * g
    assert bool(plan.notes) == (heads < p_dpu and p_dpu % heads != 0)


@pytest.mark.parametrize("p_dpu", P_DPU_OPTIONS)
def test_aw_plan_matches_engine(p_dpu):
    hw = HwConfig(p_dpu=p_dpu)
    m, k, n = 20, 384, 1152
    plan = qmm_schedule_aw(m, k, n, hw)
    per = math.ceil(n / p_dpu) * math.ceil(k / hw.p_pe)
    res = run_rows([Stage("aw", "dpu", per, hw.qmm_fill, need=ALL_SERVERS)], m, {"dpu": p_dpu})
    assert plan.cycles == res.makespan
    covered = sum(a[2].stop - a[2].start for a in plan.assignments)
    assert covered == n and plan.multicast


# -- event engine ----------------------------------------------------------------------

def test_engine_segments_are_barriers():
    st_ = [Stage("a", "u", 2, 0, 0), Stage("b", "v", 3, 0, 1)]
    res = run_rows(st_, 4, {"u": 1, "v": 1})
    assert res.segment_end[0] == 8
    assert res.makespan == 8 + 4 * 3


def test_engine_weight_gating():
    st_ = [Stage("a", "qmm", 1, 0, 0, 1, ("w",))]
    res = run_rows(st_, 2, {"qmm": 1, "dma": 1}, (WeightLoad("w", 10000, 0),),
                   bytes_per_cycle=100.0, chunk_bytes=4096)
    assert res.makespan == 41 + 41 + 19 + 2


def test_engine_rejects_bad_chains():
    with pytest.raises(ValueError):
        run_rows([], 1, {})
    with pytest.raises(ValueError):
        run_rows([Stage("a", "u", 1)], 0, {"u": 1})
    with pytest.raises(ValueError):
        run_rows([Stage("a", "x", 1)], 1, {"u": 1})
    with pytest.raises(ValueError):
        run_rows([Stage("a", "u", 1, segment=1), Stage("b", "u", 1, segment=0)], 1, {"u": 1})
    with pytest.raises(ValueError):
        run_rows([Stage("a", "u", 1, need=3)], 1, {"u": 2})
    with pytest.raises(ValueError):
        run_rows([Stage("a", "u", 1, weights=("nope",))], 1, {"u": 1})


def test_engine_is_deterministic_with_trace():
    m = mha_model(rm.ModelConfig(layers=1, d_hid=64, d_inter=128, num_head=1, seq_len=8), OPTIMAL_MHA)
    a = simulate_module(m, OPTIMAL_MHA, trace=True)
    b = simulate_module(m, OPTIMAL_MHA, trace=True)
    assert a.trace == b.trace and a.makespan == b.makespan
    assert 0 < a.utilization("qmm") <= 1


# -- module models ------------------------------------------------------------------------

def _times(cfg, hm, hf):
    mm, fm = mha_model(cfg, hm), ffn_model(cfg, hf)
    return simulate_module(mm, hm).makespan, simulate_module(fm, hf).makespan


NEXT = {"p_dpu": P_DPU_OPTIONS, "p_quan": P_QUAN_OPTIONS, "p_vu": P_VU_OPTIONS, "p_ln": P_LN_OPTIONS}


def test_more_parallelism_never_slower():
    rng = random.Random(11)
    for _ in range(25):
        cfg = rm.ModelConfig(d_hid=rng.choice([192, 384, 768]),
                             d_inter=rng.choice([768, 1536, 3072]),
                             num_head=1, b_act=rng.choice([1, 2, 4, 8]))
        cfg.num_head = cfg.d_hid // 64
        hw = HwConfig(**{k: rng.choice(v[:-1]) for k, v in NEXT.items()})
        base = _times(cfg, hw, hw)
        for k, opts in NEXT.items():
            bigger = hw.replace(**{k: opts[opts.index(getattr(hw, k)) + 1]})
            t = _times(cfg, bigger, bigger)
            assert t[0] <= base[0] and t[1] <= base[1], (cfg, hw, k)


def test_less_bandwidth_never_faster():
    cfg = rm.ModelConfig(d_hid=384, d_inter=1536, num_head=6, b_act=2)
    prev = (0, 0)
    for bw in (64.0, 32.0, 16.0, 8.0, 4.0, 2.0, 1.0):
        hw = HwConfig(dram_bytes_per_cycle=bw)
        t = _times(cfg, hw, hw)
        assert t[0] >= prev[0] and t[1] >= prev[1]
        prev = t


def test_bandwidth_bound_limit_equals_transfer_total():
    cfg = OPTIMAL_CFG
    hw = HwConfig(dram_bytes_per_cycle=1.0)
    for model in (mha_model(cfg, hw), ffn_model(cfg, hw)):
        dma = sum(s.cost for s in model.stages if s.unit == "dma") * model.rows
        dma += sum(_weight_cycles(w, hw) for w in model.weights)
        assert simulate_module(model, hw).makespan == dma


def test_infinite_bandwidth_analytic_close():
    hw = HwConfig(dram_bytes_per_cycle=math.inf)
    for model in (mha_model(OPTIMAL_CFG, hw), ffn_model(OPTIMAL_CFG, hw)):
        ev = simulate_module(model, hw).makespan
        assert abs(analytic_module(model, hw) - ev) / ev <= 0.05


def test_buffer_infeasible_is_reported():
    hw = HwConfig(buffer_bytes=1024)
    with pytest.raises(ConfigurationInfeasible):
        run_inter_layer_pipeline(OPTIMAL_CFG, None, hw)
    with pytest.raises(ConfigurationInfeasible):
        analytic_latency(OPTIMAL_CFG, hw)


def test_split_weights_double_aw_work():
    cfg = rm.ModelConfig(layers=1, d_hid=64, d_inter=128, num_head=1, seq_len=8)
    one, two = mha_model(cfg, OPTIMAL_MHA, 1), mha_model(cfg, OPTIMAL_MHA, 2)
    c1 = {s.name: s.cost for s in one.stages}
    c2 = {s.name: s.cost for s in two.stages}
    assert c2["mha.qmm_qkv"] == 2 * c1["mha.qmm_qkv"]
    assert c2["mha.qmm_qk"] == c1["mha.qmm_qk"]


def test_simulator_rejects_unsupported_width():
    cfg = rm.ModelConfig(layers=1, d_hid=16, d_inter=16, num_head=1, b_act=16, seq_len=2)
    w = rm.random_weights(cfg, make_rng(0))
    with pytest.raises(ConfigurationInfeasible):
        simulate_encoder(cfg, w, OPTIMAL_MHA, np.zeros((2, 16), np.float16))


def test_analytic_report_fields():
    rep = analytic_report(OPTIMAL_CFG, (OPTIMAL_MHA, OPTIMAL_FFN))
    assert rep["total_cycles"] == two_module_total(rep["t_mha"], rep["t_ffn"], 24)
    assert rep["gops"] > 0


# -- resources ---------------------------------------------------------------------------

def test_resource_anchor_identity():
    est = estimate_resources(OPTIMAL_MHA, OPTIMAL_FFN)
    assert est.lut == pytest.approx(146465, abs=0.5)
    assert est.ff == pytest.approx(136973, abs=0.5)
    assert est.bram == pytest.approx(114)
    assert est.dsp == pytest.approx(1024)
    assert within_cap(est)
    assert utilization(est)["lut"] == pytest.approx(146465 / AVAILABLE.lut)


def test_resources_grow_with_parallelism():
    big = HwConfig(p_dpu=96, p_quan=128, p_vu=160, p_ln=48)
    assert not within_cap(estimate_resources(big, big))
    a = module_resources(OPTIMAL_MHA, "mha")
    b = module_resources(OPTIMAL_MHA.replace(p_dpu=32), "mha")
    assert b[0] > a[0] and b[3] == a[3]
    with pytest.raises(ValueError):
        module_resources(OPTIMAL_MHA, "conv")
