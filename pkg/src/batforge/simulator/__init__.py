"""Cycle-level model of the binarized Transformer accelerator."""
from .accel import (ResourceEstimate, SimReport, analytic_latency, analytic_report,
                    ffn_model, mha_model, run_inter_layer_pipeline, simulate_encoder,
                    simulate_layer, simulate_module)
from .config import (CLOCK_HZ, OPTIMAL_FFN, OPTIMAL_MHA, ConfigurationInfeasible,
                     HwConfig)
from .events import Stage, WeightLoad, run_rows
from .resources import AVAILABLE, estimate_resources, within_cap
from .schedule import (two_module_total, inter_layer_schedule, qmm_schedule_aa,
                       qmm_schedule_aw, run_intra_layer_pipeline)

__all__ = [
    "AVAILABLE", "CLOCK_HZ", "ConfigurationInfeasible", "HwConfig", "OPTIMAL_FFN",
    "OPTIMAL_MHA", "ResourceEstimate", "SimReport", "Stage", "WeightLoad",
    "analytic_latency", "analytic_report", "two_module_total", "estimate_resources",
    "ffn_model", "inter_layer_schedule", "mha_model", "qmm_schedule_aa",
    "qmm_schedule_aw", "run_inter_layer_pipeline", "run_intra_layer_pipeline",
    "run_rows", "simulate_encoder", "simulate_layer", "simulate_module", "within_cap",
]
