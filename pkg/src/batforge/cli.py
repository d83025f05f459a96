"""Command-line entry point: split | infer | simulate | dse | report.

Exit codes: 0 success, 1 runtime or format error, 2 usage error or no
feasible design point.  ``BATFORGE_LOG`` sets the log level (DEBUG, INFO,
WARNING, ...; default WARNING).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import sys

import click
import numpy as np

from . import config as cfgmod
from . import dse
from . import formats
from . import refmodel as rm
from .core import NumericFault, make_rng
from .quantize import DegenerateWeightError
from .simulator import (
    ConfigurationInfeasible, run_inter_layer_pipeline, simulate_encoder,
)
from .wtws import (
    DegenerateTernaryError, SplitDegenerateError, split_coefficients, split_residual,
    ternarize, tws_split,
)

log = logging.getLogger("batforge")

SPLIT_RESIDUAL_LIMIT = 1e-12

REPORT_COLUMNS = (
    "model_kind", "layers", "d_hid", "d_inter", "num_head", "b_act", "seq_len", "batch",
    "mha_p_dpu", "mha_p_quan", "mha_p_vu", "mha_p_ln",
    "ffn_p_dpu", "ffn_p_quan", "ffn_p_vu", "ffn_p_ln",
    "t_mha", "t_ffn", "total_cycles", "formula_cycles", "latency_ms", "gops", "macs",
    "dram_bytes", "lut", "ff", "bram", "dsp", "analytic_cycles", "analytic_gap",
)


def _setup_logging() -> None:
    level = os.environ.get("BATFORGE_LOG", "WARNING").strip().upper()
    value = int(level) if level.isdigit() else getattr(logging, level, None)
    if not isinstance(value, int):
        value = logging.WARNING
    logging.basicConfig(level=value, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(msg: str, code: int = 1):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


class _Ctx:
    def __init__(self, run: cfgmod.RunConfig, out: str | None):
        self.run = run
        self.out = out

    def out_dir(self) -> str:
        d = self.out or self.run.paths.out_dir or "."
        os.makedirs(d, exist_ok=True)
        return d


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML or JSON run configuration.")
@click.option("--seed", type=click.IntRange(0, (1 << 64) - 1), default=None,
              help="Override the configuration seed (u64).")
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Worker processes for dse (default: logical cores).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for report artifacts.")
@click.version_option(package_name="artifact")
@click.pass_context
def main(ctx, config_path, seed, workers, out_dir):
    """Binarized Transformer accelerator toolkit."""
    _setup_logging()
    try:
        run = cfgmod.load_config(config_path)
    except (cfgmod.ConfigError, OSError) as e:
        _fail(f"bad configuration: {e}")
    if seed is not None:
        run.seed = seed
    if workers is not None:
        run.workers = workers
    ctx.obj = _Ctx(run, out_dir)


# -- split --------------------------------------------------------------------

@main.command()
@click.argument("checkpoint", required=False, type=click.Path(dir_okay=False))
@click.argument("output", required=False, type=click.Path(dir_okay=False))
@click.pass_obj
def split(obj: _Ctx, checkpoint, output):
    """Split a ternary checkpoint into a binarized weight file."""
    checkpoint = checkpoint or obj.run.paths.checkpoint
    output = output or obj.run.paths.weights
    if not checkpoint or not output:
        raise click.UsageError("split needs a ternary checkpoint and an output path")
    try:
        cfg, latents, lns = formats.load_checkpoint(checkpoint)
    except (formats.FormatError, OSError) as e:
        _fail(f"format error: {e}")
    failures = []
    layers = []
    worst = 0.0
    for i, (lat, ln) in enumerate(zip(latents, lns)):
        lin = {}
        for name in rm.LINEARS:
            try:
                tern = ternarize(lat[name])
                a, b = split_coefficients(tern)
                if b == 0.0 and not (tern.ternary == 0).any():
                    log.warning("layer %d %s: no zero entries, offset b set to 0", i, name)
                    click.echo(f"warning: layer {i} {name}: |J|+|K| = 0, using b = 0", err=True)
                s = tws_split(tern)
            except (DegenerateTernaryError, SplitDegenerateError, DegenerateWeightError, ValueError) as e:
                failures.append(f"layer {i} {name}: {e}")
                continue
            res = split_residual(tern, s)
            worst = max(worst, res)
            click.echo(f"layer {i} {name}: a={a:.6f} residual={res:.3e}")
            lin[name] = s
        if len(lin) != len(rm.LINEARS):
            continue
        d = cfg.d_hid
        if ln is None:
            ln = (np.ones(d, np.float16), np.zeros(d, np.float16),
                  np.ones(d, np.float16), np.zeros(d, np.float16))
        layers.append(rm.LayerWeights(lin, {s: None for s in rm.SITES}, *ln))
    if failures:
        for f in failures:
            click.echo(f"degenerate split: {f}", err=True)
        _fail(f"{len(failures)} layer(s) could not be split")
    click.echo(f"identity residual (max): {worst:.3e}")
    if worst >= SPLIT_RESIDUAL_LIMIT:
        _fail(f"identity residual {worst:.3e} exceeds {SPLIT_RESIDUAL_LIMIT:g}")
    weights = rm.EncoderWeights(layers)
    # quantizer scales are calibrated on one seeded input, as at deployment
    calib = make_rng(obj.run.seed).standard_normal((cfg.seq_len, cfg.d_hid)).astype(np.float16)
    try:
        x = calib
        for lw in weights.layers:
            x = rm.layer_forward(x, lw, cfg, calibrate=True)
        formats.save_weights(output, cfg, weights)
    except (NumericFault, ValueError) as e:
        _fail(str(e))
    click.echo(f"wrote {output}")


# -- infer ---------------------------------------------------------------------

@main.command()
@click.argument("weights", required=False, type=click.Path(dir_okay=False))
@click.argument("inputs", required=False, type=click.Path(dir_okay=False))
@click.argument("output", required=False, type=click.Path(dir_okay=False))
@click.option("--check-sim", is_flag=True, help="Also run the simulator and compare bits.")
@click.pass_obj
def infer(obj: _Ctx, weights, inputs, output, check_sim):
    """Run the reference model on an input tensor or dataset."""
    p = obj.run.paths
    weights, inputs, output = weights or p.weights, inputs or p.input, output or p.output
    if not weights or not inputs or not output:
        raise click.UsageError("infer needs a weight file, an input file and an output path")
    try:
        cfg, w, head = formats.load_weights(weights)
    except (formats.FormatError, OSError) as e:
        _fail(f"format error: {e}")
    try:
        x, y = formats.load_inputs(inputs)
    except formats.FormatError as e:
        if "empty" in str(e):
            raise click.UsageError(str(e))
        _fail(f"format error: {e}")
    except OSError as e:
        _fail(str(e))
    if x.shape[1:] != (cfg.seq_len, cfg.d_hid):
        _fail(f"shape mismatch: input rows are {x.shape[1:]}, model expects "
              f"{(cfg.seq_len, cfg.d_hid)}")
    outs = []
    try:
        for xi in x:
            outs.append(rm.encoder_forward(xi, w, cfg))
    except NumericFault as e:
        _fail(f"numeric fault: {e}")
    out = np.stack(outs)
    formats.save_tensor(output, out[0] if len(out) == 1 and y is None else out)
    click.echo(f"wrote {output} ({len(out)} sample(s))")
    if y is not None:
        if head is None:
            click.echo("labels given but the weight file has no classifier head; accuracy skipped")
        else:
            data = rm.Dataset(x, y)
            hits = sum(int(head.predict(o) == t) for o, t in zip(out, data.y))
            click.echo(f"accuracy: {hits / len(data):.4f} ({hits}/{len(data)})")
    if check_sim:
        same = True
        try:
            for xi, oi in zip(x, out):
                so, _ = simulate_encoder(cfg, w, (obj.run.mha.build(), obj.run.ffn.build()), xi)
                same &= so.tobytes() == oi.tobytes()
        except ConfigurationInfeasible as e:
            _fail(f"simulator cannot run this model: {e}")
        click.echo(f"simulator matches: {'true' if same else 'false'}")
        if not same:
            sys.exit(1)


# -- simulate --------------------------------------------------------------------

@main.command()
@click.option("--analytic", is_flag=True, help="Add the closed-form prediction and its gap.")
@click.pass_obj
def simulate(obj: _Ctx, analytic):
    """Event-simulate the configured model on the configured hardware."""
    run = obj.run
    cfg, weights = run.model.build(), None
    if run.paths.weights:
        try:
            cfg, weights, _ = formats.load_weights(run.paths.weights)
        except (formats.FormatError, OSError) as e:
            _fail(f"format error: {e}")
    hm, hf = run.mha.build(), run.ffn.build()
    try:
        rep = run_inter_layer_pipeline(cfg, weights, (hm, hf), batch=run.simulate.batch,
                                       analytic=analytic)
    except ConfigurationInfeasible as e:
        _fail(f"infeasible hardware configuration: {e}")
    d = rep.as_dict()
    d["model"] = dataclasses_dict(cfg)
    d["hardware"] = {"mha": hm.to_dict(), "ffn": hf.to_dict()}
    out = obj.out_dir()
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(d, f, indent=1, sort_keys=True)
        f.write("\n")
    row = _report_row(cfg, hm, hf, rep)
    with open(os.path.join(out, "report.csv"), "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        wr.writerow([row[c] for c in REPORT_COLUMNS])
    click.echo(f"T_MHA = {rep.t_mha} cycles, T_FFN = {rep.t_ffn} cycles")
    click.echo(f"total = {rep.total_cycles} cycles ({rep.latency_ms:.4f} ms), "
               f"{rep.gops:.2f} GOPS")
    check = "exact" if rep.total_cycles == rep.formula_cycles else f"mismatch ({rep.formula_cycles})"
    click.echo(f"two-module pipeline formula check: {check}")
    if analytic:
        gap = d["analytic_gap"]
        click.echo(f"{'event':>14} {'analytic':>14} {'gap':>8}")
        click.echo(f"{rep.total_cycles:>14} {rep.analytic_cycles:>14} {100 * gap:>7.3f}%")
    click.echo(f"wrote {os.path.join(out, 'report.json')} and report.csv")


def dataclasses_dict(cfg: rm.ModelConfig) -> dict:
    return {k: getattr(cfg, k) for k in ("layers", "d_hid", "d_inter", "num_head", "b_act",
                                         "model_kind", "seq_len")}


def _report_row(cfg, hm, hf, rep) -> dict:
    r = rep.resources
    gap = ("" if rep.analytic_cycles is None
           else f"{abs(rep.analytic_cycles - rep.total_cycles) / rep.total_cycles:.6f}")
    row = dataclasses_dict(cfg)
    row["batch"] = rep.batch
    for tag, h in (("mha", hm), ("ffn", hf)):
        for k in ("p_dpu", "p_quan", "p_vu", "p_ln"):
            row[f"{tag}_{k}"] = getattr(h, k)
    row.update(t_mha=rep.t_mha, t_ffn=rep.t_ffn, total_cycles=rep.total_cycles,
               formula_cycles=rep.formula_cycles, latency_ms=f"{rep.latency_ms:.6f}",
               gops=f"{rep.gops:.4f}", macs=rep.macs, dram_bytes=rep.dram_bytes,
               lut=f"{r.lut:.1f}", ff=f"{r.ff:.1f}", bram=f"{r.bram:.1f}", dsp=f"{r.dsp:.1f}",
               analytic_cycles="" if rep.analytic_cycles is None else rep.analytic_cycles,
               analytic_gap=gap)
    return row


# -- dse --------------------------------------------------------------------------

def build_dse(run: cfgmod.RunConfig):
    """(DesignSpace, Providers, acc_floor) from the dse section."""
    d = run.dse
    space = dse.DesignSpace(
        model_kinds=tuple(d.model_kinds), d_hid=tuple(d.d_hid), d_inter=tuple(d.d_inter),
        b_act={k: tuple(v) for k, v in d.b_act.items()},
        p_dpu=tuple(d.p_dpu), p_quan=tuple(d.p_quan), p_vu=tuple(d.p_vu), p_ln=tuple(d.p_ln))
    table = None
    if d.accuracy == "table":
        table = {(e["model_kind"], e["d_hid"], e["d_inter"], e["b_act"]): e["accuracy"]
                 for e in d.accuracy_table}
    acc = dse.AccuracyProvider(mode=d.accuracy, task=d.task, table=table)
    rob_table = None
    if d.robustness_table:
        with open(d.robustness_table) as f:
            rob_table = json.load(f)
    rob = dse.RobustnessProvider(mode=d.robustness, table=rob_table, seed=run.seed)
    prov = dse.Providers(acc, rob, layers=d.layers, seq_len=d.seq_len, batch=d.batch)
    return space, prov, d.acc_floor


@main.command(name="dse")
@click.pass_obj
def dse_cmd(obj: _Ctx):
    """Sweep the design space, Pareto-filter and select a design."""
    run = obj.run
    try:
        space, prov, floor = build_dse(run)
    except (ValueError, KeyError, OSError) as e:
        _fail(f"bad dse section: {e}")
    workers = run.workers or os.cpu_count() or 1
    click.echo(f"sweeping {space.size()} design points on {workers} worker(s)")
    result = dse.sweep(space, prov, workers=workers, acc_floor=floor)
    paths = dse.write_artifacts(result, obj.out_dir(), points=run.dse.write_points)
    for k in sorted(paths):
        click.echo(f"wrote {paths[k]}")
    click.echo(f"pareto points: {len(result.pareto)}; accuracy floor {result.acc_floor:.4f}; "
               f"robustness upper quartile {result.q3:.4f}")
    if result.selection is None:
        click.echo(f"no feasible design point: {result.error}", err=True)
        for line in (result.error.diagnostics if result.error else []):
            click.echo(f"  {line}", err=True)
        sys.exit(2)
    s = result.selection
    click.echo(f"selected {s.algo.label()} MHA <{s.hw_mha.p_dpu}, {s.hw_mha.p_quan}, "
               f"{s.hw_mha.p_vu}, {s.hw_mha.p_ln}> FFN <{s.hw_ffn.p_dpu}, {s.hw_ffn.p_quan}, "
               f"{s.hw_ffn.p_vu}, {s.hw_ffn.p_ln}> latency {s.latency_ms:.4f} ms")


# -- report -----------------------------------------------------------------------

@main.command()
@click.argument("directory", required=False, type=click.Path(file_okay=False, exists=True))
@click.pass_obj
def report(obj: _Ctx, directory):
    """Summarize the artifacts in a directory as Markdown (report.md)."""
    directory = directory or obj.out or obj.run.paths.out_dir
    if not directory:
        raise click.UsageError("report needs a directory (argument or --out)")
    lines = []
    sim = os.path.join(directory, "report.json")
    if os.path.exists(sim):
        with open(sim) as f:
            r = json.load(f)
        lines += ["## Simulation", "", "| metric | value |", "|---|---|"]
        for k in ("t_mha", "t_ffn", "total_cycles", "formula_cycles", "latency_ms", "gops",
                  "analytic_cycles", "analytic_gap"):
            if k in r:
                lines.append(f"| {k} | {_cell(r[k])} |")
        if "resources" in r:
            res = r["resources"]
            lines.append("| resources (LUT/FF/BRAM/DSP) | "
                         + " / ".join(f"{res[k]:.0f}" for k in ("lut", "ff", "bram", "dsp")) + " |")
        lines.append("")
    sel_path = os.path.join(directory, "selection.json")
    if os.path.exists(sel_path):
        with open(sel_path) as f:
            sel = json.load(f)
        lines += ["## Design space exploration", "",
                  f"- design points: {sel['design_points']}",
                  f"- Pareto points: {sel['pareto_size']}",
                  f"- accuracy floor: {sel['accuracy_floor']:.4f}",
                  f"- robustness upper quartile: {_cell(sel['robustness_upper_quartile'])}"]
        s = sel.get("selected")
        if s:
            a = s["algorithm"]
            lines.append(f"- selected: <{a['model_kind']}, {a['d_hid']}, {a['d_inter']}, "
                         f"{a['b_act']}>, MHA {_hw(s['mha'])}, FFN {_hw(s['ffn'])}, "
                         f"{s['latency_ms']:.4f} ms, accuracy {s['accuracy']:.4f}")
        else:
            lines.append(f"- no selection: {sel.get('error')}")
        lines.append("")
    par_path = os.path.join(directory, "pareto.json")
    if os.path.exists(par_path):
        with open(par_path) as f:
            par = json.load(f)
        lines += ["## Pareto front", "",
                  "| algorithm | MHA | FFN | accuracy | robustness | latency (ms) |",
                  "|---|---|---|---|---|---|"]
        for p in par["points"]:
            a = p["algorithm"]
            lines.append(f"| <{a['model_kind']}, {a['d_hid']}, {a['d_inter']}, {a['b_act']}> | "
                         f"{_hw(p['mha'])} | {_hw(p['ffn'])} | {p['accuracy']:.4f} | "
                         f"{_cell(p['robustness'])} | {p['latency_ms']:.4f} |")
        lines.append("")
    if not lines:
        _fail(f"no report.json, selection.json or pareto.json in {directory}")
    text = "\n".join(lines)
    with open(os.path.join(directory, "report.md"), "w") as f:
        f.write(text)
    click.echo(text, nl=False)


def _hw(h: dict) -> str:
    return f"<{h['p_dpu']}, {h['p_quan']}, {h['p_vu']}, {h['p_ln']}>"


def _cell(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6g}"
    return str(v)


if __name__ == "__main__":
    main()
