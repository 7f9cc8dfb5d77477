"""Command-line front end.

Exit codes: 0 on success, 1 when estimation fails on the data, 2 on
usage, format or I/O problems.  All outputs are deterministic given the
inputs, the config and the seed (runtimes excluded).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import beams as beams_mod
from . import figures, pipeline, vitals
from .calib import PairCalibration
from .capture import BeamPair, read_capture, write_capture
from .config import Config
from .errors import BeamVitalsError, EstimationError, ValidationError
from .synth import generate, scenario_from_json

EXIT_ESTIMATION = 1
EXIT_USAGE = 2


class Ctx:
    def __init__(self, config: Config, seed: int | None, threads: int,
                 output: str | None):
        self.config = config
        self.seed = seed
        self.threads = threads
        self.output = output


def _fail(message: str, code: int = EXIT_USAGE):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str | None) -> Config:
    if path is None:
        return Config()
    try:
        return Config.from_file(path)
    except (OSError, ValidationError) as e:
        _fail(str(e))


def _read_capture(path: str):
    try:
        return read_capture(path)
    except (OSError, BeamVitalsError) as e:
        _fail(str(e))


def _out_path(ctx: Ctx, explicit: str | None, default: str) -> Path:
    return Path(explicit or ctx.output or default)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; defaults reproduce the reference settings.")
@click.option("--seed", type=int, default=None, help="Override RNG seed.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker threads for per-beam evaluation.")
@click.option("--output", type=click.Path(), default=None,
              help="Default output path for subcommands.")
@click.pass_context
def main(ctx, config_path, seed, threads, output):
    """Vital-sign estimation from multi-beam CSI captures."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, kmeans_seed=seed)
    ctx.obj = Ctx(cfg, seed, threads, output)


@main.command()
@click.argument("scenario", type=click.Path())
@click.option("-o", "--output", type=click.Path(), default=None,
              help="Capture file to write (ground truth goes beside it).")
@click.pass_obj
def synth(ctx: Ctx, scenario, output):
    """Render a scenario JSON into a CSIV1 capture plus truth sidecar."""
    try:
        with open(scenario, "r", encoding="utf-8") as f:
            spec = scenario_from_json(f.read())
    except OSError as e:
        _fail(str(e))
    except ValidationError as e:
        _fail(f"invalid scenario: {e}")
    if ctx.seed is not None:
        spec = dataclasses.replace(spec, rng_seed=ctx.seed)
    out = _out_path(ctx, output, Path(scenario).with_suffix(".csiv1").name)
    capture, truth = generate(spec)
    try:
        write_capture(capture, out)
        truth_path = Path(str(out) + ".truth.json")
        truth_path.write_text(truth.to_json(), encoding="utf-8")
    except OSError as e:
        _fail(str(e))
    m = capture.meta
    click.echo(f"wrote {out} ({m.n_symbols}x{m.n_rx_beams}x{m.n_tx_beams}"
               f"x{m.n_subcarriers}) and {truth_path}")


@main.command()
@click.argument("capture", type=click.Path())
@click.option("-o", "--output", type=click.Path(), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Where to write the per-pair fit report JSON.")
@click.pass_obj
def calibrate(ctx: Ctx, capture, output, report_path):
    """Remove frequency-domain phase errors; emits capture + fit report."""
    c = _read_capture(capture)
    out = _out_path(ctx, output, Path(capture).stem + ".cal.csiv1")
    cal, reports = pipeline.calibrate(c, ctx.config)
    try:
        write_capture(cal, out)
        rp = Path(report_path or str(out) + ".report.json")
        rp.write_text(json.dumps([r.to_doc() for r in reports], sort_keys=True,
                                 indent=2), encoding="utf-8")
    except OSError as e:
        _fail(str(e))
    n_fixed = sum(r.flagged_symbols.size for r in reports if isinstance(r, PairCalibration))
    click.echo(f"wrote {out} ({n_fixed} symbol compensations) and {rp}")


@main.command(name="prep")
@click.argument("capture", type=click.Path())
@click.option("--tx", type=int, default=1, show_default=True)
@click.option("--rx", type=int, default=1, show_default=True)
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def prep_cmd(ctx: Ctx, capture, tx, rx, output):
    """Preprocess one beam pair into a (t, subcarrier, phase) CSV."""
    c = _read_capture(capture)
    out = _out_path(ctx, output, Path(capture).stem + f".prep_tx{tx}_rx{rx}.csv")
    try:
        series = pipeline.preprocess(c, BeamPair(tx_index=tx, rx_index=rx), ctx.config)
    except ValidationError as e:
        _fail(str(e))
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "subcarrier", "phase"])
        for s in series:
            for i, val in enumerate(s.samples):
                w.writerow([f"{i / s.fs:.6f}", s.subcarrier, f"{val:.9g}"])
    click.echo(f"wrote {out} ({len(series)} subcarriers @ {series[0].fs:g} Hz)")


@main.command()
@click.argument("capture", type=click.Path())
@click.option("--tx", type=int, default=1, show_default=True)
@click.option("--rx", type=int, default=1, show_default=True)
@click.option("--symbol", type=int, default=0, show_default=True)
@click.option("--figure/--no-figure", default=True, show_default=True)
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def pdp(ctx: Ctx, capture, tx, rx, symbol, figure, output):
    """Power delay profile of one pair/symbol as (delay_m, power_db) CSV."""
    c = _read_capture(capture)
    cfg = ctx.config
    out = _out_path(ctx, output, Path(capture).stem + f".pdp_tx{tx}_rx{rx}.csv")
    try:
        p = beams_mod.pdp_for(c, BeamPair(tx_index=tx, rx_index=rx), symbol,
                              zero_pad=cfg.pdp_zero_pad)
    except (ValidationError, IndexError) as e:
        _fail(str(e))
    delays = np.abs(beams_mod.delay_axis(p))
    order = np.argsort(delays)
    dist = delays[order] * beams_mod.C_LIGHT / 2.0 + cfg.delay_offset_m
    power_db = 10.0 * np.log10(np.maximum(p.bins[order], 1e-300))
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["delay_m", "power_db"])
        for d, pw in zip(dist, power_db):
            w.writerow([f"{d:.6f}", f"{pw:.6f}"])
    if figure:
        figures.save_pdp_figure(out.with_suffix(".png"), dist, power_db)
    click.echo(f"wrote {out}")


@main.command(name="beams")
@click.argument("capture", type=click.Path())
@click.option("--tx", type=int, default=1, show_default=True)
@click.option("-k", "--top-k", type=int, default=None,
              help="How many beams to keep (default: all, ranked).")
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def beams_cmd(ctx: Ctx, capture, tx, top_k, output):
    """Rank receive beams by phase variance energy; JSON report."""
    c = _read_capture(capture)
    cfg = ctx.config
    k = top_k or c.meta.n_rx_beams
    try:
        ranked = beams_mod.select_beams(
            c, tx, k, power_gate_db=cfg.power_gate_db, nve_window_s=cfg.nve_window_s,
            trend_window=cfg.trend_window, trend_threshold=cfg.trend_threshold,
            denoise_window=cfg.denoise_window, denoise_threshold=cfg.denoise_threshold,
            factor=cfg.downsample_factor)
    except ValidationError as e:
        _fail(str(e))
    doc = {"tx": tx, "ranked_rx": ranked}
    out = _out_path(ctx, output, Path(capture).stem + f".beams_tx{tx}.json")
    Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(f"wrote {out}: {ranked}")


@main.command()
@click.argument("capture", type=click.Path())
@click.option("--mode", type=click.Choice(["single", "multi"]), default="single",
              show_default=True)
@click.option("--tx-beam", type=int, default=1, show_default=True)
@click.option("--rx-beams", default="auto", show_default=True,
              help='"auto" or a comma-separated list of 1-based rx ids.')
@click.option("--band", type=click.Choice(["breath", "heart", "both"]),
              default="both", show_default=True, help="Bands for multi mode.")
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def estimate(ctx: Ctx, capture, mode, tx_beam, rx_beams, band, output):
    """Estimate vital rates; JSON result with per-subcarrier contributions."""
    c = _read_capture(capture)
    cfg = ctx.config
    cal, _ = pipeline.calibrate(c, cfg)
    if rx_beams == "auto":
        rx_list = beams_mod.select_beams(
            cal, tx_beam, min(2, c.meta.n_rx_beams), power_gate_db=cfg.power_gate_db,
            nve_window_s=cfg.nve_window_s, trend_window=cfg.trend_window,
            trend_threshold=cfg.trend_threshold, denoise_window=cfg.denoise_window,
            denoise_threshold=cfg.denoise_threshold, factor=cfg.downsample_factor)
    else:
        try:
            rx_list = [int(s) for s in rx_beams.split(",") if s.strip()]
        except ValueError:
            _fail(f"cannot parse rx beam list {rx_beams!r}")
    series = []
    try:
        for rx in rx_list:
            series.extend(pipeline.selected_series(
                cal, BeamPair(tx_index=tx_beam, rx_index=rx), cfg))
    except ValidationError as e:
        _fail(str(e))

    breath_band = vitals.Band(cfg.breath_lo, cfg.breath_hi, "breath")
    heart_band = vitals.Band(cfg.heart_lo, cfg.heart_hi, "heart")
    doc: dict = {"mode": mode, "tx_beam": tx_beam, "rx_beams": rx_list}
    try:
        if mode == "single":
            b, h = vitals.estimate_single(
                series, breath_band=breath_band, heart_band=heart_band,
                levels=cfg.dwt_levels, wavelet=cfg.dwt_wavelet, ntaps=cfg.fir_taps,
                prominence=cfg.peak_prominence, max_dispersion=cfg.interval_dispersion)
            doc["estimates"] = [_estimate_doc(b), _estimate_doc(h)]
        else:
            doc["estimates"] = []
            bands = {"breath": [breath_band], "heart": [heart_band],
                     "both": [breath_band, heart_band]}[band]
            for bd in bands:
                for e in vitals.estimate_multi(series, bd, thr=cfg.peak_power_threshold,
                                               n_fft=cfg.fft_size, seed=cfg.kmeans_seed):
                    doc["estimates"].append(_estimate_doc(e))
    except EstimationError as e:
        _fail(str(e), code=EXIT_ESTIMATION)
    out = _out_path(ctx, output, Path(capture).stem + ".estimate.json")
    Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(f"wrote {out}")
    for e in doc["estimates"]:
        click.echo(f"  {e['kind']}: {e['rate_hz']:.4f} Hz ({e['rate_bpm']:.2f} bpm)"
                   f" [{e['method']}]")


def _estimate_doc(e: vitals.VitalEstimate) -> dict:
    return {"kind": e.kind, "rate_hz": e.rate_hz, "rate_bpm": e.rate_bpm,
            "method": e.method,
            "per_subcarrier": [{"subcarrier": i, "value": v, "weight": w}
                               for i, v, w in e.per_subcarrier]}


@main.command(name="eval")
@click.argument("capture", type=click.Path())
@click.option("--truth", "truth_path", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["single", "multi"]), default="single",
              show_default=True)
@click.option("--tx-beam", type=int, default=1, show_default=True)
@click.option("--figures/--no-figures", "render", default=True, show_default=True)
@click.option("-o", "--output", type=click.Path(), default=None,
              help="Output directory for report, CSV series and figures.")
@click.pass_obj
def eval_cmd(ctx: Ctx, capture, truth_path, mode, tx_beam, render, output):
    """Full pipeline per RX beam, scored against the ground-truth sidecar."""
    c = _read_capture(capture)
    try:
        truth = pipeline.load_truth(truth_path)
    except OSError as e:
        _fail(f"cannot read ground truth: {e}")
    except json.JSONDecodeError as e:
        _fail(f"ground truth is not valid JSON: {e}")
    outdir = Path(output or ctx.output or (Path(capture).stem + ".eval"))
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        report, artifacts = pipeline.evaluate_capture(
            c, truth, ctx.config, tx_beam=tx_beam, mode=mode,
            threads=ctx.threads, scenario=Path(capture).stem)
    except ValidationError as e:
        _fail(str(e))
    (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_artifacts(outdir, artifacts, render=render)
    click.echo(f"wrote {outdir}/report.json")
    for entry in report.per_beam:
        line = f"  tx{entry.pair.tx_index}-rx{entry.pair.rx_index}: "
        if entry.error:
            line += f"error ({entry.error})"
        else:
            line += f"breath {entry.breath_rmse_bpm:.2f} bpm"
            if math.isfinite(entry.heart_rmse_bpm):
                line += f", heart {entry.heart_rmse_bpm:.2f} bpm"
        click.echo(line)
    if report.best_beam is None:
        _fail("no beam produced an estimate", code=EXIT_ESTIMATION)
    click.echo(f"best beam: tx{report.best_beam.tx_index}-rx{report.best_beam.rx_index}")


def write_artifacts(outdir: Path, artifacts: dict, render: bool = True) -> None:
    """Emit plot-data CSVs and (optionally) matching PNG figures."""
    var = artifacts.get("variance_by_beam", {})
    if var:
        with open(outdir / "variance_vs_subcarrier.csv", "w", newline="",
                  encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["subcarrier"] + [f"rx{rx}" for rx in sorted(var)])
            n = len(next(iter(var.values())))
            for i in range(n):
                w.writerow([i] + [f"{var[rx][i]:.9g}" for rx in sorted(var)])
        if render:
            figures.save_variance_figure(outdir / "variance_vs_subcarrier.png", var)
    if "nve_trace" in artifacts:
        trace = artifacts["nve_trace"]
        win = artifacts["nve_window_s"]
        with open(outdir / "nve_trace.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["t", "nve"])
            for i, v in enumerate(trace):
                w.writerow([f"{i * win:.3f}", f"{v:.9g}"])
        if render:
            figures.save_nve_figure(outdir / "nve_trace.png", trace, win)
    if "spectrum_power" in artifacts:
        with open(outdir / "spectrum.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["freq_hz", "power"])
            for fq, pw in zip(artifacts["spectrum_freqs"], artifacts["spectrum_power"]):
                w.writerow([f"{fq:.6f}", f"{pw:.9g}"])
        if render:
            figures.save_spectrum_figure(outdir / "spectrum.png",
                                         artifacts["spectrum_freqs"],
                                         artifacts["spectrum_power"])
    if "dwt_breath" in artifacts:
        with open(outdir / "dwt_reconstruction.csv", "w", newline="",
                  encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["t", "breath", "heart"])
            for t, b, h in zip(artifacts["dwt_time"], artifacts["dwt_breath"],
                               artifacts["dwt_heart"]):
                w.writerow([f"{t:.4f}", f"{b:.9g}", f"{h:.9g}"])
        if render:
            figures.save_dwt_figure(outdir / "dwt_reconstruction.png",
                                    artifacts["dwt_time"], artifacts["dwt_breath"],
                                    artifacts["dwt_heart"])


@main.command(name="compare-methods")
@click.argument("capture", type=click.Path())
@click.option("--truth", "truth_path", type=click.Path(), required=True)
@click.option("--tx-beam", type=int, default=1, show_default=True)
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def compare_methods(ctx: Ctx, capture, truth_path, tx_beam, output):
    """Side-by-side DWT vs. FFT-argmax breathing errors per beam."""
    c = _read_capture(capture)
    try:
        truth = pipeline.load_truth(truth_path)
    except OSError as e:
        _fail(f"cannot read ground truth: {e}")
    except json.JSONDecodeError as e:
        _fail(f"ground truth is not valid JSON: {e}")
    try:
        rows = pipeline.compare_methods(c, truth, ctx.config, tx_beam=tx_beam)
    except ValidationError as e:
        _fail(str(e))
    header = f"{'pair':>10} {'truth_hz':>9} {'dwt_hz':>8} {'fft_hz':>8} " \
             f"{'truth_bpm':>10} {'dwt_bpm':>8} {'fft_bpm':>8} " \
             f"{'dwt_err':>8} {'fft_err':>8}"
    click.echo(header)
    for r in rows:
        tag = f"tx{r['tx']}-rx{r['rx']}"
        if "error" in r:
            click.echo(f"{tag:>10} error: {r['error']}")
            continue
        click.echo(f"{tag:>10} {r['truth_hz']:9.4f} {r['dwt_hz']:8.4f} "
                   f"{r['fft_hz']:8.4f} {r['truth_bpm']:10.2f} {r['dwt_bpm']:8.2f} "
                   f"{r['fft_bpm']:8.2f} {r['dwt_err_bpm']:8.2f} {r['fft_err_bpm']:8.2f}")
    if output or ctx.output:
        out = Path(output or ctx.output)
        out.write_text(json.dumps(rows, indent=2, sort_keys=True), encoding="utf-8")
        click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
