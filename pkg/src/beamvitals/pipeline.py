"""End-to-end harness: calibrate, preprocess, select, estimate, score.

Evaluation runs the full chain per receive beam for one transmit beam,
scores each beam against the ground-truth sidecar and keeps the beam with
the lowest breathing error as the headline result.  The diagnostic figure
data (variance per subcarrier, variance-energy trace, spectra, wavelet
reconstructions) is collected as plain arrays so the CLI can emit CSV and
render images from the same data.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import beams, calib, prep, vitals
from .capture import BeamPair, CsiCapture
from .config import Config
from .errors import BeamVitalsError, ValidationError
from .synth import GroundTruth


@dataclass
class BeamEval:
    pair: BeamPair
    breath_rmse_bpm: float = math.inf
    heart_rmse_bpm: float = math.inf
    breath_est_hz: list = field(default_factory=list)
    heart_est_hz: list = field(default_factory=list)
    n_targets_est: int = 0
    error: str | None = None

    def to_doc(self) -> dict:
        return {
            "tx": self.pair.tx_index,
            "rx": self.pair.rx_index,
            "breath_rmse_bpm": self.breath_rmse_bpm,
            "heart_rmse_bpm": self.heart_rmse_bpm,
            "breath_est_hz": self.breath_est_hz,
            "heart_est_hz": self.heart_est_hz,
            "n_targets_est": self.n_targets_est,
            "error": self.error,
        }


@dataclass
class EvalReport:
    scenario: str
    per_beam: list
    best_beam: BeamPair | None
    method: str
    runtime_s: float

    def to_json(self, include_runtime: bool = True) -> str:
        doc = {
            "scenario": self.scenario,
            "method": self.method,
            "per_beam": [b.to_doc() for b in self.per_beam],
            "best_beam": None if self.best_beam is None else
            {"tx": self.best_beam.tx_index, "rx": self.best_beam.rx_index},
        }
        if include_runtime:
            doc["runtime_s"] = self.runtime_s
        return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True)


def load_truth(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def truth_to_doc(truth: GroundTruth) -> dict:
    return json.loads(truth.to_json())


def _bands(cfg: Config) -> tuple[vitals.Band, vitals.Band]:
    return (vitals.Band(cfg.breath_lo, cfg.breath_hi, "breath"),
            vitals.Band(cfg.heart_lo, cfg.heart_hi, "heart"))


def calibrate(c: CsiCapture, cfg: Config) -> tuple[CsiCapture, list]:
    return calib.calibrate_capture(
        c,
        trend_window=cfg.calib_trend_window,
        threshold=cfg.calib_threshold,
        min_model_rms=cfg.calib_min_model_rms,
        opts=calib.LmOptions(max_iter=cfg.lm_max_iter, step_tol=cfg.lm_step_tol,
                             obj_tol=cfg.lm_obj_tol),
        rloess_span=cfg.rloess_span if cfg.rloess_enabled else None,
    )


def preprocess(c: CsiCapture, pair: BeamPair, cfg: Config) -> list:
    return prep.preprocess_pair(
        c, pair,
        trend_window=cfg.trend_window,
        trend_threshold=cfg.trend_threshold,
        denoise_window=cfg.denoise_window,
        denoise_threshold=cfg.denoise_threshold,
        factor=cfg.downsample_factor,
    )


def selected_series(c: CsiCapture, pair: BeamPair, cfg: Config) -> list:
    series = preprocess(c, pair, cfg)
    keep = beams.select_subcarriers(series, frac=cfg.variance_fraction)
    return [series[i] for i in keep]


def _select(series, cfg: Config) -> list:
    keep = beams.select_subcarriers(series, frac=cfg.variance_fraction)
    return [series[i] for i in keep]


def _eval_beam_single(series_all, pair, cfg, breath_truth, heart_truth):
    entry = BeamEval(pair=pair)
    try:
        series = _select(series_all, cfg)
        breath_band, heart_band = _bands(cfg)
        b, h = vitals.estimate_single(
            series, breath_band=breath_band, heart_band=heart_band,
            levels=cfg.dwt_levels, wavelet=cfg.dwt_wavelet, ntaps=cfg.fir_taps,
            prominence=cfg.peak_prominence, max_dispersion=cfg.interval_dispersion)
        entry.breath_est_hz = [b.rate_hz]
        entry.heart_est_hz = [h.rate_hz]
        entry.n_targets_est = 1
        entry.breath_rmse_bpm = abs(b.rate_bpm - 60.0 * breath_truth[0])
        entry.heart_rmse_bpm = abs(h.rate_bpm - 60.0 * heart_truth[0])
    except BeamVitalsError as e:
        entry.error = str(e)
    return entry


def _rmse_matched(est_hz: list, truth_hz: list) -> float:
    """RMSE in bpm after matching estimates to truths in ascending order."""
    if not est_hz:
        return math.inf
    est = sorted(est_hz)
    tru = sorted(truth_hz)
    n = min(len(est), len(tru))
    err = [60.0 * (est[i] - tru[i]) for i in range(n)]
    penalty = [60.0 * t for t in tru[n:]]  # unmatched truths count in full
    sq = [e * e for e in err + penalty]
    return math.sqrt(sum(sq) / len(sq))


def _eval_beam_multi(series_all, pair, cfg, breath_truth, heart_truth):
    entry = BeamEval(pair=pair)
    try:
        series = _select(series_all, cfg)
        breath_band, _ = _bands(cfg)
        ests = vitals.estimate_multi(series, breath_band, thr=cfg.peak_power_threshold,
                                     n_fft=cfg.fft_size, seed=cfg.kmeans_seed)
        entry.breath_est_hz = [e.rate_hz for e in ests]
        entry.n_targets_est = len(ests)
        entry.breath_rmse_bpm = _rmse_matched(entry.breath_est_hz, breath_truth)
    except BeamVitalsError as e:
        entry.error = str(e)
    return entry


def evaluate_capture(c: CsiCapture, truth: dict, cfg: Config | None = None,
                     tx_beam: int = 1, mode: str = "single", threads: int = 1,
                     scenario: str = "capture") -> tuple[EvalReport, dict]:
    """Score every RX beam of one TX beam against the ground truth.

    Returns the report plus a dict of plot-ready arrays.  Per-beam failures
    are recorded on their entry without aborting the remaining beams.
    """
    cfg = cfg or Config()
    if mode not in ("single", "multi"):
        raise ValidationError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    breath_truth = list(truth.get("breath_rates", []))
    heart_truth = list(truth.get("heart_rates", []))
    if not breath_truth:
        raise ValidationError("ground truth lists no breath rates")

    cal, _reports = calibrate(c, cfg)
    worker = _eval_beam_single if mode == "single" else _eval_beam_multi
    pairs = [BeamPair(tx_index=tx_beam, rx_index=rx)
             for rx in range(1, c.meta.n_rx_beams + 1)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            series_by_pair = dict(zip(
                [p.rx_index for p in pairs],
                pool.map(lambda p: preprocess(cal, p, cfg), pairs)))
            entries = list(pool.map(
                lambda p: worker(series_by_pair[p.rx_index], p, cfg,
                                 breath_truth, heart_truth), pairs))
    else:
        series_by_pair = {p.rx_index: preprocess(cal, p, cfg) for p in pairs}
        entries = [worker(series_by_pair[p.rx_index], p, cfg, breath_truth, heart_truth)
                   for p in pairs]

    scored = [e for e in entries if e.error is None and math.isfinite(e.breath_rmse_bpm)]
    best = min(scored, key=lambda e: (e.breath_rmse_bpm, e.pair.rx_index)).pair \
        if scored else None
    report = EvalReport(scenario=scenario, per_beam=entries, best_beam=best,
                        method="dwt" if mode == "single" else "fft_kmeans",
                        runtime_s=time.perf_counter() - t0)
    artifacts = collect_artifacts(series_by_pair, cfg, (best or pairs[0]).rx_index)
    return report, artifacts


def collect_artifacts(series_by_pair: dict, cfg: Config, focus_rx: int) -> dict:
    """Plot data mirroring the usual diagnostic figures."""
    breath_band, heart_band = _bands(cfg)
    out: dict = {}
    variances = {}
    for rx, series in series_by_pair.items():
        variances[rx] = np.array([s.variance for s in series])
        if rx == focus_rx:
            phase = np.stack([s.samples for s in series], axis=1)
            fs = series[0].fs
            vm = beams.variance_matrix(phase, fs, window_s=cfg.nve_window_s)
            out["nve_trace"] = beams.nve_trace(vm)
            out["nve_window_s"] = cfg.nve_window_s
            sel = _select(series, cfg)
            pooled = None
            for s in sel:
                f, p = vitals.fft_spectrum(s.samples, fs, n_fft=cfg.fft_size)
                pooled = p * s.variance if pooled is None else pooled + p * s.variance
                out["spectrum_freqs"] = f
            if pooled is not None:
                out["spectrum_power"] = pooled / max(pooled.max(), 1e-300)
            ref = sel[0]
            out["dwt_time"] = np.arange(ref.samples.size) / fs
            out["dwt_breath"] = vitals.band_reconstructions(
                ref.samples, fs, breath_band, cfg.dwt_levels, cfg.dwt_wavelet,
                cfg.fir_taps)
            out["dwt_heart"] = vitals.band_reconstructions(
                ref.samples, fs, heart_band, cfg.dwt_levels, cfg.dwt_wavelet,
                cfg.fir_taps)
    out["variance_by_beam"] = variances
    return out


def compare_methods(c: CsiCapture, truth: dict, cfg: Config | None = None,
                    tx_beam: int = 1) -> list[dict]:
    """DWT vs. spectral-argmax errors per beam for a single-person capture."""
    cfg = cfg or Config()
    breath_truth = truth.get("breath_rates", [])
    if len(breath_truth) != 1:
        raise ValidationError("method comparison expects a single-person capture")
    f_true = breath_truth[0]
    cal, _ = calibrate(c, cfg)
    breath_band, heart_band = _bands(cfg)
    rows = []
    for rx in range(1, c.meta.n_rx_beams + 1):
        pair = BeamPair(tx_index=tx_beam, rx_index=rx)
        row = {"tx": tx_beam, "rx": rx}
        try:
            series = selected_series(cal, pair, cfg)
            b, _h = vitals.estimate_single(
                series, breath_band=breath_band, heart_band=heart_band,
                levels=cfg.dwt_levels, wavelet=cfg.dwt_wavelet, ntaps=cfg.fir_taps,
                prominence=cfg.peak_prominence, max_dispersion=cfg.interval_dispersion)
            fft_est = vitals.estimate_single_fft(series, breath_band, ntaps=cfg.fir_taps)
            row.update({
                "truth_hz": f_true,
                "dwt_hz": b.rate_hz,
                "fft_hz": fft_est.rate_hz,
                "truth_bpm": 60.0 * f_true,
                "dwt_bpm": b.rate_bpm,
                "fft_bpm": fft_est.rate_bpm,
                "dwt_err_bpm": abs(b.rate_bpm - 60.0 * f_true),
                "fft_err_bpm": abs(fft_est.rate_bpm - 60.0 * f_true),
            })
        except BeamVitalsError as e:
            row["error"] = str(e)
        rows.append(row)
    return rows
