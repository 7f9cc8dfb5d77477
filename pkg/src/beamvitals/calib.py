"""Frequency-domain phase-error estimation and compensation.

The measured phase of an affected symbol deviates from the geometric
expectation by an arctan-shaped IQ term, a linear slope and a constant
offset.  Fitting works on the residual

    residual(n) = expected_phase(n) - measured_phase(n)

so that the fitted model composes with :func:`compensate` (a multiply by
exp(+j*model)) into the exact inverse of the distortion.  The expected
phase per symbol comes from a robust trend over the undistorted majority
of symbols: per-symbol straight-line fits across subcarriers, median
filtered and interpolated over the flagged gaps.

Detection presumes the errors are sporadic; a capture whose every symbol
carries the same slope/offset distortion is indistinguishable from plain
geometry and only its nonlinear part can be corrected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .capture import BeamPair, CsiCapture, slice_pair
from .errors import ValidationError
from .synth import ImpairmentSpec


@dataclass(frozen=True)
class PhaseErrorParams:
    """Parameter vector of the subcarrier phase-error model."""

    eps_g: float = 1.0
    eps_p: float = 0.0
    xi_t: float = 0.0
    sfo_sto_slope: float = 0.0
    cpo: float = 0.0

    def __post_init__(self):
        vals = (self.eps_g, self.eps_p, self.xi_t, self.sfo_sto_slope, self.cpo)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("phase error parameters must be finite")
        if self.eps_g <= 0:
            raise ValidationError("eps_g must be positive")

    def as_vector(self) -> np.ndarray:
        return np.array([self.eps_g, self.eps_p, self.xi_t,
                         self.sfo_sto_slope, self.cpo])

    @staticmethod
    def from_vector(v) -> "PhaseErrorParams":
        return PhaseErrorParams(eps_g=float(v[0]), eps_p=float(v[1]), xi_t=float(v[2]),
                                sfo_sto_slope=float(v[3]), cpo=float(v[4]))


@dataclass(frozen=True)
class FitReport:
    params: PhaseErrorParams
    residual_rms: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LmOptions:
    max_iter: int = 200
    step_tol: float = 1e-10
    obj_tol: float = 1e-12
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1


@dataclass
class PairCalibration:
    """Per-pair outcome of :func:`calibrate_capture`."""

    pair: BeamPair
    fit: FitReport | None
    flagged_symbols: np.ndarray
    applied: bool
    pre_rms: float
    post_rms: float

    def to_doc(self) -> dict:
        doc = {
            "tx": self.pair.tx_index,
            "rx": self.pair.rx_index,
            "applied": self.applied,
            "n_flagged": int(self.flagged_symbols.size),
            "pre_rms": self.pre_rms,
            "post_rms": self.post_rms,
        }
        if self.fit is not None:
            doc["fit"] = {
                "params": dataclasses.asdict(self.fit.params),
                "residual_rms": self.fit.residual_rms,
                "iterations": self.fit.iterations,
                "converged": self.fit.converged,
            }
        return doc


def iq_phase_shift(params: PhaseErrorParams, n_f) -> np.ndarray:
    """IQ-imbalance phase at 1-based model index ``n_f``.

    arctan(eps_g * sin(n*xi_t + eps_p) / cos(n*xi_t)); at the cos zeros the
    signed limit +-pi/2 is used.
    """
    n = np.asarray(n_f, dtype=np.float64)
    x = n * params.xi_t
    num = params.eps_g * np.sin(x + params.eps_p)
    den = np.cos(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.abs(den) < 1e-12,
                       np.sign(num) * np.pi / 2.0,
                       np.arctan(num / den))
    return out


def model_residual(params: PhaseErrorParams, n_f) -> np.ndarray:
    """Full model: IQ term + linear slope + constant offset."""
    n = np.asarray(n_f, dtype=np.float64)
    return iq_phase_shift(params, n) + n * params.sfo_sto_slope + params.cpo


def params_from_impairments(imp: ImpairmentSpec) -> PhaseErrorParams:
    """Parameters whose compensation exactly undoes a generator impairment.

    The generator adds phase to the measurement while the model describes
    what compensation must add back, so the slope, offset and IQ phase/time
    terms flip sign (the arctan model family is closed under negation).
    """
    return PhaseErrorParams(
        eps_g=imp.iq_gain_mismatch,
        eps_p=-imp.iq_phase_mismatch,
        xi_t=-imp.iq_time_offset,
        sfo_sto_slope=-imp.sfo_slope,
        cpo=-imp.cpo,
    )


def fit_phase_errors(residual_phase, init: PhaseErrorParams | None = None,
                     opts: LmOptions | None = None) -> FitReport:
    """Least-squares fit of the phase-error model to a subcarrier residual.

    ``residual_phase`` is expected-minus-measured phase, unwrapped along
    the subcarriers.  Levenberg-Marquardt with a central-difference
    Jacobian; damping grows x10 on a rejected step and shrinks x0.1 on an
    accepted one.  Stops when the step norm drops below ``step_tol``, the
    objective decrease drops below ``obj_tol``, or ``max_iter`` is reached;
    non-convergence returns the best parameters found with
    ``converged=False``.

    Without an explicit ``init`` the solver multi-starts over a small grid
    of IQ parameters: the model's Jacobian degenerates exactly at the
    mismatch-free point (the IQ columns collapse onto the slope and offset
    columns), so a single start from zero stalls on curved residuals.
    """
    y = np.asarray(residual_phase, dtype=np.float64)
    if y.ndim != 1 or y.size < 5:
        raise ValidationError("residual must be a 1-D series of at least 5 subcarriers")
    if not np.all(np.isfinite(y)):
        raise ValidationError("residual contains non-finite values")
    opts = opts or LmOptions()
    n = np.arange(1, y.size + 1, dtype=np.float64)

    if init is not None:
        starts = [init.as_vector()]
    else:
        slope, intercept = np.polyfit(n, y, 1)
        xi_scale = 1.0 / max(y.size, 10)
        starts = [np.array([1.0, 0.0, 0.0, slope, intercept])]
        for xi in (0.3, -0.3, 1.0, -1.0, 1.5, -1.5):
            starts.append(np.array([1.02, 0.01, xi * xi_scale, slope, intercept]))

    best = None
    for p0 in starts:
        report = _lm_single(y, n, p0, opts)
        if best is None or report[1] < best[1]:
            best = report
        if best[1] < 1e-14 * y.size:  # already at numerical zero
            break
    # polish restarts: a fresh damping schedule finishes fits the scan left
    # crawling along the model's ill-conditioned valley
    for _ in range(10):
        polished = _lm_single(y, n, best[0], opts)
        material = polished[1] < 0.99 * best[1]
        if polished[1] < best[1]:
            best = (polished[0], polished[1], best[2] + polished[2], polished[3])
        if not material:
            break
    p, obj, iterations, converged = best
    rms = math.sqrt(obj / y.size)
    return FitReport(params=PhaseErrorParams.from_vector(p), residual_rms=rms,
                     iterations=iterations, converged=converged)


def _lm_single(y, n, p0, opts: LmOptions):
    def objective(vec):
        r = y - _model_vec(vec, n)
        return float(r @ r)

    p = p0.copy()
    lam = opts.damping_init
    obj = objective(p)
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        jac = _numeric_jacobian(p, n)
        r = y - _model_vec(p, n)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        accepted = False
        for _ in range(50):  # inner damping escalation
            a = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                step = np.linalg.solve(a, jtr)
            except np.linalg.LinAlgError:
                lam *= opts.damping_up
                continue
            trial = p + step
            if trial[0] <= 0:  # gain must stay positive
                lam *= opts.damping_up
                continue
            trial_obj = objective(trial)
            if trial_obj <= obj:
                accepted = True
                break
            lam *= opts.damping_up
        if not accepted:
            break
        decrease = obj - trial_obj
        step_norm = float(np.linalg.norm(step))
        p, obj = trial, trial_obj
        lam = max(lam * opts.damping_down, 1e-15)
        if step_norm < opts.step_tol or decrease < opts.obj_tol:
            converged = True
            break
    return p, obj, iterations, converged


def _model_vec(vec, n):
    """Model curve for a parameter vector; batched over rows of a 2-D vec."""
    v = np.atleast_2d(np.asarray(vec, dtype=np.float64))
    x = v[:, 2:3] * n[None, :]
    num = v[:, 0:1] * np.sin(x + v[:, 1:2])
    den = np.cos(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        iq = np.where(np.abs(den) < 1e-12, np.sign(num) * np.pi / 2.0,
                      np.arctan(num / den))
    out = iq + v[:, 3:4] * n[None, :] + v[:, 4:5]
    return out[0] if np.ndim(vec) == 1 else out


def _numeric_jacobian(p, n):
    h = 1e-7 * np.maximum(1.0, np.abs(p))
    probes = np.repeat(p[None, :], 2 * p.size, axis=0)
    for i in range(p.size):
        probes[2 * i, i] += h[i]
        probes[2 * i + 1, i] -= h[i]
    curves = _model_vec(probes, n)
    return ((curves[0::2] - curves[1::2]) / (2.0 * h[:, None])).T


def _phasors(params, n_subcarriers) -> np.ndarray:
    n = np.arange(1, n_subcarriers + 1, dtype=np.float64)
    return np.exp(1j * model_residual(params, n))


def compensate(c: CsiCapture, params, symbols=None) -> CsiCapture:
    """Rotate each entry by exp(+j*model); magnitudes are untouched.

    ``params`` is a single :class:`PhaseErrorParams` or a mapping from
    symbol index to parameters; ``symbols`` optionally restricts a single
    parameter set to those symbol indices.
    """
    h = np.array(c.h)
    if isinstance(params, PhaseErrorParams):
        phasor = _phasors(params, c.meta.n_subcarriers)
        if symbols is None:
            h *= phasor[None, None, None, :]
        else:
            h[np.asarray(symbols, dtype=int)] *= phasor[None, None, None, :]
    else:
        for sym, p in params.items():
            h[int(sym)] *= _phasors(p, c.meta.n_subcarriers)[None, None, :]
    return CsiCapture(c.meta, h)


def apply_phase_errors(c: CsiCapture, params, symbols=None) -> CsiCapture:
    """Inverse of :func:`compensate`: rotate by exp(-j*model)."""
    if isinstance(params, PhaseErrorParams):
        neg = dict(zip(("eps_g", "eps_p", "xi_t", "sfo_sto_slope", "cpo"),
                       (params.eps_g, -params.eps_p, -params.xi_t,
                        -params.sfo_sto_slope, -params.cpo)))
        return compensate(c, PhaseErrorParams(**neg), symbols=symbols)
    flipped = {s: PhaseErrorParams(p.eps_g, -p.eps_p, -p.xi_t,
                                   -p.sfo_sto_slope, -p.cpo)
               for s, p in params.items()}
    return compensate(c, flipped)


# --- per-pair residual extraction and orchestration ------------------------

def _rolling_median(x: np.ndarray, window: int) -> np.ndarray:
    window = max(3, min(window, x.shape[0]))
    if window % 2 == 0:
        window -= 1
    return (pd.DataFrame(x).rolling(window, center=True, min_periods=1)
            .median().to_numpy().reshape(x.shape))


@dataclass
class PairResiduals:
    """Diagnostics for one beam pair: unwrapped phase vs. trend deviations."""

    unwrapped: np.ndarray       # [n_symbols x n_subcarriers]
    trend: np.ndarray           # same shape, interpolated geometric expectation
    deviation_rms: np.ndarray   # per-symbol RMS against the trend
    candidates: np.ndarray      # bool per symbol
    threshold: float
    intercepts: np.ndarray      # per-symbol line fits, temporally rebased
    slopes: np.ndarray


def _interp_trend(pr: "PairResiduals", clean: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Expected phase per symbol, interpolating line fits over clean symbols."""
    idx = np.arange(pr.intercepts.size)
    if clean.sum() >= 2:
        a = np.interp(idx, idx[clean], pr.intercepts[clean])
        b = np.interp(idx, idx[clean], pr.slopes[clean])
    else:
        a = _rolling_median(pr.intercepts, 31)
        b = _rolling_median(pr.slopes, 31)
    return a[:, None] + b[:, None] * grid[None, :]


def pair_residuals(c: CsiCapture, pair: BeamPair, trend_window: int = 31,
                   threshold: float = 0.02) -> PairResiduals:
    """Flag distorted symbols of one pair and build their expected phase.

    Per-symbol straight lines across subcarriers form (intercept, slope)
    time series; affected symbols are outliers against the median-filtered
    series, and the trend interpolates over them using clean symbols only.
    """
    u = np.unwrap(np.angle(slice_pair(c, pair)), axis=1)
    n_sym, n_f = u.shape
    n = np.arange(n_f, dtype=np.float64)
    design = np.stack([np.ones(n_f), n], axis=1)
    coef, *_ = np.linalg.lstsq(design, u.T, rcond=None)
    intercepts, slopes = coef[0], coef[1]

    # each symbol unwraps from its own wrapped start; rebase all symbols onto
    # one temporal 2*pi branch so deviations against the trend are real
    unwrapped_intercepts = np.unwrap(intercepts)
    offsets = unwrapped_intercepts - intercepts
    u = u + offsets[:, None]
    intercepts = unwrapped_intercepts
    med_a = _rolling_median(intercepts, trend_window)
    med_b = _rolling_median(slopes, trend_window)
    line0 = med_a[:, None] + med_b[:, None] * n[None, :]
    dev0 = np.sqrt(np.mean((u - line0) ** 2, axis=1))

    thr = max(threshold, 2.5 * float(np.median(dev0)))
    candidates = dev0 > thr

    clean = ~candidates
    idx = np.arange(n_sym)
    if clean.sum() >= 2:
        trend_a = np.interp(idx, idx[clean], intercepts[clean])
        trend_b = np.interp(idx, idx[clean], slopes[clean])
    else:  # nothing trustworthy: fall back to the median-filtered series
        trend_a, trend_b = med_a, med_b
    trend = trend_a[:, None] + trend_b[:, None] * n[None, :]
    dev = np.sqrt(np.mean((u - trend) ** 2, axis=1))
    return PairResiduals(unwrapped=u, trend=trend, deviation_rms=dev,
                         candidates=dev > thr, threshold=thr,
                         intercepts=intercepts, slopes=slopes)


def extract_residual(c: CsiCapture, pair: BeamPair, symbol: int,
                     trend_window: int = 31, threshold: float = 0.02) -> np.ndarray:
    """Expected-minus-measured subcarrier phase of one symbol."""
    pr = pair_residuals(c, pair, trend_window, threshold)
    return pr.trend[symbol] - pr.unwrapped[symbol]


def _assignment_from_edges(n_sym: int, edges: np.ndarray, deltas: np.ndarray,
                           start: bool) -> np.ndarray:
    tau = np.empty(n_sym, dtype=bool)
    cur = start
    prev = 0
    for pos, d in zip(edges, deltas):
        tau[prev:pos + 1] = cur
        cur = bool(min(1, max(0, int(cur) + int(d))))
        prev = pos + 1
    tau[prev:] = cur
    return tau


def _classify_affected(u: np.ndarray, model: np.ndarray, rough_line: np.ndarray,
                       edge_threshold: float = 0.5) -> np.ndarray:
    """Which symbols carry the fitted distortion.

    The distortion is a two-state telegraph with one shared shape, so its
    transitions show up as +-model jumps in per-symbol first differences.
    Projecting those differences onto the model curve localizes the
    transitions regardless of how long the distorted runs are or where
    they sit, which windowed medians cannot guarantee.  The remaining
    binary choice (which side of the telegraph is distorted) picks the
    assignment whose corrected capture is smoothest in time.
    """
    e = np.diff(u, axis=0)
    denom = float(model @ model)
    score = (e @ model) / denom
    edge_pos = np.nonzero(np.abs(score) > edge_threshold)[0]
    # model ~ minus the distortion, so a clean->distorted step scores -1
    deltas = -np.sign(score[edge_pos]).astype(int)
    n_sym = u.shape[0]

    if edge_pos.size == 0:
        # no transitions: either nothing or everything is distorted
        r0 = np.sqrt(np.mean((u - rough_line) ** 2, axis=1))
        r1 = np.sqrt(np.mean((u + model[None, :] - rough_line) ** 2, axis=1))
        return np.full(n_sym, bool(np.mean(r1) < np.mean(r0)))

    best = None
    best_cost = np.inf
    for start in (False, True):
        tau = _assignment_from_edges(n_sym, edge_pos, deltas, start)
        dtau = np.diff(tau.astype(np.float64))
        cost = float(np.sum((e + np.outer(dtau, model)) ** 2))
        if cost < best_cost:
            best_cost = cost
            best = tau
    return best


def calibrate_capture(c: CsiCapture, trend_window: int = 31, threshold: float = 0.02,
                      min_model_rms: float = 0.01, opts: LmOptions | None = None,
                      rloess_span: float | None = None,
                      ) -> tuple[CsiCapture, list[PairCalibration]]:
    """Detect, fit and compensate phase errors on every beam pair.

    One parameter set is fitted per pair on its worst flagged symbol and
    reused across all symbols carrying the distortion (errors repeat with
    identical parameters, so a single fit serves the whole capture).  The
    default solver tolerance stops refining three orders of magnitude below
    the compensation target instead of crawling to machine precision.  With
    ``rloess_span`` set, each per-subcarrier phase series is additionally
    smoothed by robust local regression after compensation.
    """
    opts = opts or LmOptions(obj_tol=1e-9)
    h = np.array(c.h)
    reports = []
    n_f = c.meta.n_subcarriers
    n_model = np.arange(1, n_f + 1, dtype=np.float64)
    grid = np.arange(n_f, dtype=np.float64)

    for tx in range(1, c.meta.n_tx_beams + 1):
        for rx in range(1, c.meta.n_rx_beams + 1):
            pair = BeamPair(tx_index=tx, rx_index=rx)
            pr = pair_residuals(c, pair, trend_window, threshold)
            pre_rms = float(np.sqrt(np.mean(pr.deviation_rms ** 2)))
            # a pair with no coherent linear structure (noise-only: the
            # typical deviation is radians, not centiradians) has nothing a
            # phase-error model could fix
            incoherent = float(np.median(pr.deviation_rms)) > 1.0
            if incoherent or not pr.candidates.any():
                reports.append(PairCalibration(pair, None, np.empty(0, dtype=int),
                                               False, pre_rms, pre_rms))
                continue

            fit = None
            flagged_mask = pr.candidates
            model = None
            # up to two rounds: classify with the first fit, then refit on a
            # symbol whose trend is anchored by the refined clean set; skip
            # the refit when classification already agrees with the flags
            for _ in range(2):
                clean = ~flagged_mask
                trend = _interp_trend(pr, clean, grid)
                dev = np.sqrt(np.mean((pr.unwrapped - trend) ** 2, axis=1))
                pool = flagged_mask if flagged_mask.any() else pr.candidates
                worst = int(np.argmax(np.where(pool, dev, -np.inf)))
                residual = trend[worst] - pr.unwrapped[worst]
                fit = fit_phase_errors(residual, opts=opts)
                model = model_residual(fit.params, n_model)
                if float(np.sqrt(np.mean(model ** 2))) < min_model_rms:
                    break
                new_mask = _classify_affected(pr.unwrapped, model, trend)
                changed = not np.array_equal(new_mask, flagged_mask)
                flagged_mask = new_mask
                if not changed:
                    break

            model_rms = float(np.sqrt(np.mean(model ** 2))) if model is not None else 0.0
            if model is None or model_rms < min_model_rms:
                reports.append(PairCalibration(pair, fit, np.empty(0, dtype=int),
                                               False, pre_rms, pre_rms))
                continue

            flagged = np.nonzero(flagged_mask)[0]
            if flagged.size:
                h[flagged, rx - 1, tx - 1, :] *= np.exp(1j * model)[None, :]
            clean = ~flagged_mask
            trend = _interp_trend(pr, clean, grid)
            corrected = pr.unwrapped + np.where(flagged_mask, 1.0, 0.0)[:, None] * model[None, :]
            post_rms = float(np.sqrt(np.mean((corrected - trend) ** 2)))
            reports.append(PairCalibration(pair, fit, flagged, flagged.size > 0,
                                           pre_rms, post_rms))

    if rloess_span is not None:
        for tx in range(c.meta.n_tx_beams):
            for rx in range(c.meta.n_rx_beams):
                block = h[:, rx, tx, :]
                mag = np.abs(block)
                for f in range(n_f):
                    ph = np.unwrap(np.angle(block[:, f]))
                    block[:, f] = mag[:, f] * np.exp(1j * smooth_rloess(ph, rloess_span))
    return CsiCapture(c.meta, h), reports


def smooth_rloess(x, span: float = 0.1) -> np.ndarray:
    """Robust LOESS: tricube weights, local quadratic, 4 bisquare reweights.

    ``span`` is the fraction of points in each local window.  Quadratic
    inputs are reproduced exactly; isolated spikes are suppressed by the
    robustness iterations.
    """
    y = np.asarray(x, dtype=np.float64)
    if y.ndim != 1:
        raise ValidationError("smooth_rloess expects a 1-D series")
    if y.size < 5:
        raise ValidationError("series too short for rloess (need >= 5 samples)")
    if not 0 < span <= 1:
        raise ValidationError("span must lie in (0, 1]")
    n = y.size
    k = max(5, int(math.ceil(span * n)))
    k = min(k, n)
    t = np.arange(n, dtype=np.float64)

    robust = np.ones(n)
    fitted = y.copy()
    for _ in range(5):  # initial fit + 4 robustness passes
        for i in range(n):
            lo = min(max(i - (k - 1) // 2, 0), n - k)
            sl = slice(lo, lo + k)
            d = np.abs(t[sl] - t[i])
            dmax = d.max()
            w = (1.0 - (d / dmax) ** 3) ** 3 if dmax > 0 else np.ones(k)
            w = w * robust[sl]
            if w.sum() <= 0:
                w = np.ones(k)
            dt = t[sl] - t[i]
            a = np.stack([np.ones(k), dt, dt * dt], axis=1)
            aw = a * w[:, None]
            try:
                coef = np.linalg.solve(a.T @ aw, aw.T @ y[sl])
            except np.linalg.LinAlgError:
                coef = np.linalg.lstsq(aw, w * y[sl], rcond=None)[0]
            fitted[i] = coef[0]
        r = y - fitted
        s = np.median(np.abs(r))
        if s <= 0:
            break
        u = np.clip(r / (6.0 * s), -1.0, 1.0)
        robust = (1.0 - u * u) ** 2
    return fitted
