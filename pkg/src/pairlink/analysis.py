"""Physics results from coincidence data: fringe visibility, background
correction, heralding efficiency and BBM-92 key rate, plus the fringe-scan
and pump-power-sweep drivers that tie simulation and analysis together."""

from __future__ import annotations

import math
import os
from typing import NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import curve_fit

from .errors import FitError, ParameterError
from .model import (
    FWHM_PER_SIGMA,
    AnalyzerSetting,
    LinkScenario,
    accidental_rate,
    expected_rates,
)
from .simkit import derive_seed, simulate_link
from .tsproc import CorrelationHistogram, displaced_window_rate, find_coincidences, find_offset

IDLER_SETTINGS = {"H": 0.0, "V": 90.0, "D": 45.0, "A": 135.0}
BASES = {"HV": ("H", "V"), "DA": ("D", "A")}

MIN_DISTINCT_ANGLES = 6


class _Result(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ------------------------------------------------------------------ fringe fits


class SinusoidFit(NamedTuple):
    """Least-squares fit of rate = amplitude * (1 + visibility * cos(2*angle + phase))."""

    amplitude: float
    visibility: float
    phase: float
    residual: float
    visibility_err: float
    c_max: float
    c_min: float


def fit_sinusoid(angles, rates, uncertainties=None) -> SinusoidFit:
    """Fit a polarization fringe.

    ``angles`` are polarizer-equivalent signal angles in degrees (one fringe
    period is 180 deg, i.e. 90 deg of half-wave-plate rotation). The model is
    linear in {1, cos 2a, sin 2a}, so the fit is a single weighted linear
    least-squares solve. ``uncertainties`` are per-point standard deviations;
    without them the covariance is scaled by the residual variance.
    """
    ang = np.asarray(angles, dtype=float)
    y = np.asarray(rates, dtype=float)
    if ang.shape != y.shape or ang.ndim != 1:
        raise FitError("angles and rates must be 1-D arrays of equal length")
    distinct = np.unique(np.round(np.mod(ang, 180.0), 9)).size
    if distinct < MIN_DISTINCT_ANGLES:
        raise FitError(
            f"need at least {MIN_DISTINCT_ANGLES} distinct angles modulo 180 deg, got {distinct}"
        )
    x = np.radians(2.0 * ang)
    design = np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])
    if uncertainties is None:
        w = np.ones_like(y)
    else:
        sig = np.asarray(uncertainties, dtype=float)
        if np.any(sig <= 0):
            raise FitError("uncertainties must be positive")
        w = 1.0 / sig
    dw = design * w[:, None]
    if np.linalg.matrix_rank(dw) < 3:
        raise FitError("rank-deficient design: angles alias onto fewer than 3 phases")
    coef, *_ = np.linalg.lstsq(dw, y * w, rcond=None)
    a0, a1, a2 = coef
    resid = float(np.linalg.norm((y - design @ coef) * w))
    if a0 <= 0:
        if np.allclose(y, 0.0):
            raise FitError("all rates are zero")
        raise FitError("fitted mean rate is not positive")

    cov = np.linalg.inv(dw.T @ dw)
    if uncertainties is None:
        dof = y.size - 3
        cov = cov * (resid**2 / dof if dof > 0 else 0.0)
    amp = math.hypot(a1, a2)
    vis = amp / a0
    if amp > 0:
        grad = np.array([-vis / a0, a1 / (amp * a0), a2 / (amp * a0)])
        var = float(grad @ cov @ grad)
    else:
        var = float(cov[1, 1] + cov[2, 2]) / a0**2
    # a1 = A V cos(phase), a2 = -A V sin(phase)
    phase = math.degrees(math.atan2(-a2, a1)) if amp > 0 else 0.0
    return SinusoidFit(
        amplitude=float(a0),
        visibility=float(vis),
        phase=phase,
        residual=resid,
        visibility_err=math.sqrt(max(var, 0.0)),
        c_max=float(a0 + amp),
        c_min=float(a0 - amp),
    )


def sinusoid(angles, amplitude: float, visibility: float, phase: float = 0.0) -> np.ndarray:
    """The fringe model evaluated at polarizer angles (deg)."""
    x = np.radians(2.0 * np.asarray(angles, dtype=float) + phase)
    return amplitude * (1.0 + visibility * np.cos(x))


def visibility(c_max: float, c_min: float) -> float:
    """(C_max - C_min) / (C_max + C_min)."""
    if c_max == 0 and c_min == 0:
        raise ParameterError("visibility undefined when both rates are zero")
    if c_min < 0 or c_max < c_min:
        raise ParameterError(f"need C_max >= C_min >= 0, got {c_max}, {c_min}")
    return (c_max - c_min) / (c_max + c_min)


class BackgroundCorrection(NamedTuple):
    rates: np.ndarray
    fit: SinusoidFit
    raw_fit: SinusoidFit
    clamped: bool


def background_correct(angles, rates, accidental, uncertainties=None) -> BackgroundCorrection:
    """Subtract the accidental rate (scalar or one value per angle) and refit.

    Rates that would go negative are clamped to zero and ``clamped`` is set.
    """
    y = np.asarray(rates, dtype=float)
    acc = np.broadcast_to(np.asarray(accidental, dtype=float), y.shape)
    if np.any(acc < 0):
        raise ParameterError("accidental rate must be non-negative")
    raw = fit_sinusoid(angles, y, uncertainties)
    if np.max(acc) > raw.c_max:
        raise ParameterError(
            f"degenerate correction: accidental rate {np.max(acc):g} exceeds C_max {raw.c_max:g}"
        )
    corrected = y - acc
    clamped = bool(np.any(corrected < 0))
    corrected = np.clip(corrected, 0.0, None)
    return BackgroundCorrection(corrected, fit_sinusoid(angles, corrected, uncertainties), raw, clamped)


# ------------------------------------------------------------ rates and key rate


def heralding_efficiency(coincidences: float, singles1: float, singles2: float) -> float:
    """Pair-to-singles ratio C / sqrt(S1 S2)."""
    if singles1 <= 0 or singles2 <= 0:
        raise ParameterError("singles rates must be positive")
    if coincidences < 0:
        raise ParameterError("coincidence rate must be non-negative")
    ceiling = math.sqrt(singles1 * singles2)
    if coincidences > ceiling * (1 + 1e-12):
        raise ParameterError(
            f"inconsistent input: coincidences {coincidences:g} exceed sqrt(S1 S2) = {ceiling:g}"
        )
    return coincidences / ceiling


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"probability must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def qber(vis: float) -> float:
    """Quantum bit error rate of a source with fringe visibility ``vis``."""
    if not 0.0 <= vis <= 1.0:
        raise ParameterError(f"visibility must be in [0, 1], got {vis}")
    return (1.0 - vis) / 2.0


class KeyRateEstimate(_Result):
    coincidence_rate: float
    visibility: float
    qber: float
    ec_efficiency: float
    secret_fraction: float
    sifting: float
    key_rate: float
    below_threshold: bool


def bbm92_key_rate(
    coincidences: float, vis: float, f: float = 1.1, sifting: float = 1.0
) -> KeyRateEstimate:
    """Asymptotic BBM-92 secure key rate.

    secret fraction r = 1 - f h2(e) - h2(e) with e = (1 - V)/2, and
    R = C * sifting * max(0, r). A negative fraction is reported as is and
    flagged ``below_threshold``; the key rate is then zero.
    """
    if coincidences < 0:
        raise ParameterError("coincidence rate must be non-negative")
    if f < 1.0:
        raise ParameterError("error-correction efficiency must be >= 1")
    if not 0.0 < sifting <= 1.0:
        raise ParameterError("sifting factor must be in (0, 1]")
    e = qber(vis)
    h = binary_entropy(e)
    r = 1.0 - f * h - h
    return KeyRateEstimate(
        coincidence_rate=coincidences,
        visibility=vis,
        qber=e,
        ec_efficiency=f,
        secret_fraction=r,
        sifting=sifting,
        key_rate=coincidences * sifting * max(0.0, r),
        below_threshold=r <= 0.0,
    )


def dead_time_corrected_rate(
    coincidences: float,
    singles1: float,
    singles2: float,
    dead_time1_ns: float,
    dead_time2_ns: float,
) -> float:
    """Undo the non-paralyzable live-time loss of both detectors on a
    coincidence rate, using the recorded singles."""
    live1 = 1.0 - singles1 * dead_time1_ns * 1e-9
    live2 = 1.0 - singles2 * dead_time2_ns * 1e-9
    if live1 <= 0 or live2 <= 0:
        raise ParameterError("detector fully saturated")
    return coincidences / (live1 * live2)


def fit_peak_fwhm(hist: CorrelationHistogram) -> float:
    """FWHM (ps) of a Gaussian-plus-constant fit to a correlation histogram."""
    x = hist.centers
    y = hist.counts.astype(float)
    if y.sum() == 0:
        raise FitError("empty histogram")
    peak = int(np.argmax(y))
    base = float(np.median(y))
    half = (y[peak] + base) / 2
    sigma0 = max(np.count_nonzero(y > half) * hist.bin_width / FWHM_PER_SIGMA, hist.bin_width)

    def model(t, height, mu, sigma, c):
        return height * np.exp(-0.5 * ((t - mu) / sigma) ** 2) + c

    p0 = [y[peak] - base, x[peak], sigma0, base]
    popt, _ = curve_fit(model, x, y, p0=p0, sigma=np.sqrt(np.maximum(y, 1.0)), maxfev=10000)
    return abs(popt[2]) * FWHM_PER_SIGMA


# ----------------------------------------------------------------- fringe scans


class ScanPoint(_Result):
    basis: str
    idler_setting: str
    idler_angle: float
    hwp_angle: float
    signal_angle: float
    dwell_s: float
    counts: float
    rate: float
    accidental_rate: float
    corrected_rate: float
    singles_signal: float
    singles_idler: float


class VisibilityResult(_Result):
    basis: str
    idler_setting: str
    idler_angle: float
    amplitude: float
    phase: float
    visibility_raw: float
    visibility_raw_err: float
    visibility_corr: float
    visibility_corr_err: float
    c_max: float
    c_min: float
    c_max_corr: float
    c_min_corr: float
    accidental_rate: float
    residual_norm: float
    clamped: bool


class BasisSummary(_Result):
    basis: str
    visibility_raw: float
    visibility_raw_err: float
    visibility_corr: float
    visibility_corr_err: float
    pair_rate: float
    pair_rate_err: float
    accidental_rate: float


class FringeScan(_Result):
    mode: str
    offset_ps: int
    points: list[ScanPoint]
    fringes: list[VisibilityResult]
    bases: list[BasisSummary]
    visibility_avg_raw: float
    visibility_avg_raw_err: float
    visibility_avg_corr: float
    visibility_avg_corr_err: float
    pair_rate: float
    pair_rate_err: float
    accidental_rate: float
    singles_signal: float
    singles_idler: float


def default_hwp_angles(step: float = 11.25, span: float = 90.0) -> np.ndarray:
    """Half-wave-plate angles covering ``span`` degrees (one fringe per 90)."""
    n = int(round(span / step))
    return step * np.arange(n)


def _basis_of(label: str) -> str:
    for basis, labels in BASES.items():
        if label in labels:
            return basis
    raise ParameterError(f"unknown idler setting {label!r}")


_NULL_FIT = SinusoidFit(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _fringe(points: list[ScanPoint], label: str, weighted: bool) -> VisibilityResult:
    ang = np.array([p.signal_angle for p in points])
    rate = np.array([p.rate for p in points])
    acc = np.array([p.accidental_rate for p in points])
    if weighted:
        dwell = np.array([p.dwell_s for p in points])
        counts = np.array([p.counts for p in points])
        sig_raw = np.sqrt(np.maximum(counts, 1.0)) / dwell
        sig_corr = np.sqrt(np.maximum(counts + acc * dwell, 1.0)) / dwell
    else:
        sig_raw = sig_corr = None
    try:
        raw = fit_sinusoid(ang, rate, sig_raw)
    except FitError:
        # no counts at all; nothing to fit
        raw = _NULL_FIT
    try:
        corr = background_correct(ang, rate, acc, sig_corr)
        corr_fit, clamped = corr.fit, corr.clamped
    except (FitError, ParameterError):
        # accidentals swallow the whole fringe (e.g. zero pump)
        corr_fit, clamped = _NULL_FIT, True
    v_raw = min(raw.visibility, 1.0)
    v_corr = min(corr_fit.visibility, 1.0)
    return VisibilityResult(
        basis=_basis_of(label),
        idler_setting=label,
        idler_angle=IDLER_SETTINGS[label],
        amplitude=raw.amplitude,
        phase=raw.phase,
        visibility_raw=v_raw,
        visibility_raw_err=raw.visibility_err,
        visibility_corr=v_corr,
        visibility_corr_err=corr_fit.visibility_err,
        c_max=raw.c_max,
        c_min=raw.c_min,
        c_max_corr=corr_fit.c_max,
        c_min_corr=corr_fit.c_min,
        accidental_rate=float(acc.mean()),
        residual_norm=raw.residual,
        clamped=clamped or raw.visibility > 1.0 or corr_fit.visibility > 1.0,
    )


def _mean_err(errs: Sequence[float]) -> float:
    return math.sqrt(sum(e * e for e in errs)) / len(errs)


def fringe_scan(
    scenario: LinkScenario,
    hwp_angles: Sequence[float],
    dwell_s: float,
    seed: int,
    idler_settings: Sequence[str] = ("H", "V", "D", "A"),
    mode: str = "simulate",
    offset_ps: int | None = None,
    displacement: float = 7.0,
    sync_duration: float = 0.2,
    method: str = "marked",
) -> FringeScan:
    """Record polarization fringes the way the experiment does.

    For each idler setting the signal half-wave plate steps through
    ``hwp_angles`` (polarizer angle = 2 x HWP angle), dwelling ``dwell_s`` per
    point. Coincidences are counted in the main window and in a window
    displaced by ``displacement`` ns; each fringe is fitted raw and after
    subtracting the displaced-window rate at every angle.

    ``mode="simulate"`` runs the Monte Carlo and, unless ``offset_ps`` is
    given, first locates the fiber delay on a short unpolarized sync record.
    ``mode="analytic"`` uses the noiseless closed-form rates instead.
    """
    if mode not in ("simulate", "analytic"):
        raise ParameterError(f"unknown scan mode {mode!r}")
    if dwell_s <= 0:
        raise ParameterError("dwell time must be positive")
    window = scenario.coincidence_window
    if abs(displacement) <= window:
        raise ParameterError("accidental window displacement overlaps the main window")

    if mode == "simulate" and offset_ps is None:
        sig, idl, _ = simulate_link(
            scenario.with_analyzer(None), sync_duration, derive_seed(seed, 0xFFFF), method
        )
        offset_ps = find_offset(idl, sig).offset
        del sig, idl
    offset_ps = int(offset_ps or 0)

    points: list[ScanPoint] = []
    k = 0
    for label in idler_settings:
        idler_angle = IDLER_SETTINGS[label]
        for hwp in hwp_angles:
            setting = AnalyzerSetting(signal_angle=2.0 * float(hwp), idler_angle=idler_angle)
            scn = scenario.with_analyzer(setting)
            if mode == "simulate":
                sig, idl, _ = simulate_link(scn, dwell_s, derive_seed(seed, k), method)
                res = find_coincidences(idl, sig, window, offset_ps)
                acc = displaced_window_rate(idl, sig, window, offset_ps, displacement)
                counts, rate = float(res.count), res.count / dwell_s
                s_sig, s_idl = len(sig) / dwell_s, len(idl) / dwell_s
                del sig, idl
            else:
                pred = expected_rates(scn)
                rate = pred.total_coincidences
                counts = rate * dwell_s
                acc = accidental_rate(pred.singles_signal, pred.singles_idler, window)
                s_sig, s_idl = pred.singles_signal, pred.singles_idler
            points.append(
                ScanPoint(
                    basis=_basis_of(label),
                    idler_setting=label,
                    idler_angle=idler_angle,
                    hwp_angle=float(hwp),
                    signal_angle=2.0 * float(hwp),
                    dwell_s=dwell_s,
                    counts=counts,
                    rate=rate,
                    accidental_rate=acc,
                    corrected_rate=rate - acc,
                    singles_signal=s_sig,
                    singles_idler=s_idl,
                )
            )
            k += 1

    weighted = mode == "simulate"
    fringes = [
        _fringe([p for p in points if p.idler_setting == label], label, weighted)
        for label in idler_settings
    ]
    bases = []
    for basis in BASES:
        fr = [f for f in fringes if f.basis == basis]
        if not fr:
            continue
        pair_pts = [p for p in points if p.basis == basis]
        # two idler settings x (C_max + C_min) = all four joint outcomes
        scale = 2.0 / len(fr) * 2.0
        pair_rate = scale * sum(f.amplitude for f in fr)
        n_per = len(pair_pts) / len(fr)
        pair_counts = sum(p.counts for p in pair_pts)
        pair_err = pair_rate / math.sqrt(pair_counts) if pair_counts > 0 else 0.0
        bases.append(
            BasisSummary(
                basis=basis,
                visibility_raw=float(np.mean([f.visibility_raw for f in fr])),
                visibility_raw_err=_mean_err([f.visibility_raw_err for f in fr]),
                visibility_corr=float(np.mean([f.visibility_corr for f in fr])),
                visibility_corr_err=_mean_err([f.visibility_corr_err for f in fr]),
                pair_rate=pair_rate,
                pair_rate_err=pair_err,
                accidental_rate=scale * sum(p.accidental_rate for p in pair_pts) / n_per,
            )
        )
    return FringeScan(
        mode=mode,
        offset_ps=offset_ps,
        points=points,
        fringes=fringes,
        bases=bases,
        visibility_avg_raw=float(np.mean([b.visibility_raw for b in bases])),
        visibility_avg_raw_err=_mean_err([b.visibility_raw_err for b in bases]),
        visibility_avg_corr=float(np.mean([b.visibility_corr for b in bases])),
        visibility_avg_corr_err=_mean_err([b.visibility_corr_err for b in bases]),
        pair_rate=float(np.mean([b.pair_rate for b in bases])),
        pair_rate_err=_mean_err([b.pair_rate_err for b in bases]),
        accidental_rate=float(np.mean([b.accidental_rate for b in bases])),
        singles_signal=float(np.mean([p.singles_signal for p in points])),
        singles_idler=float(np.mean([p.singles_idler for p in points])),
    )


# ------------------------------------------------------------------ power sweep


class SweepRow(_Result):
    pump_mw: float
    pair_rate: float
    pair_rate_err: float
    accidental_rate: float
    v_hv_raw: float
    v_da_raw: float
    v_avg_raw: float
    v_avg_raw_err: float
    v_avg_corr: float
    v_avg_corr_err: float
    qber: float
    key_rate: float
    singles_signal: float
    singles_idler: float
    dead_time_corrected_pair_rate: float
    fringes: list[VisibilityResult]
    key: KeyRateEstimate


class SweepSummary(_Result):
    seed: int
    rows: list[SweepRow]


SWEEP_CSV_COLUMNS = (
    "pump_mW", "C", "C_acc", "V_hv_raw", "V_da_raw", "V_avg_raw", "V_avg_corr", "QBER", "key_rate",
)


def _same_except_pump(scenarios: Sequence[LinkScenario]) -> bool:
    ref = scenarios[0].with_pump(0.0)
    return all(s.with_pump(0.0) == ref for s in scenarios[1:])


def sweep_row(
    scenario: LinkScenario,
    scan: FringeScan,
    f: float = 1.1,
    sifting: float = 1.0,
) -> SweepRow:
    basis = {b.basis: b for b in scan.bases}
    key = bbm92_key_rate(scan.pair_rate, scan.visibility_avg_raw, f, sifting)
    return SweepRow(
        pump_mw=scenario.source.pump_power,
        pair_rate=scan.pair_rate,
        pair_rate_err=scan.pair_rate_err,
        accidental_rate=scan.accidental_rate,
        v_hv_raw=basis["HV"].visibility_raw,
        v_da_raw=basis["DA"].visibility_raw,
        v_avg_raw=scan.visibility_avg_raw,
        v_avg_raw_err=scan.visibility_avg_raw_err,
        v_avg_corr=scan.visibility_avg_corr,
        v_avg_corr_err=scan.visibility_avg_corr_err,
        qber=key.qber,
        key_rate=key.key_rate,
        singles_signal=scan.singles_signal,
        singles_idler=scan.singles_idler,
        dead_time_corrected_pair_rate=dead_time_corrected_rate(
            scan.pair_rate,
            scan.singles_signal,
            scan.singles_idler,
            scenario.detector_signal.dead_time,
            scenario.detector_idler.dead_time,
        ),
        fringes=scan.fringes,
        key=key,
    )


def power_sweep(
    scenarios: Sequence[LinkScenario],
    duration: float | Sequence[float],
    seed: int,
    hwp_angles: Sequence[float] | None = None,
    f: float = 1.1,
    sifting: float = 1.0,
    mode: str = "simulate",
    strict: bool = True,
    displacement: float = 7.0,
) -> SweepSummary:
    """One fringe-scan row per scenario (pump power).

    ``duration`` is the dwell per scan point, either one value or one per
    scenario. With ``strict`` the scenarios must differ only in pump power;
    per-run calibrated fixtures pass ``strict=False``.
    """
    if not scenarios:
        raise ParameterError("no scenarios given")
    if strict and not _same_except_pump(scenarios):
        raise ParameterError("scenarios differ in more than pump power")
    if hwp_angles is None:
        hwp_angles = default_hwp_angles()
    dwells = [duration] * len(scenarios) if np.isscalar(duration) else list(duration)
    if len(dwells) != len(scenarios):
        raise ParameterError("need one dwell time per scenario")
    rows = []
    for k, (scn, dwell) in enumerate(zip(scenarios, dwells)):
        scan = fringe_scan(
            scn, hwp_angles, dwell, derive_seed(seed, k), mode=mode, displacement=displacement
        )
        rows.append(sweep_row(scn, scan, f, sifting))
    return SweepSummary(seed=seed, rows=rows)


def write_sweep_csv(summary: SweepSummary, path: str | os.PathLike) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(SWEEP_CSV_COLUMNS) + "\n")
        for r in summary.rows:
            vals = (
                r.pump_mw, r.pair_rate, r.accidental_rate, r.v_hv_raw, r.v_da_raw,
                r.v_avg_raw, r.v_avg_corr, r.qber, r.key_rate,
            )
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def write_scan_csv(scan: FringeScan, path: str | os.PathLike) -> None:
    cols = list(ScanPoint.model_fields)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for p in scan.points:
            row = p.model_dump()
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
