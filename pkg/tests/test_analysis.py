import math

import numpy as np
import pytest
from scipy.stats import entropy
from hypothesis import given
from hypothesis import strategies as st

from pairlink.analysis import (
    SWEEP_CSV_COLUMNS,
    background_correct,
    bbm92_key_rate,
    binary_entropy,
    dead_time_corrected_rate,
    default_hwp_angles,
    fit_peak_fwhm,
    fit_sinusoid,
    fringe_scan,
    heralding_efficiency,
    power_sweep,
    qber,
    sinusoid,
    visibility,
    write_scan_csv,
    write_sweep_csv,
)
from pairlink.errors import FitError, ParameterError
from pairlink.model import DetectorParams, SourceParams
from pairlink.tsproc import CorrelationHistogram

from conftest import ideal_scenario

HWP24 = 7.5 * np.arange(24)  # half-wave plate over 180 deg


# ----------------------------------------------------------------- sinusoid fit


def test_fit_round_trip_noiseless():
    ang = 2 * HWP24
    fit = fit_sinusoid(ang, sinusoid(ang, 100.0, 0.925, 0.0))
    assert fit.amplitude == pytest.approx(100.0, rel=1e-9)
    assert fit.visibility == pytest.approx(0.925, rel=1e-9)
    assert fit.phase == pytest.approx(0.0, abs=1e-7)
    assert visibility(fit.c_max, fit.c_min) == pytest.approx(fit.visibility, rel=1e-12)


@given(st.floats(1, 1e5), st.floats(0.01, 1), st.floats(-179, 179))
def test_fit_round_trip_property(a, v, phi):
    ang = 2 * default_hwp_angles()
    fit = fit_sinusoid(ang, sinusoid(ang, a, v, phi))
    assert fit.amplitude == pytest.approx(a, rel=1e-9)
    assert fit.visibility == pytest.approx(v, rel=1e-9)
    assert math.cos(math.radians(fit.phase - phi)) == pytest.approx(1.0, abs=1e-9)


def test_fit_constant_rates():
    fit = fit_sinusoid(2 * HWP24, np.full(24, 50.0))
    assert fit.visibility == pytest.approx(0.0, abs=1e-12)


def test_fit_rejects_aliased_angles():
    with pytest.raises(FitError):
        fit_sinusoid([0, 180, 360, 90, 270, 450], np.ones(6))
    with pytest.raises(FitError):
        fit_sinusoid([0, 30, 60], [1, 2, 3])
    with pytest.raises(FitError):
        fit_sinusoid(2 * HWP24, np.zeros(24))


def test_fit_unbiased_under_poisson_noise():
    rng = np.random.default_rng(2024)
    ang = 2 * default_hwp_angles()
    dwell = 1.0
    truth = sinusoid(ang, 500.0, 0.9, 20.0)
    vs, errs = [], []
    for _ in range(200):
        counts = rng.poisson(truth * dwell)
        fit = fit_sinusoid(ang, counts / dwell, np.sqrt(np.maximum(counts, 1)) / dwell)
        vs.append(fit.visibility)
        errs.append(fit.visibility_err)
    mean, sem = np.mean(vs), np.std(vs) / math.sqrt(len(vs))
    assert abs(mean - 0.9) <= 3 * sem
    # the reported error matches the scatter
    assert np.mean(errs) == pytest.approx(np.std(vs), rel=0.2)


# ------------------------------------------------------------------ visibility


def test_visibility_examples():
    assert visibility(150, 50) == 0.5
    assert visibility(70, 70) == 0.0
    assert visibility(70, 0) == 1.0
    with pytest.raises(ParameterError):
        visibility(0, 0)
    with pytest.raises(ParameterError):
        visibility(10, 20)


@given(st.floats(1e-3, 1e6), st.floats(0, 1), st.floats(1e-3, 1e3))
def test_visibility_scale_invariant(cmax, frac, k):
    cmin = cmax * frac
    assert visibility(k * cmax, k * cmin) == pytest.approx(visibility(cmax, cmin), abs=1e-12)


# ------------------------------------------------------------ background


def test_background_correct_closed_form():
    ang = 2 * HWP24
    rates = sinusoid(ang, 100.0, 0.8) + 20.0
    raw = fit_sinusoid(ang, rates)
    assert raw.visibility == pytest.approx(0.8 * 100 / 120, rel=1e-9)
    corr = background_correct(ang, rates, 20.0)
    assert corr.fit.visibility == pytest.approx(0.8, rel=1e-9)
    assert not corr.clamped


def test_background_zero_is_identity():
    ang = 2 * HWP24
    rates = sinusoid(ang, 100.0, 0.6)
    corr = background_correct(ang, rates, 0.0)
    assert corr.fit.visibility == pytest.approx(corr.raw_fit.visibility, rel=1e-12)


def test_background_clamps_and_rejects():
    ang = 2 * HWP24
    rates = sinusoid(ang, 100.0, 0.9)  # C_min = 10
    corr = background_correct(ang, rates, 15.0)
    assert corr.clamped and corr.rates.min() == 0.0
    with pytest.raises(ParameterError):
        background_correct(ang, rates, 500.0)
    with pytest.raises(ParameterError):
        background_correct(ang, rates, -1.0)


# -------------------------------------------------------- heralding, QBER, key


def test_heralding_examples():
    assert heralding_efficiency(1000, 1e4, 1e4) == pytest.approx(0.1)
    assert heralding_efficiency(9000, 1.5e4, 6e4) == pytest.approx(0.30)
    with pytest.raises(ParameterError):
        heralding_efficiency(2e4, 1e4, 1e4)
    with pytest.raises(ParameterError):
        heralding_efficiency(1, 0, 1e4)


def test_binary_entropy_examples():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == binary_entropy(1.0) == 0.0
    # independent oracle; the exact value is 0.230710, quoted elsewhere as 0.23072
    assert binary_entropy(0.0375) == pytest.approx(entropy([0.0375, 0.9625], base=2), rel=1e-12)
    assert binary_entropy(0.0375) == pytest.approx(0.23072, abs=5e-5)
    with pytest.raises(ParameterError):
        binary_entropy(1.1)


def test_qber_mapping():
    assert qber(1.0) == 0.0 and qber(0.0) == 0.5
    assert qber(0.925) == pytest.approx(0.0375)
    with pytest.raises(ParameterError):
        qber(1.2)


def test_key_rate_examples():
    est = bbm92_key_rate(10033, 0.925, 1.1)
    assert est.key_rate == pytest.approx(5172, abs=1)
    assert est.qber == pytest.approx(0.0375)
    assert bbm92_key_rate(1234.0, 1.0, 1.1).key_rate == 1234.0
    low = bbm92_key_rate(10033, 0.78, 1.1)
    assert low.key_rate == 0.0 and low.below_threshold and low.secret_fraction < 0
    assert binary_entropy(low.qber) == pytest.approx(0.4999, abs=1e-3)
    assert bbm92_key_rate(10033, 0.7, 1.1).below_threshold
    half = bbm92_key_rate(10033, 0.925, 1.1, sifting=0.5)
    assert half.key_rate == pytest.approx(est.key_rate / 2)


def test_key_rate_rejects_bad_inputs():
    for args in [(-1, 0.9, 1.1), (100, 0.9, 0.9), (100, 1.5, 1.1)]:
        with pytest.raises(ParameterError):
            bbm92_key_rate(*args)
    with pytest.raises(ParameterError):
        bbm92_key_rate(100, 0.9, 1.1, sifting=0.0)


@given(st.floats(0, 1e5), st.floats(0, 1), st.floats(0, 1), st.floats(1, 2), st.floats(1, 2))
def test_key_rate_monotone(c, v1, v2, f1, f2):
    lo_v, hi_v = sorted((v1, v2))
    lo_f, hi_f = sorted((f1, f2))
    assert bbm92_key_rate(c, lo_v, lo_f).key_rate <= bbm92_key_rate(c, hi_v, lo_f).key_rate + 1e-9
    assert bbm92_key_rate(c, lo_v, hi_f).key_rate <= bbm92_key_rate(c, lo_v, lo_f).key_rate + 1e-9
    assert bbm92_key_rate(c, hi_v, lo_f).key_rate <= bbm92_key_rate(c + 1, hi_v, lo_f).key_rate


def test_dead_time_corrected_rate():
    assert dead_time_corrected_rate(100, 1e5, 1e6, 1000, 44) == pytest.approx(
        100 / (0.9 * (1 - 0.044))
    )
    with pytest.raises(ParameterError):
        dead_time_corrected_rate(1, 2e6, 1, 1000, 0)


def test_fit_peak_fwhm_on_synthetic_histogram():
    rng = np.random.default_rng(3)
    d = rng.normal(0, 280 / 2.3548, 200_000)
    counts, edges = np.histogram(d, bins=np.arange(-2000, 2001, 10))
    counts = counts + rng.poisson(5, counts.size)
    hist = CorrelationHistogram(10, (-2000, 2000), counts, int(counts.sum()))
    assert fit_peak_fwhm(hist) == pytest.approx(280, rel=0.01)


# ---------------------------------------------------------------- fringe scans


def test_analytic_scan_of_ideal_source():
    scan = fringe_scan(ideal_scenario(), default_hwp_angles(), 1.0, 0, mode="analytic")
    assert scan.visibility_avg_raw > 0.999
    assert len(scan.points) == 32 and len(scan.fringes) == 4
    assert {b.basis for b in scan.bases} == {"HV", "DA"}
    # all four joint outcomes of a basis add up to the pair rate
    assert scan.pair_rate == pytest.approx(9000.0, rel=1e-4)


def test_analytic_scan_recovers_per_basis_visibility():
    src = SourceParams(brightness=1e6, pump_power=0.1, intrinsic_v_hv=0.97, intrinsic_v_da=0.93)
    scan = fringe_scan(ideal_scenario(source=src), default_hwp_angles(), 1.0, 0, mode="analytic")
    basis = {b.basis: b for b in scan.bases}
    # the displaced-window estimate S1 S2 w counts paired singles too; 1e-5 effect
    assert basis["HV"].visibility_corr == pytest.approx(0.97, abs=1e-5)
    assert basis["DA"].visibility_corr == pytest.approx(0.93, abs=1e-5)


def test_scan_rejects_bad_arguments():
    with pytest.raises(ParameterError):
        fringe_scan(ideal_scenario(), default_hwp_angles(), 1.0, 0, mode="other")
    with pytest.raises(ParameterError):
        fringe_scan(ideal_scenario(), default_hwp_angles(), 0.0, 0)
    with pytest.raises(ParameterError):
        fringe_scan(ideal_scenario(), default_hwp_angles(), 1.0, 0, displacement=1.0)


def _noisy_local(pump=0.5):
    return ideal_scenario(
        pump=pump,
        source=SourceParams(
            brightness=1e6, pump_power=pump, intrinsic_v_hv=0.98, intrinsic_v_da=0.95
        ),
        detector_signal=DetectorParams(efficiency=0.15, dark_rate=2000, jitter_fwhm=250),
        detector_idler=DetectorParams(efficiency=0.6, dark_rate=300, jitter_fwhm=500),
        path_efficiency_signal=0.5,
        path_efficiency_idler=0.5,
    )


def test_simulated_scan_agrees_with_analytic_oracle():
    scn = _noisy_local()
    hwp = default_hwp_angles()
    sim = fringe_scan(scn, hwp, 0.5, seed=31)
    ref = fringe_scan(scn, hwp, 0.5, 0, mode="analytic")
    assert sim.offset_ps == pytest.approx(0, abs=20)
    assert abs(sim.visibility_avg_raw - ref.visibility_avg_raw) <= 3 * sim.visibility_avg_raw_err
    assert abs(sim.visibility_avg_corr - ref.visibility_avg_corr) <= 3 * sim.visibility_avg_corr_err
    assert abs(sim.pair_rate - ref.pair_rate) <= 3 * sim.pair_rate_err


def test_scan_csv(tmp_path):
    scan = fringe_scan(ideal_scenario(), default_hwp_angles(), 1.0, 0, mode="analytic")
    write_scan_csv(scan, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].startswith("basis,idler_setting,idler_angle,hwp_angle")
    assert len(lines) == 33


# ------------------------------------------------------------------ sweeps


def test_sweep_requires_pump_only_differences():
    a = ideal_scenario()
    with pytest.raises(ParameterError):
        power_sweep([a, a.model_copy(update={"path_efficiency_signal": 0.5})], 1.0, 0, mode="analytic")
    with pytest.raises(ParameterError):
        power_sweep([], 1.0, 0)
    with pytest.raises(ParameterError):
        power_sweep([a, a], [1.0], 0, mode="analytic")


def test_sweep_doubling_pump_doubles_rate():
    base = _noisy_local(0.25)
    summary = power_sweep([base, base.with_pump(0.5)], 0.5, seed=4)
    r1, r2 = summary.rows
    assert abs(r2.pair_rate - 2 * r1.pair_rate) <= 5 * math.hypot(r2.pair_rate_err, 2 * r1.pair_rate_err)
    assert r1.v_avg_raw > r2.v_avg_raw - 3 * math.hypot(r1.v_avg_raw_err, r2.v_avg_raw_err)


def test_zero_pump_row_is_dark_floor(tmp_path):
    base = _noisy_local(0.5)
    summary = power_sweep([base.with_pump(0.0), base], 1.0, seed=0, mode="analytic")
    zero = summary.rows[0]
    assert zero.v_avg_raw == pytest.approx(0.0, abs=1e-9)
    # each of the four joint outcomes sees the dark accidental floor
    floor = 2000 * 300 * 1.25e-9
    assert zero.pair_rate == pytest.approx(4 * floor, rel=1e-6)
    assert zero.v_avg_corr == 0.0 and all(f.clamped for f in zero.fringes)
    assert zero.key_rate == 0.0
    write_sweep_csv(summary, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",") == list(SWEEP_CSV_COLUMNS)
    assert len(lines) == 3
