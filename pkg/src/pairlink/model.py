"""Domain types and closed-form link physics.

Everything here is a pure function of its arguments. Units follow the field
names: wavelengths in nm, times in ps unless noted, rates in 1/s, pump power
in mW, fiber length in km.
"""

from __future__ import annotations

import math
import warnings

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ParameterError

SPEED_OF_LIGHT = 299_792_458.0  # m/s
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

CALIBRATED_TEMPERATURE_RANGE = (25.0, 45.0)


class _Params(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SourceParams(_Params):
    """Non-degenerate SPDC pair source."""

    brightness: float = Field(1.0e6, gt=0, description="pairs / s / mW")
    pump_power: float = Field(1.0, ge=0, description="mW")
    intrinsic_v_hv: float = Field(1.0, ge=0, le=1)
    intrinsic_v_da: float = Field(1.0, ge=0, le=1)
    signal_center_wl: float = Field(1310.12, gt=0, description="nm")
    signal_bandwidth_fwhm: float = Field(0.7, gt=0, description="nm")
    idler_center_wl: float = Field(586.0, gt=0, description="nm")
    pair_correlation_fwhm: float = Field(3.7, ge=0, description="ps")
    wl_temp_slope: float = Field(0.8, description="nm / K")
    ref_temperature: float = Field(33.4, description="degC")
    ref_wavelength: float = Field(1310.12, gt=0, description="nm")

    @property
    def pair_rate(self) -> float:
        """Pairs generated per second."""
        return self.brightness * self.pump_power


class FiberParams(_Params):
    """Standard single-mode fiber with a G.652-style dispersion curve."""

    length: float = Field(0.0, ge=0, description="km")
    attenuation: float = Field(0.34, ge=0, description="dB / km")
    group_index: float = Field(1.4677, ge=1.0)
    zero_dispersion_wl: float = Field(1313.0, ge=1200.0, le=1400.0, description="nm")
    dispersion_slope: float = Field(0.092, ge=0, description="ps / nm^2 / km")
    extra_loss_db: float = Field(0.0, ge=0, description="dB")

    @property
    def loss_db(self) -> float:
        return self.attenuation * self.length + self.extra_loss_db

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)


class DetectorParams(_Params):
    """Single-photon detector. ``dead_time`` is non-paralyzable."""

    efficiency: float = Field(ge=0, le=1)
    dark_rate: float = Field(0.0, ge=0, description="1/s")
    jitter_fwhm: float = Field(0.0, ge=0, description="ps")
    dead_time: float = Field(0.0, ge=0, description="ns")
    max_count_rate: float | None = Field(None, gt=0, description="1/s, informational")
    afterpulse_probability: float = Field(0.0, ge=0, le=1)
    afterpulse_delay: float = Field(100.0, gt=0, description="ns, mean of exponential")


class AnalyzerSetting(_Params):
    """Polarizer-equivalent analyzer angles in degrees (mod 180)."""

    signal_angle: float = 0.0
    idler_angle: float = 0.0


class LinkScenario(_Params):
    source: SourceParams
    fiber: FiberParams = FiberParams()
    detector_signal: DetectorParams
    detector_idler: DetectorParams
    path_efficiency_signal: float = Field(1.0, ge=0, le=1)
    path_efficiency_idler: float = Field(1.0, ge=0, le=1)
    analyzer: AnalyzerSetting | None = None
    coincidence_window: float = Field(1.25, gt=0, description="ns")

    @property
    def signal_efficiency(self) -> float:
        """Path x fiber x detector efficiency of the signal arm."""
        return (
            self.path_efficiency_signal
            * self.fiber.transmission
            * self.detector_signal.efficiency
        )

    @property
    def idler_efficiency(self) -> float:
        return self.path_efficiency_idler * self.detector_idler.efficiency

    def with_pump(self, pump_power: float) -> "LinkScenario":
        source = self.source.model_copy(update={"pump_power": pump_power})
        return self.model_copy(update={"source": source})

    def with_analyzer(self, analyzer: AnalyzerSetting | None) -> "LinkScenario":
        return self.model_copy(update={"analyzer": analyzer})


class RatePrediction(_Params):
    singles_signal: float = Field(ge=0)
    singles_idler: float = Field(ge=0)
    true_coincidences: float = Field(ge=0)
    accidental_coincidences: float = Field(ge=0)
    total_coincidences: float = Field(ge=0)
    window_acceptance: float = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _total_is_sum(self):
        expected = self.true_coincidences + self.accidental_coincidences
        if not math.isclose(self.total_coincidences, expected, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("total_coincidences must equal true + accidental")
        return self


def _check_visibility(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value}")


def coincidence_probability(
    signal_angle: float, idler_angle: float, v_hv: float = 1.0, v_da: float = 1.0
) -> float:
    """Probability that both photons of a |Phi-> pair pass their polarizers.

    Angles are polarizer orientations in degrees. ``v_hv`` and ``v_da`` are the
    correlation contrasts in the H/V and D/A bases; with both equal to one this
    is cos^2(signal + idler) / 2.
    """
    _check_visibility("v_hv", v_hv)
    _check_visibility("v_da", v_da)
    a = math.radians(2.0 * signal_angle)
    b = math.radians(2.0 * idler_angle)
    p = 0.25 * (1.0 + v_hv * math.cos(a) * math.cos(b) - v_da * math.sin(a) * math.sin(b))
    return min(max(p, 0.0), 1.0)


def joint_outcome_probabilities(
    analyzer: AnalyzerSetting, v_hv: float, v_da: float
) -> tuple[float, float, float, float]:
    """(pass/pass, signal only, idler only, neither) for one analyzer setting."""
    a, b = analyzer.signal_angle, analyzer.idler_angle
    return (
        coincidence_probability(a, b, v_hv, v_da),
        coincidence_probability(a, b + 90.0, v_hv, v_da),
        coincidence_probability(a + 90.0, b, v_hv, v_da),
        coincidence_probability(a + 90.0, b + 90.0, v_hv, v_da),
    )


def accidental_rate(s1: float, s2: float, window: float) -> float:
    """Poisson accidental coincidence rate for singles ``s1``, ``s2`` (1/s) and
    a window of full width ``window`` ns."""
    if s1 < 0 or s2 < 0 or window < 0:
        raise ParameterError("rates and window must be non-negative")
    return s1 * s2 * window * 1e-9


def dead_time_output_rate(rate: float, dead_time_ns: float) -> float:
    """Recorded rate of a non-paralyzable detector fed Poisson ``rate``."""
    return rate / (1.0 + rate * dead_time_ns * 1e-9)


def propagation_delay(fiber: FiberParams) -> float:
    """Group delay through the fiber in microseconds."""
    return fiber.length * 1e3 * fiber.group_index / SPEED_OF_LIGHT * 1e6


def dispersion_parameter(fiber: FiberParams, wavelength: float) -> float:
    """D(lambda) in ps/(nm km) from the four-term G.652 expression."""
    lam0 = fiber.zero_dispersion_wl
    return fiber.dispersion_slope / 4.0 * (wavelength - lam0**4 / wavelength**3)


def chromatic_broadening(fiber: FiberParams, center_wl: float, bandwidth_fwhm: float) -> float:
    """Temporal FWHM spread (ps) of a pulse of spectral width ``bandwidth_fwhm``.

    The first-order term |D| dl L vanishes at the zero-dispersion wavelength, so
    the second-order term S0 dl^2 L / 8 is added in quadrature.
    """
    if bandwidth_fwhm < 0:
        raise ParameterError("bandwidth must be non-negative")
    first = abs(dispersion_parameter(fiber, center_wl)) * bandwidth_fwhm * fiber.length
    second = fiber.dispersion_slope * bandwidth_fwhm**2 * fiber.length / 8.0
    return math.hypot(first, second)


def signal_wavelength(
    temperature: float,
    source: SourceParams,
    calibrated_range: tuple[float, float] = CALIBRATED_TEMPERATURE_RANGE,
) -> float:
    """Signal center wavelength (nm) at crystal temperature ``temperature`` (degC)."""
    lo, hi = calibrated_range
    if not lo <= temperature <= hi:
        warnings.warn(
            f"temperature {temperature} degC outside calibrated range {lo}-{hi} degC",
            RuntimeWarning,
            stacklevel=2,
        )
    return source.ref_wavelength + source.wl_temp_slope * (temperature - source.ref_temperature)


def gaussian_deconvolve(measured_fwhm: float, resolution_fwhm: float) -> float:
    """Remove a Gaussian instrument response from a measured Gaussian width."""
    if resolution_fwhm < 0:
        raise ParameterError("resolution must be non-negative")
    if measured_fwhm < resolution_fwhm:
        raise ParameterError(
            f"measured width {measured_fwhm} is narrower than the resolution {resolution_fwhm}"
        )
    return math.sqrt((measured_fwhm - resolution_fwhm) * (measured_fwhm + resolution_fwhm))


def bandwidth_to_frequency(delta_lambda: float, center_wl: float) -> float:
    """Convert a spectral width in nm at ``center_wl`` nm to GHz."""
    if delta_lambda < 0 or center_wl <= 0:
        raise ParameterError("bandwidth must be >= 0 and wavelength > 0")
    return SPEED_OF_LIGHT * (delta_lambda * 1e-9) / (center_wl * 1e-9) ** 2 / 1e9


def combined_fwhm(*fwhms: float) -> float:
    return math.sqrt(sum(f * f for f in fwhms))


def window_acceptance(
    jitter1_fwhm: float, jitter2_fwhm: float, pair_fwhm: float, window: float
) -> float:
    """Fraction of true pairs whose time difference falls inside the window.

    The difference is Gaussian with FWHM sqrt(j1^2 + j2^2 + pair^2) (all ps);
    ``window`` is the full width in ns, centered on the peak.
    """
    if window <= 0:
        raise ParameterError("window must be positive")
    sigma = combined_fwhm(jitter1_fwhm, jitter2_fwhm, pair_fwhm) / FWHM_PER_SIGMA
    if sigma == 0.0:
        return 1.0
    half = window * 1e3 / 2.0
    return math.erf(half / (sigma * math.sqrt(2.0)))


def signal_timing_fwhm(scenario: LinkScenario) -> float:
    """Signal-arm timing spread: detector jitter plus fiber dispersion (ps)."""
    disp = 0.0
    if scenario.fiber.length > 0:
        disp = chromatic_broadening(
            scenario.fiber,
            scenario.source.signal_center_wl,
            scenario.source.signal_bandwidth_fwhm,
        )
    return math.hypot(scenario.detector_signal.jitter_fwhm, disp)


def expected_rates(scenario: LinkScenario) -> RatePrediction:
    """Closed-form singles and coincidence rates for a scenario.

    Singles are reported after the non-paralyzable dead-time correction. True
    coincidences carry the window acceptance and both arms' live fractions.
    Accidentals are the product-formula rate for the singles that are not
    already part of an in-window true pair, which is what a one-to-one
    coincidence counter records on top of the true pairs.
    """
    src = scenario.source
    pairs = src.pair_rate
    eta_s = scenario.signal_efficiency
    eta_i = scenario.idler_efficiency
    if scenario.analyzer is None:
        p_joint, m_s, m_i = 1.0, 1.0, 1.0
    else:
        p_joint = coincidence_probability(
            scenario.analyzer.signal_angle,
            scenario.analyzer.idler_angle,
            src.intrinsic_v_hv,
            src.intrinsic_v_da,
        )
        m_s = m_i = 0.5  # marginal pass probability of a maximally entangled state

    det_s, det_i = scenario.detector_signal, scenario.detector_idler
    in_s = pairs * eta_s * m_s + det_s.dark_rate
    in_i = pairs * eta_i * m_i + det_i.dark_rate
    singles_s = dead_time_output_rate(in_s, det_s.dead_time)
    singles_i = dead_time_output_rate(in_i, det_i.dead_time)
    live_s = singles_s / in_s if in_s > 0 else 1.0
    live_i = singles_i / in_i if in_i > 0 else 1.0

    acceptance = window_acceptance(
        signal_timing_fwhm(scenario),
        det_i.jitter_fwhm,
        src.pair_correlation_fwhm,
        scenario.coincidence_window,
    )
    true = pairs * eta_s * eta_i * p_joint * acceptance * live_s * live_i
    acc = accidental_rate(
        max(singles_s - true, 0.0), max(singles_i - true, 0.0), scenario.coincidence_window
    )
    return RatePrediction(
        singles_signal=singles_s,
        singles_idler=singles_i,
        true_coincidences=true,
        accidental_coincidences=acc,
        total_coincidences=true + acc,
        window_acceptance=acceptance,
    )
