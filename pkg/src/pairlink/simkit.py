"""Monte Carlo synthesis of photodetection timestamp streams.

Timestamps are int64 picoseconds. Every random draw comes from a Philox
generator keyed on ``(seed, stage, channel[, chunk])`` so adding, removing or
reordering stages never perturbs the draws of any other stage.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict

from . import _kernels
from .errors import CapacityError, MonotonicityError, ParameterError, TimestampOverflowError
from .model import (
    FWHM_PER_SIGMA,
    DetectorParams,
    LinkScenario,
    chromatic_broadening,
    joint_outcome_probabilities,
    propagation_delay,
)

PS_PER_S = 10**12
INT64_MAX = np.iinfo(np.int64).max
DEFAULT_MAX_EVENTS = 50_000_000

SIGNAL_CHANNEL = 1
IDLER_CHANNEL = 2

NOISE_ID = -1  # pair id of dark counts and afterpulses


class Stage(enum.IntEnum):
    EMISSION = 1
    PAIR_OFFSET = 2
    ANALYZER = 3
    LOSS = 4
    DETECTOR_EFFICIENCY = 5
    JITTER = 6
    DARK = 7
    AFTERPULSE = 8
    DISPERSION = 9
    COUNT_CHAIN = 10
    MARKS = 11
    THIN = 12


def stage_rng(seed: int, stage: int, channel: int = 0, chunk: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(int(stage), int(channel), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-run (sweep row, scan point, ...)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class EventStream:
    """Sorted detection timestamps of one channel.

    ``pair_ids`` is optional ground truth: the index of the emitted pair each
    event came from, or -1 for dark counts and afterpulses.
    """

    times: np.ndarray
    duration: int
    channel_id: int = 0
    pair_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=np.int64)
        if times.ndim != 1:
            raise ParameterError("times must be one-dimensional")
        bad = _kernels.first_decrease(times)
        if bad >= 0:
            raise MonotonicityError(bad)
        duration = int(self.duration)
        if times.size and (times[0] < 0 or times[-1] > duration):
            raise ParameterError("timestamps must lie in [0, duration]")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "duration", duration)
        if self.pair_ids is not None:
            ids = np.ascontiguousarray(self.pair_ids, dtype=np.int64)
            if ids.shape != times.shape:
                raise ParameterError("pair_ids must match times in length")
            ids.setflags(write=False)
            object.__setattr__(self, "pair_ids", ids)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.channel_id == other.channel_id and np.array_equal(self.times, other.times)

    __hash__ = None

    @property
    def duration_s(self) -> float:
        return self.duration / PS_PER_S

    @property
    def rate(self) -> float:
        """Events per second."""
        return len(self) / self.duration_s if self.duration else 0.0

    @property
    def origin(self) -> np.ndarray | None:
        """Per-event label, "pair" or "dark"."""
        if self.pair_ids is None:
            return None
        return np.where(self.pair_ids >= 0, "pair", "dark")

    def _select(self, mask: np.ndarray) -> "EventStream":
        ids = None if self.pair_ids is None else self.pair_ids[mask]
        return EventStream(self.times[mask], self.duration, self.channel_id, ids)


class ArmReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    after_analyzer: int
    after_loss: int
    after_detector_efficiency: int
    recorded_photons: int
    noise_events: int
    final_events: int


class SimulationReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int
    method: str
    duration_s: float
    generated_pairs: int
    signal: ArmReport
    idler: ArmReport
    signal_delay_ps: int
    coincident_truth_pairs: int

    def is_monotone(self) -> bool:
        for arm in (self.signal, self.idler):
            chain = [
                self.generated_pairs,
                arm.after_analyzer,
                arm.after_loss,
                arm.after_detector_efficiency,
                arm.recorded_photons,
            ]
            if any(b > a for a, b in zip(chain, chain[1:])):
                return False
        return True


def _sorted_uniform_times(rng: np.random.Generator, n: int, duration_ps: int) -> np.ndarray:
    """``n`` sorted uniform integer times on [0, duration_ps).

    Normalised cumulative exponential gaps give the uniform order statistics
    without an O(n log n) sort.
    """
    if n == 0:
        return np.empty(0, dtype=np.int64)
    gaps = rng.standard_exponential(n + 1)
    cum = np.cumsum(gaps)
    t = np.floor(cum[:-1] * (duration_ps / cum[-1])).astype(np.int64)
    np.minimum(t, duration_ps - 1, out=t)
    return t


def _check_capacity(n: int, max_events: int, what: str) -> None:
    if n > max_events:
        raise CapacityError(
            f"{what} needs {n} events, above the budget of {max_events}; "
            "shorten the duration or raise max_events"
        )


def _gaussian_offsets(rng: np.random.Generator, n: int, fwhm_ps: float) -> np.ndarray | None:
    if fwhm_ps <= 0 or n == 0:
        return None
    return np.rint(rng.normal(0.0, fwhm_ps / FWHM_PER_SIGMA, n)).astype(np.int64)


def _rebuild(
    times: np.ndarray, ids: np.ndarray | None, duration: int, channel: int
) -> EventStream:
    """Drop out-of-range events, stable-sort, and wrap."""
    inside = (times >= 0) & (times <= duration)
    if not inside.all():
        times = times[inside]
        ids = None if ids is None else ids[inside]
    order = np.argsort(times, kind="stable")
    times = times[order]
    ids = None if ids is None else ids[order]
    return EventStream(times, duration, channel, ids)


def add_jitter(stream: EventStream, fwhm_ps: float, rng: np.random.Generator) -> EventStream:
    """Add Gaussian timing noise of the given FWHM to every event."""
    offsets = _gaussian_offsets(rng, len(stream), fwhm_ps)
    if offsets is None:
        return stream
    return _rebuild(stream.times + offsets, stream.pair_ids, stream.duration, stream.channel_id)


def synthesize_pairs(
    scenario: LinkScenario,
    duration: float,
    seed: int,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> tuple[EventStream, EventStream, np.ndarray]:
    """Emit photon pairs as a homogeneous Poisson process.

    Returns the signal and idler truth streams plus an (k, 2) array of
    (signal index, idler index) for every pair present in both streams. The
    signal photon trails its idler by a Gaussian offset of FWHM
    ``pair_correlation_fwhm``.
    """
    if duration <= 0:
        raise ParameterError("duration must be positive")
    duration_ps = int(round(duration * PS_PER_S))
    mean = scenario.source.pair_rate * duration
    rng = stage_rng(seed, Stage.EMISSION)
    n = int(rng.poisson(mean)) if mean > 0 else 0
    _check_capacity(n, max_events, "pair synthesis")
    emission = _sorted_uniform_times(rng, n, duration_ps)
    ids = np.arange(n, dtype=np.int64)
    idler = EventStream(emission, duration_ps, IDLER_CHANNEL, ids)

    offsets = _gaussian_offsets(
        stage_rng(seed, Stage.PAIR_OFFSET, SIGNAL_CHANNEL), n, scenario.source.pair_correlation_fwhm
    )
    sig_times = emission if offsets is None else emission + offsets
    signal = _rebuild(sig_times, ids, duration_ps, SIGNAL_CHANNEL)

    # signal ids are a subset of 0..n-1 (edge pairs may fall outside the window)
    truth = np.column_stack([np.arange(len(signal)), signal.pair_ids])
    return signal, idler, truth


def thin(
    stream: EventStream, survival_p: float, seed: int, stage: int = Stage.THIN
) -> EventStream:
    """Keep each event independently with probability ``survival_p``."""
    if not 0.0 <= survival_p <= 1.0:
        raise ParameterError(f"survival probability must be in [0, 1], got {survival_p}")
    if survival_p == 1.0:
        return stream
    rng = stage_rng(seed, stage, stream.channel_id)
    keep = rng.random(len(stream)) < survival_p
    return stream._select(keep)


def _dark_counts(rng: np.random.Generator, rate: float, duration_ps: int) -> np.ndarray:
    mean = rate * duration_ps / PS_PER_S
    n = int(rng.poisson(mean)) if mean > 0 else 0
    return _sorted_uniform_times(rng, n, duration_ps)


def _merge_noise(stream: EventStream, noise: np.ndarray) -> EventStream:
    if noise.size == 0:
        return stream
    times = np.concatenate([stream.times, noise])
    ids = None
    if stream.pair_ids is not None:
        ids = np.concatenate([stream.pair_ids, np.full(noise.size, NOISE_ID, dtype=np.int64)])
    return _rebuild(times, ids, stream.duration, stream.channel_id)


def _apply_dead_time(stream: EventStream, dead_time_ns: float) -> EventStream:
    dead_ps = int(round(dead_time_ns * 1e3))
    if dead_ps <= 0 or len(stream) < 2:
        return stream
    return stream._select(_kernels.dead_time_mask(stream.times, dead_ps))


def apply_detector(
    stream: EventStream,
    det: DetectorParams,
    duration: float | None = None,
    seed: int = 0,
) -> EventStream:
    """Run photons through a detector model.

    Efficiency thinning, Gaussian jitter, a Poisson dark-count stream over the
    whole record, then a non-paralyzable dead-time filter. Optional
    afterpulses follow each recorded event with probability
    ``afterpulse_probability`` after the dead time plus an exponential delay.
    ``duration`` (s) extends the record length for dark counts.
    """
    if duration is not None:
        duration_ps = int(round(duration * PS_PER_S))
        if duration_ps < stream.duration:
            raise ParameterError("duration may not cut the stream short")
        stream = EventStream(stream.times, duration_ps, stream.channel_id, stream.pair_ids)
    ch = stream.channel_id
    out = thin(stream, det.efficiency, seed, Stage.DETECTOR_EFFICIENCY)
    out = add_jitter(out, det.jitter_fwhm, stage_rng(seed, Stage.JITTER, ch))
    out = _merge_noise(out, _dark_counts(stage_rng(seed, Stage.DARK, ch), det.dark_rate, out.duration))
    out = _apply_dead_time(out, det.dead_time)
    if det.afterpulse_probability > 0 and len(out):
        rng = stage_rng(seed, Stage.AFTERPULSE, ch)
        parents = out.times[rng.random(len(out)) < det.afterpulse_probability]
        delay = det.dead_time * 1e3 + rng.exponential(det.afterpulse_delay * 1e3, parents.size)
        pulses = parents + np.rint(delay).astype(np.int64)
        out = _merge_noise(out, pulses[pulses <= out.duration])
        out = _apply_dead_time(out, det.dead_time)
    return out


def delay_stream(stream: EventStream, delay: int) -> EventStream:
    """Shift every timestamp by ``delay`` ps and extend the duration to match."""
    delay = int(delay)
    if delay < 0:
        raise ParameterError("delay must be non-negative")
    if stream.duration > INT64_MAX - delay:
        raise TimestampOverflowError(f"delay of {delay} ps overflows the 64-bit clock")
    return EventStream(stream.times + delay, stream.duration + delay, stream.channel_id, stream.pair_ids)


def _signal_channel_effects(
    signal: EventStream, scenario: LinkScenario, seed: int
) -> tuple[EventStream, int]:
    """Fiber delay and chromatic broadening on the signal arm."""
    fiber = scenario.fiber
    delay_ps = int(round(propagation_delay(fiber) * 1e6))
    if fiber.length > 0:
        signal = delay_stream(signal, delay_ps)
        spread = chromatic_broadening(
            fiber, scenario.source.signal_center_wl, scenario.source.signal_bandwidth_fwhm
        )
        signal = add_jitter(signal, spread, stage_rng(seed, Stage.DISPERSION, SIGNAL_CHANNEL))
    return signal, delay_ps


def _count_truth_pairs(signal: EventStream, idler: EventStream) -> int:
    s = signal.pair_ids[signal.pair_ids >= 0]
    i = idler.pair_ids[idler.pair_ids >= 0]
    return int(np.intersect1d(s, i, assume_unique=True).size)


def _joint_probabilities(scenario: LinkScenario) -> np.ndarray:
    if scenario.analyzer is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    q = np.array(
        joint_outcome_probabilities(
            scenario.analyzer,
            scenario.source.intrinsic_v_hv,
            scenario.source.intrinsic_v_da,
        )
    )
    return q / q.sum()


def _simulate_chain(scenario, duration, seed, max_events):
    signal, idler, _ = synthesize_pairs(scenario, duration, seed, max_events)
    n = len(idler)

    q = _joint_probabilities(scenario)
    outcome = stage_rng(seed, Stage.ANALYZER).choice(4, size=n, p=q)
    sig_pass = (outcome == 0) | (outcome == 1)
    idl_pass = (outcome == 0) | (outcome == 2)
    signal = signal._select(sig_pass[signal.pair_ids])
    idler = idler._select(idl_pass[idler.pair_ids])
    counts = {"s_analyzer": len(signal), "i_analyzer": len(idler)}

    signal = thin(signal, scenario.path_efficiency_signal * scenario.fiber.transmission, seed, Stage.LOSS)
    idler = thin(idler, scenario.path_efficiency_idler, seed, Stage.LOSS)
    counts["s_loss"], counts["i_loss"] = len(signal), len(idler)

    signal = thin(signal, scenario.detector_signal.efficiency, seed, Stage.DETECTOR_EFFICIENCY)
    idler = thin(idler, scenario.detector_idler.efficiency, seed, Stage.DETECTOR_EFFICIENCY)
    counts["s_det"], counts["i_det"] = len(signal), len(idler)
    return n, signal, idler, counts


def _simulate_marked(scenario, duration, seed, max_events):
    """Sample only pairs that leave at least one photon at a detector.

    Marking a Poisson process with independent per-pair fates and keeping a
    subset of marks gives again a Poisson process, so drawing the per-stage
    counts hierarchically and then placing only the survivors in time has
    exactly the same law as running every emitted pair through the chain.
    """
    rng = stage_rng(seed, Stage.COUNT_CHAIN)
    duration_ps = int(round(duration * PS_PER_S))
    mean = scenario.source.pair_rate * duration
    n_gen = int(rng.poisson(mean)) if mean > 0 else 0

    q = _joint_probabilities(scenario)
    n11, n10, n01, _ = rng.multinomial(n_gen, q)
    loss_s = scenario.path_efficiency_signal * scenario.fiber.transmission
    loss_i = scenario.path_efficiency_idler
    eff_s = scenario.detector_signal.efficiency
    eff_i = scenario.detector_idler.efficiency

    # signal arm, split by analyzer group
    ls11 = rng.binomial(n11, loss_s)
    ls10 = rng.binomial(n10, loss_s)
    es11 = rng.binomial(ls11, eff_s)
    es10 = rng.binomial(ls10, eff_s)
    # idler arm; within group 11 split by whether the signal survived
    li_a = rng.binomial(es11, loss_i)
    li_b = rng.binomial(n11 - es11, loss_i)
    li01 = rng.binomial(n01, loss_i)
    both = rng.binomial(li_a, eff_i)
    ei_b = rng.binomial(li_b, eff_i)
    ei01 = rng.binomial(li01, eff_i)

    n_s_only = es11 - both + es10
    n_i_only = ei_b + ei01
    n_any = both + n_s_only + n_i_only
    _check_capacity(n_any, max_events, "link simulation")

    emission = _sorted_uniform_times(stage_rng(seed, Stage.EMISSION), n_any, duration_ps)
    marks = np.repeat(np.array([0, 1, 2], dtype=np.int8), [both, n_s_only, n_i_only])
    marks = stage_rng(seed, Stage.MARKS).permutation(marks)
    ids = np.arange(n_any, dtype=np.int64)

    sig_sel = marks != 2
    idl_sel = marks != 1
    idler = EventStream(emission[idl_sel], duration_ps, IDLER_CHANNEL, ids[idl_sel])
    sig_ids = ids[sig_sel]
    offsets = _gaussian_offsets(
        stage_rng(seed, Stage.PAIR_OFFSET, SIGNAL_CHANNEL),
        sig_ids.size,
        scenario.source.pair_correlation_fwhm,
    )
    sig_times = emission[sig_sel] if offsets is None else emission[sig_sel] + offsets
    signal = _rebuild(sig_times, sig_ids, duration_ps, SIGNAL_CHANNEL)

    counts = {
        "s_analyzer": int(n11 + n10),
        "i_analyzer": int(n11 + n01),
        "s_loss": int(ls11 + ls10),
        "i_loss": int(li_a + li_b + li01),
        "s_det": int(es11 + es10),
        "i_det": int(both + ei_b + ei01),
    }
    return n_gen, signal, idler, counts


def simulate_link(
    scenario: LinkScenario,
    duration: float,
    seed: int,
    method: str = "marked",
    max_events: int = DEFAULT_MAX_EVENTS,
) -> tuple[EventStream, EventStream, SimulationReport]:
    """Simulate ``duration`` seconds of the full link.

    ``method="chain"`` pushes every emitted pair through each stage in turn;
    ``method="marked"`` (default) samples the same process directly from the
    per-stage survivor counts and is much cheaper when most pairs are lost.
    Both return the recorded signal and idler streams with ground-truth pair
    ids and a per-stage report.
    """
    if duration <= 0:
        raise ParameterError("duration must be positive")
    if method == "chain":
        n_gen, signal, idler, counts = _simulate_chain(scenario, duration, seed, max_events)
    elif method == "marked":
        n_gen, signal, idler, counts = _simulate_marked(scenario, duration, seed, max_events)
    else:
        raise ParameterError(f"unknown simulation method {method!r}")

    signal, delay_ps = _signal_channel_effects(signal, scenario, seed)
    det_s = scenario.detector_signal.model_copy(update={"efficiency": 1.0})
    det_i = scenario.detector_idler.model_copy(update={"efficiency": 1.0})
    signal = apply_detector(signal, det_s, seed=seed)
    idler = apply_detector(idler, det_i, seed=seed)

    def arm(stream: EventStream, prefix: str) -> ArmReport:
        noise = int(np.count_nonzero(stream.pair_ids < 0))
        return ArmReport(
            after_analyzer=counts[f"{prefix}_analyzer"],
            after_loss=counts[f"{prefix}_loss"],
            after_detector_efficiency=counts[f"{prefix}_det"],
            recorded_photons=len(stream) - noise,
            noise_events=noise,
            final_events=len(stream),
        )

    report = SimulationReport(
        seed=seed,
        method=method,
        duration_s=duration,
        generated_pairs=n_gen,
        signal=arm(signal, "s"),
        idler=arm(idler, "i"),
        signal_delay_ps=delay_ps if scenario.fiber.length > 0 else 0,
        coincident_truth_pairs=_count_truth_pairs(signal, idler),
    )
    return signal, idler, report
