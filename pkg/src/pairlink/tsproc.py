"""Timestamp-stream I/O and coincidence logic.

Binary file layout (little endian)::

    magic  "PLNK"   4 bytes
    version u16     = 1
    channel u16
    count   u64
    count x u64     timestamps in ps, non-decreasing

The CSV variant holds a ``# channel=<id>`` header line followed by one
decimal picosecond timestamp per line.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict

from . import _kernels
from .errors import (
    HeaderError,
    MonotonicityError,
    NoCorrelationError,
    ParameterError,
    TruncatedError,
)
from .simkit import PS_PER_S, EventStream

MAGIC = b"PLNK"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype("<u8")


# --------------------------------------------------------------------------- I/O


def write_stream(stream: EventStream, path: str | os.PathLike) -> None:
    """Write ``stream`` as binary, or as CSV when the suffix is ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# channel={stream.channel_id}\n")
            if len(stream):
                np.savetxt(fh, stream.times, fmt="%d")
        return
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, stream.channel_id, len(stream)))
        fh.write(stream.times.astype(RECORD_DTYPE).tobytes())


def _check_order(times: np.ndarray) -> None:
    bad = _kernels.first_decrease(times)
    if bad >= 0:
        raise MonotonicityError(bad, f"timestamp decreases at record {bad}")


def _read_binary(path: Path) -> tuple[int, np.ndarray]:
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise HeaderError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, channel, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise HeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise HeaderError(f"{path}: unsupported version {version}")
    body = len(data) - HEADER.size
    if body < count * RECORD_DTYPE.itemsize:
        raise TruncatedError(
            f"{path}: header declares {count} records but only "
            f"{body // RECORD_DTYPE.itemsize} complete records are present"
        )
    if body > count * RECORD_DTYPE.itemsize:
        raise HeaderError(f"{path}: {body - count * 8} trailing bytes after the last record")
    raw = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    if count and raw.max() > np.iinfo(np.int64).max:
        raise HeaderError(f"{path}: timestamp beyond the 63-bit range")
    return channel, raw.astype(np.int64)


def _read_csv(path: Path) -> tuple[int, np.ndarray]:
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# channel="):
            raise HeaderError(f"{path}: expected '# channel=<id>' header line")
        try:
            channel = int(first.split("=", 1)[1])
        except ValueError as exc:
            raise HeaderError(f"{path}: bad channel id in header") from exc
        rows = [line.strip() for line in fh if line.strip()]
    try:
        times = np.array([int(r) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise TruncatedError(f"{path}: malformed record ({exc})") from exc
    return channel, times


def read_stream(path: str | os.PathLike, duration: int | None = None) -> EventStream:
    """Read a binary or CSV timestamp file.

    The formats carry no record length, so ``duration`` (ps) defaults to the
    last timestamp.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        channel, times = _read_csv(path)
    else:
        channel, times = _read_binary(path)
    _check_order(times)
    if duration is None:
        duration = int(times[-1]) if times.size else 0
    return EventStream(times, duration, channel)


# ------------------------------------------------------------------ coincidences


class CoincidenceResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    count: int
    rate: float
    window: float
    applied_offset: int
    duration_s: float
    accidental_rate: float | None = None
    accidental_displacement: float | None = None


def _times(x) -> np.ndarray:
    if isinstance(x, EventStream):
        return x.times
    t = np.ascontiguousarray(x, dtype=np.int64)
    _check_order(t)
    return t


def _duration_s(a, b) -> float:
    durations = [s.duration for s in (a, b) if isinstance(s, EventStream)]
    return min(durations) / PS_PER_S if durations else 0.0


def _window_ps(window: float) -> int:
    if window <= 0:
        raise ParameterError("coincidence window must be positive")
    return int(round(window * 1e3))


def find_coincidences(
    a, b, window: float, offset: int = 0, return_pairs: bool = False
) -> CoincidenceResult | tuple[CoincidenceResult, np.ndarray]:
    """Count events with |t_b - t_a - offset| <= window/2.

    Matching is greedy and one-to-one in time order: each event of ``a`` takes
    the earliest unused event of ``b`` inside its window. ``window`` is in ns,
    ``offset`` in ps. With ``return_pairs`` the (k, 2) index array of matches
    is returned as well.
    """
    ta, tb = _times(a), _times(b)
    w = _window_ps(window)
    offset = int(offset)
    dur = _duration_s(a, b)
    if return_pairs:
        ia, ib = _kernels.greedy_pairs(ta, tb, w, offset)
        count = int(ia.size)
    else:
        count = int(_kernels.greedy_count(ta, tb, w, offset))
    result = CoincidenceResult(
        count=count,
        rate=count / dur if dur > 0 else 0.0,
        window=window,
        applied_offset=offset,
        duration_s=dur,
    )
    if return_pairs:
        return result, np.column_stack([ia, ib])
    return result


def displaced_window_rate(
    a,
    b,
    window: float,
    offset: int = 0,
    displacement: float = 7.0,
    both_sides: bool = False,
) -> float:
    """Accidental-coincidence rate from a window of the same width displaced by
    ``displacement`` ns from the main one. ``both_sides`` averages +/-."""
    if abs(displacement) <= window:
        raise ParameterError(
            f"displacement {displacement} ns overlaps the {window} ns coincidence window"
        )
    shift = int(round(displacement * 1e3))
    rate = find_coincidences(a, b, window, int(offset) + shift).rate
    if both_sides:
        rate = 0.5 * (rate + find_coincidences(a, b, window, int(offset) - shift).rate)
    return rate


# -------------------------------------------------------------------- histograms


@dataclass(frozen=True)
class CorrelationHistogram:
    bin_width: int
    range: tuple[int, int]
    counts: np.ndarray
    total: int

    @property
    def edges(self) -> np.ndarray:
        lo = self.range[0]
        return lo + self.bin_width * np.arange(self.counts.size + 1, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.edges[:-1] + self.bin_width / 2.0

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("bin_center_ps,count\n")
            for c, n in zip(self.centers, self.counts):
                fh.write(f"{c:.1f},{int(n)}\n")


def correlation_histogram(
    a, b, bin_width: int, range: tuple[int, int], offset: int = 0
) -> CorrelationHistogram:
    """Histogram of all differences t_b - t_a - offset (ps) inside ``range``.

    Bins are half-open, starting at ``range[0]``; a partial bin at the top of
    the range is dropped.
    """
    bin_width = int(bin_width)
    lo, hi = int(range[0]), int(range[1])
    if bin_width <= 0:
        raise ParameterError("bin width must be positive")
    nbins = (hi - lo) // bin_width
    if nbins < 1:
        raise ParameterError("range must span at least one bin")
    counts = _kernels.difference_histogram(_times(a), _times(b), lo, bin_width, nbins, int(offset))
    return CorrelationHistogram(bin_width, (lo, lo + nbins * bin_width), counts, int(counts.sum()))


@dataclass(frozen=True)
class OffsetResult:
    offset: int
    score: float
    bin_width: int
    histogram: CorrelationHistogram


def _peak_score(counts: np.ndarray, peak: int) -> float:
    if counts.size < 2:
        return 0.0
    background = (counts.sum() - counts[peak]) / (counts.size - 1)
    return float(counts[peak] / max(background, 1.0))


def _centroid(ta, tb, center: int, half: int, bw: int) -> tuple[int, CorrelationHistogram]:
    """Background-subtracted centroid of the peak within +/- half/2 of center,
    with the background taken from the flanks out to +/- half."""
    hist = correlation_histogram(ta, tb, bw, (center - half, center + half + bw))
    x = hist.centers
    y = hist.counts.astype(float)
    inner = np.abs(x - center) <= half / 2
    bg = y[~inner].mean() if np.any(~inner) else 0.0
    excess = np.clip(y[inner] - bg, 0.0, None)
    if excess.sum() <= 0:
        return center, hist
    return int(round(np.dot(excess, x[inner]) / excess.sum())), hist


def find_offset(
    a,
    b,
    search_span: float = 1e-3,
    coarse_bin: float = 1.0,
    threshold: float = 5.0,
    final_bin: int = 10,
    max_coarse_pairs: int = 30_000_000,
    min_background: float = 20.0,
) -> OffsetResult:
    """Locate the t_b - t_a correlation peak by a coarse-to-fine histogram search.

    The coarse pass covers +/- ``search_span`` s at ``coarse_bin`` ns, using a
    leading slice of ``a`` short enough to keep the number of pair differences
    near ``max_coarse_pairs``. Each refinement zooms on the peak with bins ten
    times narrower until they are at most ``final_bin`` ps; the returned offset
    is the background-subtracted centroid of the peak, measured in a window
    one coarse bin wide.

    Sparse coarse histograms are merged until the mean background per bin
    reaches ``min_background`` counts; otherwise the largest of millions of
    near-empty bins would pass for a peak.
    """
    ta, tb = _times(a), _times(b)
    if ta.size == 0 or tb.size == 0:
        raise NoCorrelationError(0.0, threshold)
    span = int(round(search_span * PS_PER_S))
    bw = max(int(round(coarse_bin * 1e3)), 1)

    # coarse pass on a leading slice of a
    t_lo, t_hi = min(ta[0], tb[0]), max(ta[-1], tb[-1])
    length = max(t_hi - t_lo, 1)
    rate_b = tb.size / length
    per_a = max(rate_b * 2 * span, 1e-12)
    n_use = int(min(ta.size, max(1000, max_coarse_pairs / per_a)))
    hist = correlation_histogram(ta[:n_use], tb, bw, (-span, span + bw))
    mean = hist.total / hist.counts.size
    if 0 < mean < min_background:
        factor = int(np.ceil(min_background / mean))
        nb = -(-hist.counts.size // factor)
        merged = np.zeros(nb * factor, dtype=hist.counts.dtype)
        merged[: hist.counts.size] = hist.counts
        bw *= factor
        counts = merged.reshape(nb, factor).sum(axis=1)
        hist = CorrelationHistogram(bw, (-span, -span + nb * bw), counts, hist.total)
    peak = int(np.argmax(hist.counts))
    score = _peak_score(hist.counts, peak)
    if score < threshold:
        raise NoCorrelationError(score, threshold)
    center = int(hist.edges[peak]) + bw // 2
    coarse_width = bw

    while bw > final_bin:
        prev = bw
        bw = max(prev // 10, final_bin)
        half = 2 * prev
        hist = correlation_histogram(ta, tb, bw, (center - half, center + half + bw))
        center = int(round(hist.centers[int(np.argmax(hist.counts))]))
    for _ in range(2):
        center, hist = _centroid(ta, tb, center, coarse_width, bw)
    return OffsetResult(offset=center, score=score, bin_width=bw, histogram=hist)
