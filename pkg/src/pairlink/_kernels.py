"""Compiled inner loops over sorted int64 picosecond timestamps."""

import numpy as np
from numba import njit


@njit(cache=True)
def dead_time_mask(times, dead_ps):
    """Keep-mask for a non-paralyzable detector: an event is recorded only if
    at least ``dead_ps`` has passed since the previous recorded event."""
    n = times.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    keep[0] = True
    last = times[0]
    for i in range(1, n):
        if times[i] - last >= dead_ps:
            keep[i] = True
            last = times[i]
    return keep


@njit(cache=True)
def first_decrease(times):
    for i in range(1, times.shape[0]):
        if times[i] < times[i - 1]:
            return i
    return -1


@njit(cache=True)
def greedy_count(a, b, window_ps, offset):
    """Number of greedy one-to-one matches with 2*|t_b - t_a - offset| <= window_ps."""
    n = a.shape[0]
    m = b.shape[0]
    j = 0
    count = 0
    for i in range(n):
        ta = a[i] + offset
        while j < m and 2 * (b[j] - ta) < -window_ps:
            j += 1
        if j < m and 2 * (b[j] - ta) <= window_ps:
            count += 1
            j += 1
    return count


@njit(cache=True)
def greedy_pairs(a, b, window_ps, offset):
    n = a.shape[0]
    m = b.shape[0]
    out_a = np.empty(min(n, m), dtype=np.int64)
    out_b = np.empty(min(n, m), dtype=np.int64)
    j = 0
    count = 0
    for i in range(n):
        ta = a[i] + offset
        while j < m and 2 * (b[j] - ta) < -window_ps:
            j += 1
        if j < m and 2 * (b[j] - ta) <= window_ps:
            out_a[count] = i
            out_b[count] = j
            count += 1
            j += 1
    return out_a[:count], out_b[:count]


@njit(cache=True)
def difference_histogram(a, b, lo, bin_width, nbins, offset):
    """Histogram of every t_b - t_a - offset in [lo, lo + nbins*bin_width)."""
    counts = np.zeros(nbins, dtype=np.int64)
    hi = lo + nbins * bin_width
    m = b.shape[0]
    j0 = 0
    for i in range(a.shape[0]):
        base = a[i] + offset
        while j0 < m and b[j0] - base < lo:
            j0 += 1
        j = j0
        while j < m:
            d = b[j] - base
            if d >= hi:
                break
            counts[(d - lo) // bin_width] += 1
            j += 1
    return counts
