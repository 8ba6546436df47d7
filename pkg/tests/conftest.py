import numpy as np
import pytest

from pairlink.model import DetectorParams, LinkScenario, SourceParams


def brute_force_greedy(a, b, window_ps, offset=0):
    """O(n m) reference matcher: each a event, in time order, takes the
    earliest unused b event with 2|t_b - t_a - offset| <= window_ps."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    used = np.zeros(b.size, dtype=bool)
    count = 0
    for t in a:
        ok = ~used & (2 * np.abs(b - t - offset) <= window_ps)
        hit = np.flatnonzero(ok)
        if hit.size:
            used[hit[0]] = True
            count += 1
    return count


def brute_force_differences(a, b, lo, hi, offset=0):
    d = np.subtract.outer(np.asarray(b), np.asarray(a)).ravel() - offset
    return int(np.count_nonzero((d >= lo) & (d < hi)))


def random_sorted(rng, n, span):
    return np.sort(rng.integers(0, span, n)).astype(np.int64)


def ideal_scenario(pump=0.1, **kw):
    """Lossless, noiseless link with only the two detector efficiencies."""
    base = dict(
        source=SourceParams(brightness=1e6, pump_power=pump),
        detector_signal=DetectorParams(efficiency=0.15),
        detector_idler=DetectorParams(efficiency=0.60),
    )
    base.update(kw)
    return LinkScenario(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
