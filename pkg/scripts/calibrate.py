"""Fit the 50 km fixture parameters to the published power-sweep numbers.

Shared across the four runs: brightness, idler path efficiency, signal dark
rate, effective Si dead time, intrinsic visibilities. Per run: signal path
efficiency (fiber coupling is re-optimised between runs). The published
observables are matched with the noiseless analytic fringe scan.

The two local fixtures are square solves: brightness, path efficiencies and
(at 380 uW) the intrinsic visibilities against the published rates,
heralding efficiencies and per-basis visibilities.

    python scripts/calibrate.py [50km|local|all]
"""

import argparse

import numpy as np
from scipy.optimize import brentq, least_squares, minimize

from pairlink.analysis import default_hwp_angles, fringe_scan, heralding_efficiency
from pairlink.config import load_fixture
from pairlink.model import (
    DetectorParams,
    FiberParams,
    LinkScenario,
    SourceParams,
    AnalyzerSetting,
    expected_rates,
)

PUMPS = [2.0, 6.0, 11.0, 15.0]
PAIR_RATES = [1606.0, 4686.0, 8033.0, 10033.0]
V_RAW = [0.965, 0.954, 0.945, 0.925]
V_RAW_15 = (0.940, 0.910)
V_CORR_15 = 0.971
SI_RATE_15 = 3.8e6
HWP = default_hwp_angles()


def scenario(pump, brightness, path_s, path_i, dark_s, dead_i, v_hv, v_da):
    return LinkScenario(
        source=SourceParams(
            brightness=brightness, pump_power=pump, intrinsic_v_hv=v_hv, intrinsic_v_da=v_da
        ),
        fiber=FiberParams(length=50.0, attenuation=0.34),
        detector_signal=DetectorParams(
            efficiency=0.15, dark_rate=dark_s, jitter_fwhm=250.0, dead_time=1000.0
        ),
        detector_idler=DetectorParams(
            efficiency=0.60, dark_rate=300.0, jitter_fwhm=500.0, dead_time=dead_i,
            max_count_rate=3.0e7,
        ),
        path_efficiency_signal=path_s,
        path_efficiency_idler=path_i,
        coincidence_window=1.25,
    )


def idler_path_for_rate(brightness, dead_i):
    """Idler path efficiency giving SI_RATE_15 recorded singles behind a polarizer."""
    def f(path_i):
        scn = scenario(15.0, brightness, 0.5, path_i, 0.0, dead_i, 1, 1).with_analyzer(
            AnalyzerSetting()
        )
        return expected_rates(scn).singles_idler - SI_RATE_15
    return brentq(f, 1e-4, 1.0)


def solve(params):
    brightness, dark_s, dead_i, v_hv, v_da = params
    path_i = idler_path_for_rate(brightness, dead_i)
    rows = []
    for pump, target in zip(PUMPS, PAIR_RATES):
        def g(path_s):
            scn = scenario(pump, brightness, path_s, path_i, dark_s, dead_i, v_hv, v_da)
            return fringe_scan(scn, HWP, 1.0, 0, mode="analytic").pair_rate - target
        path_s = brentq(g, 1e-3, 1.0)
        scn = scenario(pump, brightness, path_s, path_i, dark_s, dead_i, v_hv, v_da)
        scan = fringe_scan(scn, HWP, 1.0, 0, mode="analytic")
        live = (1 - scan.singles_signal * 1e-6) * (1 - scan.singles_idler * dead_i * 1e-9)
        rows.append((pump, path_s, scan, scan.pair_rate / live / pump))
    return path_i, rows


def objective(params):
    brightness, dark_s, dead_i, v_hv, v_da = params
    if not (0 < v_hv <= 1 and 0 < v_da <= 1 and dark_s >= 0 and dead_i > 0):
        return 1e9
    try:
        _, rows = solve(params)
    except ValueError:
        return 1e9
    cost = 0.0
    for (pump, path_s, scan, lin), v in zip(rows, V_RAW):
        cost += ((scan.visibility_avg_raw - v) / 0.002) ** 2
    scan15 = rows[-1][2]
    b = {x.basis: x for x in scan15.bases}
    cost += ((b["HV"].visibility_raw - V_RAW_15[0]) / 0.002) ** 2
    cost += ((b["DA"].visibility_raw - V_RAW_15[1]) / 0.002) ** 2
    cost += ((scan15.visibility_avg_corr - V_CORR_15) / 0.002) ** 2
    lin = np.array([r[3] for r in rows])
    cost += (((lin / lin.mean()) - 1) / 0.01).__pow__(2).sum()
    return cost


def heralding(scn):
    p = expected_rates(scn)
    return heralding_efficiency(p.total_coincidences, p.singles_signal, p.singles_idler)


def local_380():
    """Symmetric path efficiency, brightness and visibilities at 380 uW."""
    base = load_fixture("paper_local_380uW").scenario()

    def build(x):
        b, path, v_hv, v_da = x
        src = base.source.model_copy(
            update={"brightness": b * 1e6, "intrinsic_v_hv": min(v_hv, 1.0),
                    "intrinsic_v_da": min(v_da, 1.0)}
        )
        return base.model_copy(
            update={"source": src, "path_efficiency_signal": path, "path_efficiency_idler": path}
        )

    def residual(x):
        scn = build(x)
        scan = fringe_scan(scn, HWP, 1.0, 0, mode="analytic")
        v = {k.basis: k.visibility_raw for k in scan.bases}
        return [heralding(scn) / 0.18 - 1, scan.pair_rate / 13012 - 1,
                v["HV"] - 0.997, v["DA"] - 0.955]

    x = least_squares(residual, [1.0, 0.6, 0.99, 0.95], xtol=1e-12).x
    print("380 uW: brightness %.7g path %.6f v_hv %.6f v_da %.6f" % (x[0] * 1e6, *x[1:]))


def local_100():
    """Brightness and both path efficiencies without the displacers at 100 uW."""
    base = load_fixture("paper_local_100uW_nodisplacer").scenario()

    def build(x):
        b, ps, pi = x
        return base.model_copy(update={
            "source": base.source.model_copy(update={"brightness": b * 1e6}),
            "path_efficiency_signal": ps,
            "path_efficiency_idler": pi,
        })

    def residual(x):
        scn = build(x)
        p = expected_rates(scn)
        return [p.total_coincidences / 10500 - 1, p.singles_idler / 75000 - 1,
                heralding(scn) / 0.21 - 1]

    x = least_squares(residual, [2.0, 0.9, 0.5], bounds=([0.1, 0, 0], [10, 1, 1]),
                      xtol=1e-12).x
    print("100 uW: brightness %.7g path_s %.6f path_i %.6f" % (x[0] * 1e6, *x[1:]))


def fifty_km():
    x0 = [2.5e6, 500.0, 40.0, 0.985, 0.955]
    scale = np.array([1e6, 1e3, 10.0, 0.01, 0.01])
    res = minimize(lambda z: objective(z * scale), np.array(x0) / scale, method="Nelder-Mead",
                   options={"xatol": 1e-4, "fatol": 1e-3, "maxiter": 2000})
    params = res.x * scale
    path_i, rows = solve(params)
    print("cost", res.fun)
    print("brightness %.6g dark_s %.6g dead_i %.6g v_hv %.6g v_da %.6g path_i %.6g"
          % (*params, path_i))
    for pump, path_s, scan, lin in rows:
        b = {x.basis: x for x in scan.bases}
        print(f"{pump:5.1f} mW path_s={path_s:.6f} C={scan.pair_rate:9.1f} "
              f"Vhv={b['HV'].visibility_raw:.4f} Vda={b['DA'].visibility_raw:.4f} "
              f"Vraw={scan.visibility_avg_raw:.4f} Vcorr={scan.visibility_avg_corr:.4f} "
              f"S_s={scan.singles_signal:.0f} S_i={scan.singles_idler:.0f} lin={lin:.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("which", nargs="?", choices=["50km", "local", "all"], default="all")
    which = ap.parse_args().which
    if which in ("local", "all"):
        local_380()
        local_100()
    if which in ("50km", "all"):
        fifty_km()


if __name__ == "__main__":
    main()
