"""Command-line entry point: ``pairlink <subcommand> ...``.

Exit codes: 0 ok, 2 configuration or argument error, 3 runtime error,
4 no correlation peak found. JSON results go to stdout and, for commands that
take a config, into the output directory as well. The output directory is
``--output-dir``, else ``run.output_dir`` from the config, else
``$PAIRLINK_OUTPUT_DIR``, else the current directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from pydantic import BaseModel, ConfigDict

from . import __version__
from .analysis import (
    FringeScan,
    KeyRateEstimate,
    SweepSummary,
    bbm92_key_rate,
    fringe_scan,
    heralding_efficiency,
    power_sweep,
    write_scan_csv,
    write_sweep_csv,
)
from .config import OUTPUT_DIR_ENV, ScenarioConfig, load_config
from .errors import ConfigError, NoCorrelationError, PairlinkError, ParameterError
from .model import RatePrediction, expected_rates
from .simkit import SimulationReport, simulate_link
from .tsproc import (
    CoincidenceResult,
    displaced_window_rate,
    find_coincidences,
    find_offset,
    read_stream,
    write_stream,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_NO_CORRELATION = 4


class _Report(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PredictReport(_Report):
    prediction: RatePrediction
    heralding_efficiency: float | None


class OffsetReport(_Report):
    offset_ps: int
    score: float
    bin_width_ps: int
    histogram_csv: str | None = None


class SimulateReport(_Report):
    signal_file: str
    idler_file: str
    report: SimulationReport


# name of the published schema file -> model of the JSON it describes
SCHEMAS = {
    "simulate": SimulateReport,
    "coincide": CoincidenceResult,
    "scan_delay": OffsetReport,
    "visibility": FringeScan,
    "keyrate": KeyRateEstimate,
    "predict": PredictReport,
    "sweep": SweepSummary,
}


class _UsageError(Exception):
    """Bad command-line arguments; exit code 2."""


def _dump(model: BaseModel) -> str:
    return json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _emit(model: BaseModel, path: Path | None = None) -> None:
    text = _dump(model)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    sys.stdout.write(text)


def _out_dir(args, cfg: ScenarioConfig | None = None) -> Path:
    if cfg is not None:
        out = cfg.output_dir(args.output_dir)
    else:
        out = Path(args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": args.seed})})
    return cfg


# ------------------------------------------------------------------ subcommands


def cmd_simulate(args) -> int:
    cfg = _config(args)
    duration = args.duration if args.duration is not None else cfg.run.duration_s
    out = _out_dir(args, cfg)
    signal, idler, report = simulate_link(cfg.scenario(), duration, cfg.run.seed, cfg.run.method)
    suffix = ".csv" if args.format == "csv" else ".plnk"
    sig_path, idl_path = out / f"signal{suffix}", out / f"idler{suffix}"
    write_stream(signal, sig_path)
    write_stream(idler, idl_path)
    _emit(
        SimulateReport(signal_file=sig_path.name, idler_file=idl_path.name, report=report),
        out / "simulation_report.json",
    )
    return EXIT_OK


def cmd_coincide(args) -> int:
    if args.displacement is not None and abs(args.displacement) <= args.window:
        raise _UsageError(
            f"--displacement {args.displacement} ns overlaps the {args.window} ns window"
        )
    a, b = read_stream(args.file_a), read_stream(args.file_b)
    res = find_coincidences(a, b, args.window, args.offset)
    if args.displacement is not None:
        acc = displaced_window_rate(
            a, b, args.window, args.offset, args.displacement, both_sides=args.both_sides
        )
        res = res.model_copy(
            update={"accidental_rate": acc, "accidental_displacement": args.displacement}
        )
    _emit(res, Path(args.out) if args.out else None)
    return EXIT_OK


def cmd_scan_delay(args) -> int:
    a, b = read_stream(args.file_a), read_stream(args.file_b)
    res = find_offset(a, b, args.span, args.coarse_bin, args.threshold, args.final_bin)
    hist_name = None
    if args.histogram:
        res.histogram.to_csv(args.histogram)
        hist_name = str(args.histogram)
    _emit(OffsetReport(
        offset_ps=res.offset, score=res.score, bin_width_ps=res.bin_width, histogram_csv=hist_name
    ))
    return EXIT_OK


def cmd_visibility(args) -> int:
    cfg = _config(args)
    if cfg.scan is None:
        raise ConfigError("scan", "the visibility command needs a [scan] table")
    mode = args.mode or cfg.scan.mode
    dwell = args.dwell if args.dwell is not None else cfg.scan.dwell_s
    out = _out_dir(args, cfg)
    scan = fringe_scan(
        cfg.scenario(),
        cfg.scan.hwp_angles(),
        dwell,
        cfg.run.seed,
        idler_settings=cfg.scan.idler_settings,
        mode=mode,
        offset_ps=cfg.analysis.offset_ps,
        displacement=cfg.scan.displacement_ns,
        method=cfg.run.method,
    )
    write_scan_csv(scan, out / "fringes.csv")
    _emit(scan, out / "visibility.json")
    return EXIT_OK


def cmd_keyrate(args) -> int:
    _emit(bbm92_key_rate(args.pairs, args.visibility, args.f, args.sifting))
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    pred = expected_rates(cfg.scenario())
    herald = None
    if pred.singles_signal > 0 and pred.singles_idler > 0:
        herald = heralding_efficiency(
            pred.total_coincidences, pred.singles_signal, pred.singles_idler
        )
    _emit(PredictReport(prediction=pred, heralding_efficiency=herald))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfgs = [load_config(p) for p in args.configs]
    base = cfgs[0]
    if len(cfgs) == 1 and base.run.sweep_pump_mw:
        scenarios = [base.scenario().with_pump(p) for p in base.run.sweep_pump_mw]
        cfgs = [base] * len(scenarios)
    else:
        scenarios = [c.scenario() for c in cfgs]
    for c, path in zip(cfgs, args.configs):
        if c.scan is None:
            raise ConfigError("scan", f"the sweep command needs a [scan] table ({path})")
    seed = args.seed if args.seed is not None else base.run.seed
    out = _out_dir(args, base)
    summary = power_sweep(
        scenarios,
        [c.scan.dwell_s for c in cfgs],
        seed,
        hwp_angles=base.scan.hwp_angles(),
        f=base.analysis.ec_efficiency,
        sifting=base.analysis.sifting,
        mode=args.mode or base.scan.mode,
        strict=False,
        displacement=base.scan.displacement_ns,
    )
    write_sweep_csv(summary, out / "sweep.csv")
    _emit(summary, out / "sweep.json")
    return EXIT_OK


def cmd_schemas(args) -> int:
    out = Path(args.output_dir or "schemas")
    out.mkdir(parents=True, exist_ok=True)
    for name, model in SCHEMAS.items():
        text = json.dumps(model.model_json_schema(), indent=2, sort_keys=True) + "\n"
        (out / f"{name}.schema.json").write_text(text)
    text = json.dumps(ScenarioConfig.model_json_schema(), indent=2, sort_keys=True) + "\n"
    (out / "config.schema.json").write_text(text)
    print(out)
    return EXIT_OK


# ----------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairlink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pairlink {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help="scenario TOML file")
        sp.add_argument("-o", "--output-dir")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.set_defaults(func=func)
        return sp

    sp = with_config("simulate", cmd_simulate, "simulate the link, write two timestamp files")
    sp.add_argument("--duration", type=float, help="override run.duration_s (s)")
    sp.add_argument("--format", choices=("binary", "csv"), default="binary")

    sp = sub.add_parser("coincide", help="count coincidences between two timestamp files")
    sp.add_argument("file_a")
    sp.add_argument("file_b")
    sp.add_argument("--window", type=float, default=1.25, help="ns (default 1.25)")
    sp.add_argument("--offset", type=int, default=0, help="t_b - t_a offset, ps")
    sp.add_argument("--displacement", type=float, help="accidental window displacement, ns")
    sp.add_argument("--both-sides", action="store_true", help="average +/- displaced windows")
    sp.add_argument("--out", help="also write the JSON here")
    sp.set_defaults(func=cmd_coincide)

    sp = sub.add_parser("scan-delay", help="find the t_b - t_a correlation peak")
    sp.add_argument("file_a")
    sp.add_argument("file_b")
    sp.add_argument("--span", type=float, default=1e-3, help="search +/- span seconds")
    sp.add_argument("--coarse-bin", type=float, default=1.0, help="ns")
    sp.add_argument("--final-bin", type=int, default=10, help="ps")
    sp.add_argument("--threshold", type=float, default=5.0, help="peak/background score")
    sp.add_argument("--histogram", help="write the final histogram CSV here")
    sp.set_defaults(func=cmd_scan_delay)

    sp = with_config("visibility", cmd_visibility, "polarization fringe scan and fit")
    sp.add_argument("--mode", choices=("simulate", "analytic"), help="override scan.mode")
    sp.add_argument("--dwell", type=float, help="override scan.dwell_s (s)")

    sp = sub.add_parser("keyrate", help="BBM-92 asymptotic key rate")
    sp.add_argument("--pairs", type=float, required=True, help="coincidence rate, 1/s")
    sp.add_argument("--visibility", type=float, required=True)
    sp.add_argument("--f", type=float, default=1.1, help="error-correction efficiency")
    sp.add_argument("--sifting", type=float, default=1.0)
    sp.set_defaults(func=cmd_keyrate)

    with_config("predict", cmd_predict, "closed-form rate prediction")

    sp = sub.add_parser("sweep", help="fringe scans over several pump powers")
    sp.add_argument("configs", nargs="+", help="one config per pump, or one with run.sweep_pump_mw")
    sp.add_argument("-o", "--output-dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mode", choices=("simulate", "analytic"))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("schemas", help="write JSON schemas of every output")
    sp.add_argument("-o", "--output-dir")
    sp.set_defaults(func=cmd_schemas)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, _UsageError) as exc:
        print(f"pairlink: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoCorrelationError as exc:
        print(f"pairlink: {exc}", file=sys.stderr)
        return EXIT_NO_CORRELATION
    except ParameterError as exc:
        print(f"pairlink: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PairlinkError, OSError, MemoryError) as exc:
        print(f"pairlink: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
