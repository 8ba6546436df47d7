"""TOML scenario configuration.

A config file is a LinkScenario (top-level scalars plus ``[source]``,
``[fiber]``, ``[detector_signal]``, ``[detector_idler]`` and an optional
``[analyzer]`` table) extended with run controls in ``[run]``, ``[scan]`` and
``[analysis]``. Unknown keys anywhere are rejected. See docs/config.md.
"""

from __future__ import annotations

import os
import sys
from importlib import resources
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .analysis import IDLER_SETTINGS, default_hwp_angles
from .errors import ConfigError
from .model import LinkScenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_DIR_ENV = "PAIRLINK_OUTPUT_DIR"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class RunConfig(_Section):
    duration_s: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0)
    output_dir: str | None = None
    method: str = Field("marked", pattern="^(marked|chain)$")
    sweep_pump_mw: list[float] | None = None


class ScanConfig(_Section):
    hwp_step_deg: float = Field(11.25, gt=0)
    hwp_span_deg: float = Field(90.0, gt=0)
    dwell_s: float = Field(1.0, gt=0)
    idler_settings: list[str] = ["H", "V", "D", "A"]
    mode: str = Field("simulate", pattern="^(simulate|analytic)$")
    displacement_ns: float = 7.0

    def hwp_angles(self):
        return default_hwp_angles(self.hwp_step_deg, self.hwp_span_deg)

    def model_post_init(self, __context) -> None:
        bad = [s for s in self.idler_settings if s not in IDLER_SETTINGS]
        if bad:
            raise ValueError(f"unknown idler setting(s) {bad}; use H, V, D, A")


class AnalysisConfig(_Section):
    ec_efficiency: float = Field(1.1, ge=1.0)
    sifting: float = Field(1.0, gt=0, le=1.0)
    offset_ps: int | None = None


class ScenarioConfig(LinkScenario):
    run: RunConfig = RunConfig()
    scan: ScanConfig | None = None
    analysis: AnalysisConfig = AnalysisConfig()

    def scenario(self) -> LinkScenario:
        fields = LinkScenario.model_fields
        return LinkScenario(**{k: getattr(self, k) for k in fields})

    def output_dir(self, override: str | os.PathLike | None = None) -> Path:
        chosen = override or self.run.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
        return Path(chosen)


def _key_path(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(data: dict, source: str = "<config>") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_key_path(err["loc"]), f"{err['msg']} ({source})") from exc


def load_config(path: str | os.PathLike) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML syntax error: {exc}") from exc
    return parse_config(data, str(path))


def fixture_names() -> list[str]:
    files = resources.files("pairlink") / "fixtures"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture, e.g. ``fixture_path("paper_50km_15mW")``."""
    p = resources.files("pairlink") / "fixtures" / f"{name}.toml"
    if not p.is_file():
        raise ConfigError(name, f"no such fixture; available: {', '.join(fixture_names())}")
    return Path(str(p))


def load_fixture(name: str) -> ScenarioConfig:
    return load_config(fixture_path(name))
