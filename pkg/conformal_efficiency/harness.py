"""Experiment configuration, scenario registry, report emission and the suite runner."""
import csv
import json
import math
import time
import logging
import configparser
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from .constructions import ExperimentConstants
from .errors import UnknownScenario
from .search import SearchConfig
from .settings import get_settings
from .verification import Certificate

logger = logging.getLogger(__name__)

ReportFormat = Literal["json", "csv"]


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    run: Callable[["ExperimentConfig", "Report"], None]
    stochastic: bool
    description: str


SCENARIOS: dict[str, ScenarioSpec] = {}


def scenario(name: str, stochastic: bool = False):
    def register(fn):
        SCENARIOS[name] = ScenarioSpec(name, fn, stochastic, (fn.__doc__ or "").strip().splitlines()[0])
        return fn
    return register


def registry() -> dict[str, ScenarioSpec]:
    from . import scenarios  # noqa: F401  registers the built-in scenarios
    return SCENARIOS


def get_scenario(name: str) -> ScenarioSpec:
    known = registry()
    if name not in known:
        raise UnknownScenario(name, known)
    return known[name]


# ------------------ Config ------------------

class ExperimentConfig(BaseModel):
    scenario: str = Field(..., description="Registered scenario name")
    n: Optional[int] = Field(None, ge=1, description="Training length override")
    num_labels: Optional[int] = Field(None, ge=2)
    num_objects: Optional[int] = Field(None, ge=1)
    constants: ExperimentConstants = Field(default_factory=ExperimentConstants)
    trials: Optional[int] = Field(None, ge=1, description="Monte Carlo trials override")
    seed: Optional[int] = Field(None, ge=0)
    search: SearchConfig = Field(default_factory=SearchConfig)
    out_dir: str = Field(default_factory=lambda: get_settings().out_dir)
    format: ReportFormat = "json"
    timing: bool = Field(False, description="Include wall-clock time in emitted reports")
    label: Optional[str] = Field(None, description="Report file stem; defaults to the scenario name")

    @field_validator("scenario")
    @classmethod
    def validate_scenario(cls, v: str):
        if v not in registry():
            raise ValueError(f"Unknown scenario '{v}'. Known scenarios: {', '.join(sorted(registry()))}")
        return v

    @model_validator(mode="after")
    def validate_seed(self) -> "ExperimentConfig":
        if registry()[self.scenario].stochastic and self.seed is None:
            raise ValueError(f"Scenario '{self.scenario}' is stochastic and needs a seed.")
        return self

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed or 0, spawn_key=(stream,)))


# ------------------ Report ------------------

class CheckRow(BaseModel):
    name: str
    expected: Optional[float | str] = None
    observed: Optional[float | str] = None
    tolerance: Optional[float] = None
    passed: bool


class Report(BaseModel):
    scenario: str
    inputs: dict[str, Any] = Field(default_factory=dict)
    rows: list[CheckRow] = Field(default_factory=list)
    certificates: list[dict[str, Any]] = Field(default_factory=list)
    measurements: dict[str, Any] = Field(default_factory=dict, description="Reported values with no pass/fail claim")
    wall_clock: float = 0.0
    seed: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def measure(self, name: str, value) -> None:
        self.measurements[name] = value

    def check(self, name: str, passed: bool, observed=None, expected=None, tolerance: Optional[float] = None) -> bool:
        self.rows.append(CheckRow(name=name, expected=_cell(expected), observed=_cell(observed),
                                  tolerance=tolerance, passed=bool(passed)))
        if not passed:
            logger.warning(f"[{self.scenario}] check failed: {name} (observed {observed}, expected {expected})")
        return bool(passed)

    def close(self, name: str, observed: float, expected: float, tol: float) -> bool:
        return self.check(name, abs(observed - expected) <= tol, observed, expected, tol)

    def at_most(self, name: str, observed: float, bound: float, tol: float = 0.0) -> bool:
        return self.check(name, observed <= bound + tol, observed, f"<= {format_float(bound)}", tol)

    def at_least(self, name: str, observed: float, bound: float, tol: float = 0.0) -> bool:
        return self.check(name, observed >= bound - tol, observed, f">= {format_float(bound)}", tol)

    def certificate(self, name: str, cert: Certificate, expect_pass: bool = True) -> bool:
        self.certificates.append({"name": name, **cert.model_dump()})
        expected = "pass" if expect_pass else "fail"
        return self.check(name, cert.passed == expect_pass, cert.verdict, expected, cert.tolerance)


def _cell(v):
    if v is None or isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return float(v)


def format_float(v: float) -> str:
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".12g")


def normalize(obj):
    """JSON-ready copy with floats at 12 significant digits and non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return normalize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(format(v, ".12g")) if math.isfinite(v) else format_float(v)
    return obj


def render_report(report: Report, fmt: ReportFormat = "json", timing: bool = False) -> str:
    if fmt == "json":
        data = report.model_dump()
        data["passed"] = report.passed
        if not timing:
            data.pop("wall_clock")
        return json.dumps(normalize(data), sort_keys=True, indent=2) + "\n"
    from io import StringIO

    buffer = StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["scenario", "name", "expected", "observed", "tolerance", "passed"])
    for row in report.rows:
        writer.writerow([report.scenario, row.name] + [
            format_float(v) if isinstance(v, float) else ("" if v is None else v)
            for v in (row.expected, row.observed, row.tolerance)
        ] + ["true" if row.passed else "false"])
    return buffer.getvalue()


def emit_report(report: Report, fmt: ReportFormat = "json", out_dir: Optional[str | Path] = None,
                timing: bool = False, stem: Optional[str] = None) -> Path:
    out = Path(out_dir or get_settings().out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem or report.scenario}.{fmt}"
    path.write_text(render_report(report, fmt, timing), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def emit_reports(report: Report, out_dir: Optional[str | Path] = None, timing: bool = False,
                 stem: Optional[str] = None) -> dict[str, Path]:
    """The JSON report and the CSV summary, under the same stem."""
    return {fmt: emit_report(report, fmt, out_dir, timing, stem) for fmt in ("json", "csv")}


# ------------------ Runners ------------------

def run_scenario(cfg: ExperimentConfig, write: bool = True) -> Report:
    """Run one scenario; with write set, emit its JSON report and CSV summary to cfg.out_dir."""
    spec = get_scenario(cfg.scenario)
    report = Report(scenario=cfg.scenario, seed=cfg.seed,
                    inputs=cfg.model_dump(exclude={"out_dir", "format", "timing", "label"}))
    logger.info(f"Running scenario {cfg.scenario} (seed={cfg.seed})")
    start = time.perf_counter()
    spec.run(cfg, report)
    report.wall_clock = time.perf_counter() - start
    status = "passed" if report.passed else "FAILED"
    logger.info(f"Scenario {cfg.scenario} {status}: {sum(r.passed for r in report.rows)}/{len(report.rows)} checks "
                f"in {report.wall_clock:.2f}s")
    if write:
        emit_reports(report, cfg.out_dir, cfg.timing, cfg.label)
    return report


def load_suite(path: str | Path) -> tuple[list[ExperimentConfig], bool]:
    """Scenario configs from an INI suite file, and whether to run them in parallel.

    [suite] holds seed, out, format and parallel; every other section is one run.
    A section's name is its scenario unless it sets scenario = ... explicitly.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"Suite file not found: {path}")
    suite = parser["suite"] if parser.has_section("suite") else {}
    defaults = {
        "seed": suite.get("seed"),
        "out_dir": suite.get("out", get_settings().out_dir),
        "format": suite.get("format", "json"),
    }
    parallel = str(suite.get("parallel", "false")).lower() in ("1", "true", "yes", "on")

    constant_keys = set(ExperimentConstants.model_fields)
    search_keys = set(SearchConfig.model_fields)
    configs = []
    for section in parser.sections():
        if section == "suite":
            continue
        values = dict(parser[section])
        fields: dict[str, Any] = {k: v for k, v in defaults.items() if v is not None}
        fields["scenario"] = values.pop("scenario", section)
        fields["label"] = section
        constants = {k: values.pop(k) for k in list(values) if k in constant_keys}
        search = {k: values.pop(k) for k in list(values) if k in search_keys and k != "seed"}
        fields.update(values)
        fields["constants"] = ExperimentConstants(**constants)
        fields["search"] = SearchConfig(**search)
        configs.append(ExperimentConfig(**fields))
    return configs, parallel


def run_suite(configs: list[ExperimentConfig], parallel: bool = False, max_workers: int = 4,
              write: bool = True) -> list[Report]:
    if parallel:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(lambda cfg: run_scenario(cfg, write), configs))
    return [run_scenario(cfg, write) for cfg in configs]
