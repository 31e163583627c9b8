import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from conformal_efficiency.errors import UnknownScenario
from conformal_efficiency.harness import (ExperimentConfig, Report, emit_report, emit_reports, get_scenario,
                                          load_suite, normalize, registry, render_report, run_scenario, run_suite)
from conformal_efficiency.verification import Certificate


@pytest.fixture
def laplace_report():
    return run_scenario(ExperimentConfig(scenario="laplace-gap"))


class TestNormalize:
    def test_floats_have_twelve_digits(self):
        assert normalize(1 / 3) == 0.333333333333
        assert normalize({"x": [2 / 3, np.float64(0.1)]}) == {"x": [0.666666666667, 0.1]}

    def test_non_finite_become_strings(self):
        assert normalize([math.inf, -math.inf, math.nan]) == ["inf", "-inf", "nan"]

    def test_numpy_values(self):
        assert normalize(np.array([1.0, 2.0])) == [1.0, 2.0]
        assert normalize(np.int64(3)) == 3
        assert normalize(np.bool_(True)) is True


class TestRegistry:
    def test_builtin_scenarios(self):
        names = set(registry())
        assert {"eq13-certify", "thm2-refute", "laplace-gap", "thm1-monte-carlo", "operators-laws",
                "calibration-transport", "thm4-desk", "thm3-construction", "appendix-b", "remark1-domination",
                "multiclass-guarantees"} <= names
        assert registry()["thm1-monte-carlo"].stochastic
        assert not registry()["laplace-gap"].stochastic

    def test_unknown_scenario(self):
        with pytest.raises(UnknownScenario, match="Known scenarios"):
            get_scenario("nope")


class TestExperimentConfig:
    def test_unknown_scenario_is_invalid(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(scenario="nope")

    def test_stochastic_needs_seed(self):
        with pytest.raises(ValidationError, match="needs a seed"):
            ExperimentConfig(scenario="remark1-domination")
        assert ExperimentConfig(scenario="remark1-domination", seed=3).seed == 3

    def test_rng_streams(self):
        cfg = ExperimentConfig(scenario="remark1-domination", seed=3)
        assert cfg.rng(0).random() == cfg.rng(0).random()
        assert cfg.rng(0).random() != cfg.rng(1).random()

    def test_out_dir_from_settings(self, tmp_path):
        assert ExperimentConfig(scenario="laplace-gap").out_dir == str(tmp_path / "reports")


class TestReport:
    def test_check_helpers(self):
        report = Report(scenario="demo")
        assert report.close("close", 1.0 + 1e-10, 1.0, 1e-9)
        assert report.at_most("below", 0.5, 1.0)
        assert not report.at_least("above", 0.5, 1.0)
        assert not report.passed
        assert report.rows[1].expected == "<= 1"

    def test_certificate_rows(self):
        report = Report(scenario="demo")
        cert = Certificate(target_class="exch_e", verdict="pass_exact", margin=0.0, worst_value=1.0,
                           method="orbit_enumeration")
        assert report.certificate("cert", cert)
        assert not report.certificate("cert expected to fail", cert, expect_pass=False)
        assert report.certificates[0]["name"] == "cert"
        assert report.rows[0].observed == "pass_exact"


class TestRendering:
    def test_laplace_gap_passes(self, laplace_report):
        assert laplace_report.passed
        assert len(laplace_report.rows) == 10

    def test_json_is_deterministic(self, laplace_report):
        first = render_report(laplace_report)
        assert first == render_report(laplace_report.model_copy(update={"wall_clock": 99.0}))
        data = json.loads(first)
        assert "wall_clock" not in data
        assert data["passed"] is True
        assert "wall_clock" in json.loads(render_report(laplace_report, timing=True))

    def test_csv_has_one_row_per_check(self, laplace_report):
        lines = render_report(laplace_report, "csv").splitlines()
        assert lines[0] == "scenario,name,expected,observed,tolerance,passed"
        assert len(lines) == len(laplace_report.rows) + 1
        assert all(line.endswith(",true") for line in lines[1:])

    def test_emit_uses_stem(self, laplace_report, tmp_path):
        path = emit_report(laplace_report, "csv", tmp_path, stem="custom")
        assert path == tmp_path / "custom.csv"
        assert path.read_text(encoding="utf-8").startswith("scenario,")
        assert emit_report(laplace_report, "json", tmp_path).name == "laplace-gap.json"

    def test_emit_reports_writes_both_formats(self, laplace_report, tmp_path):
        paths = emit_reports(laplace_report, tmp_path, stem="both")
        assert paths == {"json": tmp_path / "both.json", "csv": tmp_path / "both.csv"}
        assert json.loads(paths["json"].read_text(encoding="utf-8"))["scenario"] == "laplace-gap"
        assert paths["csv"].read_text(encoding="utf-8") == render_report(laplace_report, "csv")

    def test_run_scenario_writes_json_and_csv(self, tmp_path):
        cfg = ExperimentConfig(scenario="laplace-gap", out_dir=str(tmp_path), label="gap", format="csv")
        report = run_scenario(cfg)
        assert (tmp_path / "gap.json").read_text(encoding="utf-8") == render_report(report)
        assert (tmp_path / "gap.csv").exists()

    def test_run_scenario_without_write(self, tmp_path):
        run_scenario(ExperimentConfig(scenario="laplace-gap", out_dir=str(tmp_path)), write=False)
        assert list(tmp_path.iterdir()) == []


class TestSuite:
    def test_load_suite(self, tmp_path):
        path = tmp_path / "suite.cfg"
        path.write_text(
            "[suite]\nseed = 7\nformat = csv\nparallel = yes\n\n"
            "[laplace-gap]\nn = 20\n\n"
            "[refute-half]\nscenario = thm2-refute\nc_refute = 0.5\nmultistarts = 4\n",
            encoding="utf-8")
        configs, parallel = load_suite(path)
        assert parallel
        assert [c.label for c in configs] == ["laplace-gap", "refute-half"]
        assert configs[0].n == 20 and configs[0].seed == 7 and configs[0].format == "csv"
        assert configs[1].scenario == "thm2-refute"
        assert configs[1].constants.c_refute == 0.5
        assert configs[1].search.multistarts == 4

    def test_missing_suite(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_suite(tmp_path / "absent.cfg")

    def test_parallel_run_matches_serial(self):
        configs = [ExperimentConfig(scenario="laplace-gap", n=n) for n in (5, 50)]
        serial = [render_report(r) for r in run_suite(configs, write=False)]
        parallel = [render_report(r) for r in run_suite(configs, parallel=True, write=False)]
        assert serial == parallel
