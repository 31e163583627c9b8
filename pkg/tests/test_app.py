import json

import pytest

from conformal_efficiency.app import EXIT_CAP, EXIT_FAILED, EXIT_OK, EXIT_USAGE, ConstructParams, main, read_params
from conformal_efficiency.constructions import single_one_predictor
from conformal_efficiency.predictor_io import read_predictor, write_predictor
from conformal_efficiency.settings import reset_settings


@pytest.fixture
def single(tmp_path):
    return write_predictor(single_one_predictor(2), tmp_path / "single.pred")


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


class TestExperiment:
    def test_runs_and_writes_report(self, out):
        assert main(["experiment", "laplace-gap", "--n", "20", "--out", str(out)]) == EXIT_OK
        data = json.loads((out / "laplace-gap.json").read_text(encoding="utf-8"))
        assert data["passed"] is True
        assert data["inputs"]["n"] == 20

    def test_writes_json_and_csv(self, out, capsys):
        assert main(["experiment", "laplace-gap", "--format", "csv", "--out", str(out)]) == EXIT_OK
        summary = (out / "laplace-gap.csv").read_text(encoding="utf-8")
        assert json.loads((out / "laplace-gap.json").read_text(encoding="utf-8"))["passed"] is True
        assert capsys.readouterr().out == summary

    def test_list(self, capsys):
        assert main(["experiment", "--list"]) == EXIT_OK
        listing = capsys.readouterr().out
        assert "laplace-gap" in listing
        assert "stochastic" in listing

    def test_unknown_scenario(self):
        assert main(["experiment", "nope"]) == EXIT_USAGE

    def test_stochastic_without_seed(self):
        assert main(["experiment", "remark1-domination"]) == EXIT_USAGE

    def test_params_file(self, tmp_path, out):
        params = tmp_path / "thm2.env"
        params.write_text("C_REFUTE=0.3\nMULTISTARTS=2\n", encoding="utf-8")
        assert main(["experiment", "thm2-refute", "--params", str(params), "--out", str(out)]) == EXIT_OK
        data = json.loads((out / "thm2-refute.json").read_text(encoding="utf-8"))
        assert data["inputs"]["constants"]["c_refute"] == 0.3


class TestCertify:
    def test_rand_e_passes(self, single, out):
        assert main(["certify", "--class", "rand-e", "--predictor", str(single), "--out", str(out)]) == EXIT_OK
        cert = json.loads((out / "single.rand-e.json").read_text(encoding="utf-8"))
        assert cert["verdict"] == "pass_numeric"

    def test_exch_e_fails(self, single, out):
        assert main(["certify", "--class", "exch-e", "--predictor", str(single), "--out", str(out)]) == EXIT_FAILED

    def test_missing_file(self, tmp_path):
        assert main(["certify", "--class", "exch-e", "--predictor", str(tmp_path / "absent.pred")]) == EXIT_USAGE

    def test_missing_argument(self):
        with pytest.raises(SystemExit):
            main(["certify", "--class", "exch-e"])

    def test_cap_exceeded(self, tmp_path, out, monkeypatch):
        monkeypatch.setenv("CONFORMAL_ENUMERATION_CAP", "10")
        reset_settings()
        pred = tmp_path / "three.pred"
        pred.write_text("labels: 0 1 2\nn: 3\nflavor: e\n0,1,2,0 1.5\n", encoding="utf-8")
        assert main(["certify", "--class", "exch-e", "--predictor", str(pred), "--out", str(out)]) == EXIT_CAP


class TestConstruct:
    def test_thm1G(self, single, out):
        assert main(["construct", "--name", "thm1G", "--predictor", str(single), "--out", str(out)]) == EXIT_OK
        G = read_predictor(out / "thm1G.pred")
        assert G.flavor == "e"

    def test_thm2(self, tmp_path, out):
        params = tmp_path / "thm2.env"
        params.write_text("N=9\nCONSTANT=0.4\n", encoding="utf-8")
        assert main(["construct", "--name", "thm2", "--params", str(params), "--out", str(out)]) == EXIT_OK
        data = json.loads((out / "thm2.json").read_text(encoding="utf-8"))
        assert data["certificate"]["verdict"] == "fail"
        assert data["value_at_zero"] == pytest.approx(1.03247, abs=1e-5)

    def test_thm4E_from_params(self, tmp_path, out):
        params = tmp_path / "thm4.env"
        params.write_text("N=3\nM=2\n", encoding="utf-8")
        assert main(["construct", "--name", "thm4E", "--params", str(params), "--out", str(out)]) == EXIT_OK
        assert read_predictor(out / "thm4E.pred").n == 3

    def test_thm4E_above_the_table_cap(self, tmp_path, out):
        params = tmp_path / "thm4.env"
        params.write_text("N=2000\nM=5\nC=0.9\n", encoding="utf-8")
        assert main(["construct", "--name", "thm4E", "--params", str(params), "--out", str(out)]) == EXIT_OK
        assert not (out / "thm4E.pred").exists()
        data = json.loads((out / "thm4E.json").read_text(encoding="utf-8"))
        assert data["params"]["n"] == 2000
        assert data["predictor"]["params"]["shape"] == "modular_sum"
        assert data["predictor"]["fully_invariant"] is True
        assert data["certificate"]["method"] == "roots_of_unity"
        assert data["certificate"]["verdict"] == "pass_numeric"
        assert data["certificate"]["worst_value"] == pytest.approx(0.9, abs=0.01)

    @pytest.mark.slow
    def test_thm3E_above_the_table_cap(self, tmp_path, out):
        params = tmp_path / "thm3.env"
        params.write_text("N=64\nK=2\nA=0.99\n", encoding="utf-8")
        assert main(["construct", "--name", "thm3E", "--params", str(params), "--out", str(out)]) == EXIT_OK
        data = json.loads((out / "thm3E.json").read_text(encoding="utf-8"))
        assert data["certificate"]["verdict"] == "pass_numeric"
        assert data["certificate"]["worst_value"] == pytest.approx(0.978, abs=2e-3)

    def test_needs_input_predictor(self, out):
        assert main(["construct", "--name", "thm1G", "--out", str(out)]) == EXIT_USAGE

    def test_params_are_validated(self, tmp_path):
        params = tmp_path / "bad.env"
        params.write_text("DELTA=1.5\n", encoding="utf-8")
        assert main(["construct", "--name", "thm2", "--params", str(params)]) == EXIT_USAGE

    def test_read_params_lowercases(self, tmp_path):
        params = tmp_path / "p.env"
        params.write_text("# constants\nKERNEL=uniform_other\nEMPTY=\n", encoding="utf-8")
        values = read_params(params)
        assert values == {"kernel": "uniform_other"}
        assert ConstructParams(**values).kernel == "uniform_other"


class TestCalibrateAndOperator:
    def test_e_to_p(self, single, out):
        assert main(["calibrate", "--kind", "e2p", "--predictor", str(single), "--out", str(out)]) == EXIT_OK
        assert read_predictor(out / "single.e2p.pred").flavor == "p"

    def test_power_on_e_predictor_is_rejected(self, single, out):
        args = ["calibrate", "--kind", "power", "--delta", "0.5", "--predictor", str(single), "--out", str(out)]
        assert main(args) == EXIT_USAGE

    def test_density_needs_file(self, single):
        assert main(["calibrate", "--kind", "density", "--predictor", str(single)]) == EXIT_USAGE

    def test_operator_chain(self, single, out):
        assert main(["operator", "--chain", "t,x", "--predictor", str(single), "--out", str(out)]) == EXIT_OK
        Etx = read_predictor(out / "single.tx.pred")
        assert Etx.train_invariant

    def test_unknown_operator(self, single, out):
        assert main(["operator", "--chain", "t,q", "--predictor", str(single), "--out", str(out)]) == EXIT_USAGE


class TestSuite:
    def test_suite_writes_one_report_per_section(self, tmp_path, out):
        suite = tmp_path / "suite.cfg"
        suite.write_text("[suite]\nseed = 1\n\n[laplace-gap]\nn = 15\n\n[small-eq13]\nscenario = eq13-certify\nn = 4\n",
                         encoding="utf-8")
        assert main(["suite", str(suite), "--out", str(out)]) == EXIT_OK
        for stem in ("laplace-gap", "small-eq13"):
            assert (out / f"{stem}.json").exists()
            assert (out / f"{stem}.csv").exists()
