import math

import pytest

from conformal_efficiency import predictor_io
from conformal_efficiency.constructions import single_one_predictor
from conformal_efficiency.core import Example
from conformal_efficiency.errors import PredictorFileError
from conformal_efficiency.predictor_io import parse_predictor, read_predictor, render_predictor, write_predictor
from conformal_efficiency.settings import reset_settings
from conformal_efficiency.verification import certify_exchangeability_e

HEADER = "labels: 0 1\nn: 2\nflavor: e\n"


def documented_sample() -> str:
    doc = predictor_io.__doc__.split("\n\n")[1]
    return "\n".join(line.strip() for line in doc.splitlines())


class TestParse:
    def test_documented_sample(self):
        pred = parse_predictor(documented_sample())
        assert pred.space.objects == ("x0", "x1")
        assert pred.n == 2 and pred.flavor == "e"
        assert not pred.label_only
        assert pred((Example(1, 0), Example(0, 0), Example(1, 1))) == 2.25
        assert pred((Example(0, 0), Example(1, 1), Example(0, 0))) == math.inf
        assert pred((Example(0, 0), Example(0, 1), Example(0, 0))) == 0.0

    def test_object_rows_take_precedence(self):
        text = HEADER + "objects: a b\n0,0,1 1.0\n0,0,1 a,a,b 3.0\n"
        pred = parse_predictor(text)
        assert pred((Example(0, 0), Example(0, 0), Example(1, 1))) == 3.0
        assert pred((Example(1, 0), Example(0, 0), Example(1, 1))) == 1.0

    def test_flags_and_default(self):
        pred = parse_predictor(HEADER + "flags: train_invariant label_only\ndefault: 0.5\n0,1,1 2\n1,0,1 2\n")
        assert pred.train_invariant and pred.label_only
        assert pred((Example(0, 1), Example(0, 1), Example(0, 1))) == 0.5

    def test_comments_and_blank_lines(self):
        pred = parse_predictor("# header\n\n" + HEADER + "0,0,0 1.5  # all zeros\n")
        assert pred((Example(0, 0),) * 3) == 1.5

    @pytest.mark.parametrize("text, line", [
        (HEADER + "0,0,1 -1\n", 4),
        (HEADER + "0,0,1 abc\n", 4),
        (HEADER + "\n0,1 2.0\n", 5),
        (HEADER + "0,0,7 2.0\n", 4),
        (HEADER + "0,0,1 x0,x0 2.0\n", 4),
        (HEADER + "0,0,1\n", 4),
    ])
    def test_bad_rows_report_their_line(self, text, line):
        with pytest.raises(PredictorFileError) as info:
            parse_predictor(text)
        assert info.value.line == line
        assert str(info.value).startswith(f"line {line}:")

    @pytest.mark.parametrize("text", [
        "labels: 0 1\nflavor: e\n",
        HEADER.replace("flavor: e", "flavor: q"),
        HEADER + "flags: symmetric\n",
        "labels: 0\nn: 2\nflavor: e\n",
        HEADER + "flags: label_only\n0,0,1 x0,x0,x0 1.0\n",
    ])
    def test_bad_files(self, text):
        with pytest.raises(PredictorFileError):
            parse_predictor(text)


class TestDeclaredFlags:
    ODD_ONLY = "labels: a b c\nn: 2\nflavor: e\nflags: {flags}\nb,a,c 12\na,c,b 12\nc,b,a 12\n"

    @pytest.mark.parametrize("flags, false", [
        ("train_invariant", "train_invariant"),
        ("fully_invariant", "fully_invariant"),
    ])
    def test_false_claims_are_rejected(self, flags, false):
        with pytest.raises(PredictorFileError, match=f"do not hold.*{false}"):
            parse_predictor(self.ODD_ONLY.format(flags=flags))

    def test_object_rows_are_checked(self):
        text = "objects: u v\n" + HEADER + "0,0,1 u,v,u 1.0\n"
        pred = parse_predictor(text)
        assert not pred.label_only
        with pytest.raises(PredictorFileError, match="train_invariant"):
            parse_predictor(text.replace("flavor: e", "flavor: e\nflags: train_invariant"))

    def test_sampled_check_above_the_table_cap(self, monkeypatch):
        monkeypatch.setenv("CONFORMAL_TABLE_CAP", "8")
        reset_settings()
        with pytest.raises(PredictorFileError, match="train_invariant"):
            parse_predictor(self.ODD_ONLY.format(flags="train_invariant"))

    def test_false_claim_cannot_certify(self, tmp_path):
        path = tmp_path / "odd.pred"
        path.write_text(self.ODD_ONLY.format(flags="train_invariant"), encoding="utf-8")
        with pytest.raises(PredictorFileError):
            read_predictor(path)
        path.write_text(self.ODD_ONLY.format(flags="none"), encoding="utf-8")
        cert = certify_exchangeability_e(read_predictor(path))
        assert cert.verdict == "fail"
        assert cert.worst_value == pytest.approx(6.0)
        assert cert.margin == pytest.approx(-5.0)


class TestRender:
    def test_render_lists_nonzero_values(self):
        text = render_predictor(single_one_predictor(2))
        rows = [line for line in text.splitlines() if line and line[0].isdigit()]
        assert len(rows) == 3
        assert all(line.endswith(" 2.25") for line in rows)
        assert "flags: train_invariant fully_invariant label_only" in text

    def test_written_file_reads_back(self, tmp_path):
        E = single_one_predictor(3)
        path = write_predictor(E, tmp_path / "nested" / "single.pred")
        loaded = read_predictor(path)
        assert loaded.name == "single"
        assert loaded.fully_invariant
        for seq in E.space.all_sequences(4, label_only=True):
            assert loaded(seq) == pytest.approx(E(seq), rel=1e-12)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PredictorFileError, match="Cannot read"):
            read_predictor(tmp_path / "absent.pred")
