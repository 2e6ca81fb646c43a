import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treatid import io as tio
from treatid.cli import main
from treatid.estimation import Dataset
from treatid.identification import Reason

VERDICTS = {"IDENTIFIED", "NOT_IDENTIFIED"}
REASONS = {r.value for r in Reason} | {None}


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_t_schema(self, tmp_path):
        d = tio.load_csv(write(tmp_path, "a.csv", "y,t,v\n1.0,0,a\n3.0,1,a\n"))
        assert d.T == 1 and d.discrete
        assert d.x.tolist() == [[0], [1]]
        assert d.y.tolist() == [1.0, 3.0]
        assert list(d.v) == ["a", "a"]

    def test_exclusivity_violation_names_row(self, tmp_path):
        p = write(tmp_path, "a.csv", "y,x1,x2,v1\n1,0,0,0.5\n2,1,1,0.3\n")
        with pytest.raises(tio.InputError) as info:
            tio.load_csv(p, mode="exclusive")
        assert info.value.code == "EXCLUSIVITY_VIOLATION" and info.value.line == 3
        d = tio.load_csv(p, mode="general")
        assert d.T == 2 and d.control_dim == 1

    def test_empty(self, tmp_path):
        with pytest.raises(tio.InputError) as info:
            tio.load_csv(write(tmp_path, "a.csv", "y,t,v\n"))
        assert info.value.code == "EMPTY_DATASET"

    @pytest.mark.parametrize(
        "text, code, line",
        [
            ("t,v\n0,a\n", "MISSING_COLUMN", 1),
            ("y,v\n1,a\n", "MISSING_COLUMN", 1),
            ("y,t\n1,0\n", "MISSING_COLUMN", 1),
            ("y,t,v\n1,0,a\nabc,1,a\n", "BAD_VALUE", 3),
            ("y,t,v\n1,-1,a\n", "T_OUT_OF_RANGE", 2),
            ("y,t,v\n1,1.5,a\n", "T_OUT_OF_RANGE", 2),
            ("y,x1,v\n1,2,a\n", "BAD_INDICATOR", 2),
            ("y,x1,v\n1,0\n", "BAD_ROW", 2),
            ("y,x1,x3,v\n1,0,0,a\n", "MISSING_COLUMN", 1),
        ],
    )
    def test_errors(self, tmp_path, text, code, line):
        with pytest.raises(tio.InputError) as info:
            tio.load_csv(write(tmp_path, "a.csv", text))
        assert info.value.code == code
        assert info.value.line == line

    def test_t_above_declared_treatments(self, tmp_path):
        with pytest.raises(tio.InputError) as info:
            tio.load_csv(write(tmp_path, "a.csv", "y,t,v\n1,3,a\n"), treatments=2)
        assert info.value.code == "T_OUT_OF_RANGE"
        d = tio.load_csv(write(tmp_path, "b.csv", "y,t,v\n1,1,a\n"), treatments=3)
        assert d.T == 3

    def test_t_schema_writer(self, tmp_path):
        d = Dataset([1.5, 2.0, -1.0], [[0, 0], [0, 1], [1, 0]], np.array(["a", "b", "a"], dtype=object))
        p = tmp_path / "t.csv"
        tio.write_csv(d, p, schema="t")
        assert p.read_text().splitlines()[0] == "y,t,v"
        assert tio.load_csv(p) == d


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 15))
    T = draw(st.integers(1, 4))
    general = draw(st.booleans())
    if general:
        x = draw(st.lists(st.lists(st.integers(0, 1), min_size=T, max_size=T), min_size=n, max_size=n))
    else:
        t = draw(st.lists(st.integers(0, T), min_size=n, max_size=n))
        x = [[int(s == ti - 1) for s in range(T)] for ti in t]
    y = draw(st.lists(finite, min_size=n, max_size=n))
    if draw(st.booleans()):
        label = st.text(alphabet="abcXYZ019 _-,\"", min_size=1, max_size=6).filter(lambda s: s.strip() == s)
        v = np.array(draw(st.lists(label, min_size=n, max_size=n)), dtype=object)
    else:
        d = draw(st.integers(1, 3))
        v = np.array(draw(st.lists(st.lists(finite, min_size=d, max_size=d), min_size=n, max_size=n)))
    return Dataset(y, x, v, "general" if general else "exclusive")


@settings(max_examples=200, deadline=None)
@given(datasets())
def test_csv_round_trip(d):
    assert tio.read_csv_text(tio.csv_text(d), mode=d.mode) == d


def test_json_formatting():
    out = json.loads(tio.dumps({"a": 1 / 3, "b": np.float64(2.0), "c": np.array([1e-20, -0.0]), "d": float("nan")}))
    assert out == {"a": 0.333333333333, "b": 2.0, "c": [1e-20, 0.0], "d": None}


@pytest.fixture
def identified_csv(tmp_path):
    out = tmp_path / "data.csv"
    assert main(["simulate", "--preset", "heterogeneous", "--n", "50000", "--seed", "3", "-o", str(out)]) == 0
    return out


class TestRun:
    def test_pipeline(self, identified_csv, tmp_path, capsys):
        meta = json.loads(identified_csv.with_suffix(".meta.json").read_text())
        assert meta["true_ate"] == [2.0, -1.0]
        assert main(["audit", "-i", str(identified_csv), "-o", str(tmp_path / "audit.json")]) == 0
        assert "verdict: IDENTIFIED" in capsys.readouterr().out
        report = json.loads((tmp_path / "audit.json").read_text())
        assert report["verdict"] == "IDENTIFIED"
        ids = [c["cell_id"] for c in report["cells"]]
        assert ids == [str(k) for k in range(10)]
        for c in report["cells"]:
            assert set(c) == {"cell_id", "n_obs", "gps", "gps_sum", "lambda_min", "verdict", "reason"}
            assert c["verdict"] in VERDICTS and c["reason"] in REASONS
        assert main(["estimate", "-i", str(identified_csv), "-o", str(tmp_path / "est.json")]) == 0
        assert capsys.readouterr().out.startswith("ATE:")
        est = json.loads((tmp_path / "est.json").read_text())
        assert np.max(np.abs(np.array(est["ate"]) - meta["true_ate"])) < 0.1
        assert est["trimmed_mass"] == 0.0
        assert len(est["cells"]) == 10

    @pytest.fixture
    def exhausted_csv(self, tmp_path):
        dgp = {"weights": [0.5, 0.5], "gps": [[0.5, 0.5], [0.4, 0.6]], "coef_mean": [[0, 1, 2], [0, 1, 2]]}
        path = write(tmp_path, "dgp.json", json.dumps(dgp))
        out = tmp_path / "bad.csv"
        assert main(["simulate", "--dgp", str(path), "--n", "2000", "-o", str(out)]) == 0
        return out

    def test_audit_reports_but_never_fails(self, exhausted_csv, tmp_path, capsys):
        assert main(["audit", "-i", str(exhausted_csv), "-o", str(tmp_path / "a.json")]) == 0
        assert "verdict: NOT IDENTIFIED" in capsys.readouterr().out
        report = json.loads((tmp_path / "a.json").read_text())
        assert {c["reason"] for c in report["cells"]} == {"GPS_SUM_AT_ONE"}

    def test_estimate_strict_exit_code(self, exhausted_csv, tmp_path, capsys):
        assert main(["estimate", "-i", str(exhausted_csv), "--strict"]) == 2
        assert "error[NOT_IDENTIFIED_EVERYWHERE]" in capsys.readouterr().err
        assert main(["estimate", "-i", str(exhausted_csv), "-o", str(tmp_path / "e.json")]) == 0
        assert json.loads((tmp_path / "e.json").read_text())["ate"] is None

    def test_input_errors_exit_1(self, tmp_path, capsys):
        assert main(["audit", "-i", str(tmp_path / "missing.csv")]) == 1
        assert "error[FILE_NOT_FOUND]" in capsys.readouterr().err
        bad = write(tmp_path, "bad.csv", "y,t,v\nfoo,0,a\n")
        assert main(["estimate", "-i", str(bad)]) == 1
        assert "error[BAD_VALUE]" in capsys.readouterr().err
        assert main(["audit"]) == 1
        assert main(["audit", "-i", str(bad), "--overlap-delta", "0.7"]) == 1

    def test_quantile_bins(self, tmp_path, capsys):
        out = tmp_path / "c.csv"
        assert main(["simulate", "--preset", "continuous", "--n", "20000", "-o", str(out)]) == 0
        header = out.read_text().splitlines()[0]
        assert header == "y,x1,x2,v1"
        assert main(["estimate", "-i", str(out), "--bins", "5"]) == 0
        assert main(["estimate", "-i", str(out)]) == 1  # labels required without --bins
        assert "error[BAD_SCHEME]" in capsys.readouterr().err

    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "--n", "5000", "--sums", "0.5,0.9,1.0", "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "sum,verdict,ate_error"
        assert lines[1].startswith("0.5,IDENTIFIED,")
        assert lines[3] == "1.0,NOT_IDENTIFIED,"

    def test_config_precedence_and_emit(self, tmp_path, capsys):
        cfg = write(tmp_path, "cfg.json", json.dumps({"overlap_delta": 0.05, "min_cell_size": 7}))
        assert main(["audit", "-i", "x.csv", "--config", str(cfg), "--min-cell-size", "9", "--emit-config"]) == 0
        resolved = json.loads(capsys.readouterr().out)
        assert resolved["overlap_delta"] == 0.05
        assert resolved["min_cell_size"] == 9
        assert resolved["lambda_threshold"] == 1e-6
        bad = write(tmp_path, "bad.json", json.dumps({"nope": 1}))
        assert main(["audit", "-i", "x.csv", "--config", str(bad)]) == 1

    def test_byte_identical_outputs(self, tmp_path):
        def pipeline(d):
            d.mkdir()
            main(["simulate", "--n", "3000", "--seed", "5", "-o", str(d / "data.csv")])
            main(["audit", "-i", str(d / "data.csv"), "-o", str(d / "audit.json")])
            main(["estimate", "-i", str(d / "data.csv"), "-o", str(d / "est.json")])
            return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

        a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
        assert set(a) == {"data.csv", "data.meta.json", "audit.json", "est.json"}
        assert a == b
