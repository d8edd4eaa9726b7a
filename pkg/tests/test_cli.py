import json

import numpy as np
import pytest

from fairlens.cli import main
from fairlens.dataio import format_csv, load_csv, read_csv_text, write_csv
from fairlens.dsl import Bindings
from fairlens.errors import CsvParseError, MissingColumn, NonBinaryColumn
from fairlens.presets import preset, preset_names, preset_source
from fairlens.report import build_report, dumps
from fairlens.scm import sample


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- CSV

def test_three_row_file(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("A,Q,D,Y\n1,0.5,4.2,1.1\n0,-0.3,0.7,0.2\n1,1.0,5.0,2.0\n")
    ds = load_csv(path)
    assert len(ds) == 3
    assert ds.names == ["A", "Q", "D", "Y"]
    assert ds[1] == {"A": 0.0, "Q": -0.3, "D": 0.7, "Y": 0.2}
    assert len(ds.provenance["sha256"]) == 64


def test_group_column_must_be_binary(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("g,y,p\n0,1,1\n2,0,0\n")
    with pytest.raises(NonBinaryColumn):
        load_csv(path, Bindings("g", "y", prediction="p"))


def test_missing_bound_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("g,y\n0,1\n")
    with pytest.raises(MissingColumn):
        load_csv(path, Bindings("g", "y", prediction="p"))


def test_parse_error_coordinates():
    with pytest.raises(CsvParseError) as info:
        read_csv_text("a,b\n1,2\n3,x\n")
    assert (info.value.row, info.value.column) == (3, "b")
    with pytest.raises(CsvParseError):
        read_csv_text("a,b\n1\n")
    with pytest.raises(CsvParseError):
        read_csv_text("")


def test_sample_write_load_round_trip(tmp_path):
    ds = sample(preset("mediation").model, 500, seed=4)
    path = tmp_path / "s.csv"
    write_csv(ds, path)
    back = load_csv(path)
    assert back.names == ds.names
    for n in ds.names:
        assert np.array_equal(back.column(n), ds.column(n))
    assert format_csv(back) == path.read_text()


# ---------------------------------------------------------------- CLI

def test_pse_direct_link(capsys):
    code, out, _ = run(capsys, "effects", "college", "--kind", "pse", "--active-edges", "A->Y", "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["value"] == pytest.approx(-1.0, abs=1e-12)  # direct A->Y coefficient of the college preset


def test_effects_text_table(capsys):
    code, out, _ = run(capsys, "effects", "mediation", "--kind", "ate")
    assert code == 0
    assert "12.5" in out
    assert "quantity" in out.splitlines()[0]


def test_effects_with_spec_file(tmp_path, capsys):
    path = tmp_path / "m.cg"
    path.write_text(preset_source("mediation"))
    code, out, _ = run(capsys, "effects", path, "--kind", "pse", "--active-edges", "A->Y,A->M", "--json")
    assert code == 0
    assert json.loads(out)["value"] == pytest.approx(13.0, abs=1e-12)


def test_effects_mc(capsys):
    code, out, _ = run(capsys, "effects", "confounded", "--kind", "backdoor", "--adjust", "C", "--method", "mc",
                       "--n", 50000, "--seed", 3, "--json")
    payload = json.loads(out)
    assert code == 0
    assert abs(payload["value"] - 1.0) <= 4 * payload["std_error"]


def test_audit_hiring(capsys):
    code, out, _ = run(capsys, "audit", "hiring", "--json")
    assert code == 0
    payload = json.loads(out)
    paths = [p for p in payload["audit"]["paths"] if p["target"] == "Y"]
    assert [p["kind"] for p in paths] == ["back_door"]
    assert paths[0]["problematic"] is False


def test_audit_text(capsys):
    code, out, _ = run(capsys, "audit", "college")
    assert code == 0
    assert "causal paths to Y: 2" in out


def test_sample_command(tmp_path, capsys):
    out_path = tmp_path / "s.csv"
    code, out, _ = run(capsys, "sample", "college", "--n", 100, "--seed", 5, "--out", out_path)
    assert code == 0
    assert len(load_csv(out_path)) == 100
    again = tmp_path / "t.csv"
    run(capsys, "sample", "college", "--n", 100, "--seed", 5, "--workers", 4, "--out", again)
    assert out_path.read_bytes() == again.read_bytes()


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("FAIRLENS_SEED", "77")
    run(capsys, "sample", "college", "--n", 10, "--out", a)
    monkeypatch.delenv("FAIRLENS_SEED")
    run(capsys, "sample", "college", "--n", 10, "--seed", 77, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_counterfactual_values(capsys):
    code, out, _ = run(capsys, "counterfactual", "college", "--values", "A=1,Q=0,D=0,Y=2", "--flip", "1:0",
                       "--unfair-edges", "A->Y", "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["path_specific"]["value"] == pytest.approx(3.0, abs=1e-12)


def test_counterfactual_text(capsys):
    code, out, _ = run(capsys, "counterfactual", "college", "--values", "A=1,Q=0.2,D=5.2,Y=2")
    assert code == 0
    assert "fair prediction" in out
    assert "1.2" in out  # corrected D = 5.2 - 4


def test_metrics_perfect_predictions(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("g,y,p\n0,1,1\n0,0,0\n1,1,1\n1,0,0\n0,1,1\n1,0,0\n")
    code, out, _ = run(capsys, "metrics", "--data", path, "--group", "g", "--label", "y", "--pred", "p", "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["error_rate_parity"]["fpr"]["gap"] == 0.0
    assert payload["error_rate_parity"]["fnr"]["gap"] == 0.0
    assert payload["predictive_parity"]["gap"] == 0.0


def test_metrics_scores_and_curve(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("g,y,r\n0,1,0.9\n0,0,0.2\n1,1,0.6\n1,0,0.4\n")
    code, out, _ = run(capsys, "metrics", "--data", path, "--group", "g", "--label", "y", "--score", "r",
                       "--curve", "0.1,0.5,0.9", "--bins", 5)
    assert code == 0
    assert "threshold" in out
    assert "max calibration gap" in out


def test_metrics_counts(capsys):
    code, out, _ = run(capsys, "metrics", "--counts", "compas-rates", "--json")
    payload = json.loads(out)
    assert code == 0
    assert payload["demographic_parity"]["gap"] == pytest.approx(0.25, abs=1e-3)


@pytest.mark.parametrize("argv, code", [
    (["frobnicate"], 2),
    (["effects", "nope", "--kind", "ate"], 2),
    (["effects", "college", "--kind", "pse"], 2),
    (["effects", "collider-web", "--kind", "backdoor", "--adjust", "C"], 3),
    (["effects", "music", "--kind", "ett"], 3),
    (["effects", "college", "--kind", "pse", "--active-edges", "D->Y"], 3),
    (["metrics", "--data", "x.csv"], 2),
])
def test_exit_codes(capsys, argv, code):
    got, _, err = run(capsys, *argv)
    assert got == code
    if code != 2 or argv[0] != "frobnicate":
        assert json.loads(err.strip().splitlines()[-1])["exit_code"] == code


def test_numeric_exit_code(tmp_path, capsys):
    path = tmp_path / "s.cg"
    nodes = " ".join(f"node N{i}" for i in range(10))
    edges = " ".join(f"edge N{i} -> N{j}" for i in range(10) for j in range(i + 1, 10))
    path.write_text(f"graph big {{ {nodes} {edges} }}")
    text = path.read_text().replace("node N0", "node N0 { role: sensitive }").replace(
        "node N9", "node N9 { role: outcome }")
    path.write_text(text)
    code, _, err = run(capsys, "audit", path)
    assert code == 4
    assert json.loads(err)["error"] == "PathBudgetExceeded"


def test_semantic_error_exit(tmp_path, capsys):
    path = tmp_path / "bad.cg"
    path.write_text("graph g {\n  node Y { kind: linear, coef: { Z: 1 } }\n}\n")
    code, _, err = run(capsys, "audit", path)
    assert code == 3
    assert json.loads(err)["error"] == "SemanticError"


# ---------------------------------------------------------------- report

def test_report_sections_and_values():
    spec = preset("confounded")
    report = build_report(spec, preset_source("confounded").encode(), seed=1, n_mc=1000, n_cf=100)
    assert report["schema"] == 1
    eff = report["sections"]["effects"]
    assert eff["ate"]["value"] == pytest.approx(1.0)
    assert eff["nci"]["value"] == pytest.approx(1.2)
    assert eff["observed_gap"]["value"] == pytest.approx(2.2)
    assert eff["backdoor"]["adjustment"] == ["C"]
    assert set(report["sections"]) == {"audit", "recommendation", "effects", "counterfactuals", "metrics"}


def test_report_with_data(tmp_path, capsys):
    spec_path = tmp_path / "s.cg"
    text = preset_source("college").rstrip().rstrip("}") + "  bind { group: A, label: L, score: R }\n}\n"
    spec_path.write_text(text)
    rng = np.random.default_rng(0)
    rows = ["A,Q,D,Y,L,R"]
    for _ in range(200):
        a = int(rng.integers(0, 2))
        r = float(rng.uniform())
        rows.append(f"{a},{rng.normal()},{rng.normal()},{rng.normal()},{int(rng.uniform() < r)},{r}")
    data_path = tmp_path / "d.csv"
    data_path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "r.json"
    code, _, err = run(capsys, "report", spec_path, "--data", data_path, "--out", out, "--n", 2000)
    assert code == 0, err
    report = json.loads(out.read_text())
    assert report["sections"]["metrics"]["source"] == "data"
    assert "calibration" in report["sections"]["metrics"]
    assert report["sections"]["counterfactuals"]["source"] == "data"
    assert "data_sha256" in report["inputs"]


@pytest.mark.parametrize("name", preset_names())
def test_report_is_json_and_deterministic(name):
    spec = preset(name)
    raw = preset_source(name).encode()
    one = dumps(build_report(spec, raw, seed=42, n_mc=2000, n_cf=200))
    two = dumps(build_report(spec, raw, seed=42, workers=4, n_mc=2000, n_cf=200))
    assert one == two
    json.loads(one)
    assert "NaN" not in one
