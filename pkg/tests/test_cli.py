import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from plateau_dyn.cli import analyze_array, load_dataset, main, read_config_file, resolve_config
from plateau_dyn.state import Trajectory

THREE_LEVELS = "0.4:0.5,1.2:0.3,1.6:0.2"
IRIS = Path(__file__).parent / "data" / "iris.csv"


def _table(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    cols = lines[0].split(",")
    return [dict(zip(cols, ln.split(","))) for ln in lines[1:]]


def test_config_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# settings\neta = 0.3\nK = 3\nseeds = 4, 5\nspectrum = \"1.0:1.0\"\n")
    assert read_config_file(conf)["seeds"] == [4, 5]
    cfg = resolve_config("macro", {"eta": 0.7}, conf)
    assert cfg.eta == 0.7 and cfg.K == 3 and cfg.seeds == [4, 5]
    assert resolve_config("macro", {}).eta == 0.1


def test_unknown_config_key_is_a_usage_error(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("learning_rate = 0.1\n")
    assert main(["macro", "--config", str(conf), "--out", str(tmp_path)]) == 1


def test_bad_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["macro", "--eta", "fast"])
    assert exc.value.code == 1


def test_macro_writes_curve_state_and_report(tmp_path):
    args = ["macro", "--spectrum", THREE_LEVELS, "--t-end", "200", "--n-effective", "1e4", "--out", str(tmp_path)]
    assert main(args) == 0
    text = (tmp_path / "macro.csv").read_text()
    assert text.startswith("# plateau-dyn") and "config_sha256=" in text
    traj = Trajectory.from_csv(tmp_path / "macro.csv")
    assert traj.K == 2 and traj.M == 2 and traj.alpha[-1] == pytest.approx(200.0)
    assert "found" in json.loads((tmp_path / "plateau.json").read_text())
    # resuming from the saved state continues the curve
    out2 = tmp_path / "resumed"
    assert main(["macro", "--spectrum", THREE_LEVELS, "--t-end", "10", "--resume",
                 str(tmp_path / "final_state.json"), "--out", str(out2)]) == 0
    resumed = Trajectory.from_csv(out2 / "macro.csv")
    assert resumed.eps_g[0] == pytest.approx(traj.eps_g[-1], rel=1e-12)


def test_outputs_are_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["micro", "--spectrum", THREE_LEVELS, "--N", "500", "--t-end", "20",
                     "--engine", "weights", "--seeds", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "micro.csv").read_bytes() == (tmp_path / "b" / "micro.csv").read_bytes()


def test_compare_report(tmp_path, capsys):
    assert main(["compare", "--spectrum", THREE_LEVELS, "--N", "2000", "--t-end", "50", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "compare_report.json").read_text())
    assert report["engine"] == "subspace"
    assert 0 <= report["mean_abs_log10_gap"] <= report["max_abs_log10_gap"] < 0.2
    assert (tmp_path / "micro.csv").exists() and (tmp_path / "macro.csv").exists()


def test_sweep_is_independent_of_job_count(tmp_path):
    base = ["sweep-mu1", "--grid", "2,4", "--eta", "0.5", "--dt", "0.1", "--stop-below", "1e-6"]
    assert main(base + ["--out", str(tmp_path / "serial")]) == 0
    assert main(base + ["--out", str(tmp_path / "parallel"), "--jobs", "2"]) == 0
    serial = (tmp_path / "serial" / "plateau_table.csv").read_text()
    assert serial == (tmp_path / "parallel" / "plateau_table.csv").read_text()
    rows = _table(tmp_path / "serial" / "plateau_table.csv")
    assert [r["mu1"] for r in rows] == ["2.0", "4.0"]
    assert {p.name for p in (tmp_path / "serial" / "curves").iterdir()} == {"mu1_2_seed0.csv", "mu1_4_seed0.csv"}


def test_invalid_delta_lambda(tmp_path, capsys):
    assert main(["sweep-mu2", "--mu1", "1", "--grid", "0.5,2.0", "--out", str(tmp_path)]) == 1
    assert "delta_lambda" in capsys.readouterr().err


def test_numerical_failure_exits_two(tmp_path):
    state = {"Q": [[[float("nan"), 0], [0, 1]]], "R": [[[0, 0], [0, 0]]], "T": [[[1, 0], [0, 1]]],
             "D": [[1, 1], [1, 1]], "E": [[1, 1], [1, 1]], "F": [[1, 1], [1, 1]]}
    path = tmp_path / "nan.json"
    path.write_text(json.dumps(state))
    assert main(["macro", "--resume", str(path), "--t-end", "1", "--out", str(tmp_path)]) == 2


def test_analyze_iris(tmp_path):
    assert main(["analyze-dataset", str(IRIS), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "moments_report.json").read_text())
    assert report["mu"]["1"] == pytest.approx(15.8988, rel=1e-4)
    assert report["normalization"].startswith("uncentered")
    centered = analyze_array(load_dataset(IRIS), center=True)
    assert centered["mu"]["1"] == pytest.approx(1.1356, rel=1e-3)


def test_analyze_reports_parse_errors_and_degenerate_data(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["analyze-dataset", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.csv:2" in capsys.readouterr().err
    zeros = tmp_path / "zeros.npy"
    np.save(zeros, np.zeros((5, 3)))
    assert main(["analyze-dataset", str(zeros), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "moments_report.json").read_text())["warnings"]


def test_scale_option():
    data = np.array([[255.0, 0.0], [0.0, 255.0]])
    assert analyze_array(data, scale=1 / 255)["mu"]["1"] == pytest.approx(0.5)


def test_gauss_check_command(tmp_path, capsys):
    assert main(["gauss-check", "--n-matrices", "3", "--samples", "20000", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "I2" in out and "I4" in out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "plateau_dyn", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()


def test_compare_without_learning_is_flat(tmp_path):
    assert main(["compare", "--spectrum", THREE_LEVELS, "--N", "1000", "--eta", "0", "--t-end", "20",
                 "--out", str(tmp_path)]) == 0
    micro_t = Trajectory.from_csv(tmp_path / "micro.csv")
    macro_t = Trajectory.from_csv(tmp_path / "macro.csv")
    assert np.ptp(micro_t.eps_g) == 0.0 and np.ptp(macro_t.eps_g) == 0.0
    assert abs(micro_t.eps_g[0] - macro_t.eps_g[0]) < 1e-10


def test_compare_with_shared_weights(tmp_path):
    assert main(["compare", "--spectrum", THREE_LEVELS, "--N", "1000", "--t-end", "30", "--seeds", "1,2",
                 "--weight-seed", "9", "--out", str(tmp_path)]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"macro.csv", "micro_seed1.csv", "micro_seed2.csv"} <= names
    a = Trajectory.from_csv(tmp_path / "micro_seed1.csv")
    b = Trajectory.from_csv(tmp_path / "micro_seed2.csv")
    assert a.eps_g[0] == b.eps_g[0] and not np.array_equal(a.eps_g, b.eps_g)


def test_sweep_mu2_records_second_moment(tmp_path):
    args = ["sweep-mu2", "--mu1", "1", "--grid", "1.0", "--eta", "0.5", "--dt", "0.1",
            "--stop-below", "1e-6", "--out", str(tmp_path)]
    assert main(args) == 0
    (row,) = _table(tmp_path / "plateau_table.csv")
    assert float(row["mu2"]) == 1.25 and row["delta_lambda"] == "1.0"
