import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from wavesbl.cli import main
from wavesbl.storage import read_snapshot
from wavesbl.switching import MarkovPath

REDUCED_2D_GRID = {"dx": float(np.pi / 32), "dt": 0.02}


def _cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


@pytest.fixture(scope="module")
def case1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("case1")
    assert main(["reproduce", "case1", "--out", str(out)]) == 0
    return out


def test_reproduce_case1_outputs(case1_run):
    for name in ("path.csv", "u.csv", "y.csv", "config.yaml", "report.json", "table.csv",
                 "heatmap.csv", "comparison.csv", "run.log"):
        assert (case1_run / name).exists(), name
    report = json.loads((case1_run / "report.json").read_text())
    assert report["case"] == "case1"
    assert len(report["segments"]) == 7
    worst = max(max(s["error_percent"].values()) for s in report["segments"])
    assert worst <= 5.0
    comparison = (case1_run / "comparison.csv").read_text()
    assert "0.9994" in comparison.splitlines()[1]


def test_snapshot_size(case1_run):
    path = MarkovPath.from_csv(case1_run / "path.csv")
    u = read_snapshot(case1_run / "u.csv", path)
    assert u.shape == (401, 701)
    assert u.n_segments == 7


def test_reports_are_deterministic(case1_run, tmp_path):
    assert main(["reproduce", "case1", "--out", str(tmp_path)]) == 0
    for name in ("report.json", "table.csv", "comparison.csv", "heatmap.csv", "y.csv"):
        assert (tmp_path / name).read_bytes() == (case1_run / name).read_bytes(), name
    # timestamps live in the log only
    assert (tmp_path / "run.log").read_text()[:4].isdigit()


def test_infer_from_files(case1_run, tmp_path, capsys):
    rc = main(["infer", "--case", "sg", "--data", str(case1_run / "y.csv"),
               "--path", str(case1_run / "path.csv"), "--out", str(tmp_path)])
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["segments"]) == 7
    assert "max error" in capsys.readouterr().out


def test_simulate_summary(tmp_path, capsys):
    assert main(["simulate", "--case", "kg", "--out", str(tmp_path), "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert "CFL" in out and "5 segments" in out
    cfg = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert cfg["noise"]["seed"] == 5


def test_single_model_on_2d(tmp_path):
    rc = main(["reproduce", "case3", "--config", _cfg(tmp_path, {"grid": REDUCED_2D_GRID}),
               "--out", str(tmp_path / "run")])
    assert rc == 0
    run = tmp_path / "run"
    report = json.loads((run / "report.json").read_text())
    coef = report["single_model"]["estimate"]["lap(u)"]
    assert 1.0 < coef < 3.0
    assert max(s["error_percent"]["lap(u)"] for s in report["single_model_states"]) >= 10.0
    assert "2.2293" in (run / "comparison.csv").read_text()
    assert (run / "heatmap_single.csv").exists()
    assert (run / "u.bin").exists()


def test_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("WAVESBL_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--case", "case2"]) == 0
    # 513 x 2561 nodes is past the CSV limit, so binary is chosen
    assert (tmp_path / "env" / "u.bin").exists()
    assert (tmp_path / "env" / "path.csv").exists()


def test_truncated_csv_is_parse_error(case1_run, tmp_path, capsys):
    lines = (case1_run / "y.csv").read_text().splitlines()
    bad = tmp_path / "y.csv"
    bad.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    rc = main(["infer", "--case", "case1", "--data", str(bad),
               "--path", str(case1_run / "path.csv"), "--out", str(tmp_path)])
    assert rc == 7
    assert "ParseError" in capsys.readouterr().err


def test_unknown_case_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["reproduce", "case9"])
    assert info.value.code == 2


def test_missing_config_is_usage_error(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 2


def test_unknown_key_exit(tmp_path):
    assert main(["simulate", "--config", _cfg(tmp_path, {"case": "case1", "grd": {}}),
                 "--out", str(tmp_path)]) == 2


def test_cfl_violation_exit(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"case": "case1", "grid": {"dx": 0.01, "steps_per_segment": 10}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 4
    assert "StabilityError" in capsys.readouterr().err


def test_bad_path_exit(tmp_path):
    cfg = _cfg(tmp_path, {"case": "case1", "markov": {"fixed": {
        "jump_times": [0.0, 2.0, 1.0], "values": [1.0, 0.5, 1.0], "horizon": 8.0}}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_data_error_exit(tmp_path):
    cfg = _cfg(tmp_path, {"case": "case1", "noise": {"smooth_window": 201}})
    assert main(["reproduce", "case1", "--config", cfg, "--out", str(tmp_path)]) == 5


def test_all_segments_failed_exit(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"case": "case2", "inference": {"stride": 10_000_000}})
    assert main(["reproduce", "case2", "--config", cfg, "--out", str(tmp_path)]) == 6
    assert "failed" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "wavesbl", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("wavesbl")
