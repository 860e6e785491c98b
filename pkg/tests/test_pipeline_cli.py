import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fedecg.cli import main
from fedecg.errors import ConfigurationError
from fedecg.pipeline import ExperimentConfig, SynthSpec, prepare_data, run_scenario, with_overrides
from fedecg.report import compare, make_report

CLASSES = ["NSR", "STach", "SB"]


def small_config(**kw):
    base = dict(scenario="FL-IID", model="DNN", model_options={"hidden_layers": 1, "hidden_units": 16},
                synthetic=SynthSpec(classes=tuple(CLASSES), per_class=30, seed=3), k_features=24,
                n_clients=2, rounds=2, delta=0.0, out="unused")
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def prepared():
    return prepare_data(small_config())


def test_config_roundtrip_and_validation(tmp_path):
    cfg = small_config(n_clients=(2, 3))
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.client_counts == (2, 3)
    assert with_overrides(cfg, scenario="CL").client_counts == (1,)
    for bad in ({"scenario": "FL"}, {"model": "CNN"}, {"balancing": "ADASYN"}, {"k_features": 0}):
        with pytest.raises(ConfigurationError):
            small_config(**bad)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"colour": "red"})


def test_fl_run_records_clients_and_report(prepared, tmp_path):
    res = run_scenario(small_config(), prepared, 2)
    assert len(res.artifacts.audit["clients"]) == 2
    assert len(res.artifacts.selected) == 24
    out = make_report(res, tmp_path / "rep")
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["partition"] == "IID" and metrics["rounds"] == len(res.history.rounds)
    assert 0.0 <= metrics["test"]["f1"] <= 1.0
    rows = list(csv.DictReader(open(out / "rounds.csv")))
    assert len(rows) == metrics["rounds"]
    timing = json.loads((out / "timing.json").read_text())
    assert timing["total_minutes"] == pytest.approx(timing["total_seconds"] / 60)
    clients = json.loads((out / "clients.json").read_text())
    assert "global_histogram" in clients and len(clients["balance_plans"]) == 2


def test_reports_are_reproducible_except_durations(prepared, tmp_path):
    cfg = small_config(scenario="FL-NonIID", model="LSTM", model_options={"units": 5})
    a = make_report(run_scenario(cfg, prepared, 2), tmp_path / "a")
    b = make_report(run_scenario(cfg, prepared, 2), tmp_path / "b")
    for name in ("metrics.json", "config.json", "per_class.csv", "clients.json", "importance.csv",
                 "scaler.json", "model.bin", "model.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert json.loads((a / "metrics.json").read_text())["partition"] == "NonIID"


def test_centralised_run_uses_one_client(prepared):
    res = run_scenario(small_config(scenario="CL", n_clients=4), prepared)
    assert res.n_clients == 1 and len(res.history.rounds[0].clients) == 1


def test_compare_orders_rows(prepared, tmp_path):
    dirs = []
    for scen in ("FL-IID", "CL"):
        res = run_scenario(small_config(scenario=scen), prepared)
        dirs.append(make_report(res, tmp_path / scen))
    rows = compare(dirs)
    assert [r["scenario"] for r in rows] == ["CL", "FL-IID"]
    with pytest.raises(FileNotFoundError):
        compare([dirs[0], tmp_path / "missing"])


def test_cli_synth_run_compare(tmp_path, capsys):
    assert main(["synth", "--classes", "NSR,SB", "--per-class", "4", "--seed", "2",
                 "--out", str(tmp_path / "ds")]) == 0
    assert "[synth] NSR,4" in capsys.readouterr().out
    manifest = next((tmp_path / "ds").glob("*.csv"))
    assert len(list((tmp_path / "ds").rglob("*.csv"))) >= 9
    cfg = small_config(n_clients=[2, 3]).to_dict()
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "sweep")]) == 0
    out = capsys.readouterr().out
    assert out.count("[run]") == 2 and "f1=" in out
    reports = sorted(str(p) for p in (tmp_path / "sweep").iterdir())
    assert [Path(p).name for p in reports] == ["FL-IID_N2", "FL-IID_N3"]
    assert main(["compare", *reports, "--out", str(tmp_path / "cmp.csv")]) == 0
    lines = (tmp_path / "cmp.csv").read_text().splitlines()
    assert lines[0] == "scenario,model,balancing,n_clients,f1,accuracy,seconds" and len(lines) == 3
    assert manifest.exists()


def test_cli_user_errors_exit_one(tmp_path, capsys):
    assert main(["synth", "--classes", "MI", "--out", str(tmp_path / "x")]) == 1
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "bad.json")]) == 1
    err = capsys.readouterr().err
    assert err.count("error: ") >= 4


def test_cli_usage_error_via_subprocess():
    proc = subprocess.run([sys.executable, "-m", "fedecg.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "fedecg.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
