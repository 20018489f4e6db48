import json

import numpy as np
import pytest

from granmpc import export
from granmpc.cli import main


def test_simulate(tmp_path, capsys):
    assert main(["simulate", "--t-end", "2", "--out", str(tmp_path)]) == 0
    cols = export.read_csv(tmp_path / "simulate.csv")
    assert cols["time"].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
    assert json.loads(capsys.readouterr().out)["output"].endswith("simulate.csv")


def test_oracle(tmp_path):
    assert main(["oracle", "--n", "500", "--t-end", "5", "--outputs", "6", "--seed", "3",
                 "--out", str(tmp_path)]) == 0
    cols = export.read_csv(tmp_path / "oracle.csv")
    assert len(cols["time"]) == 6 and set(cols["seed"].tolist()) == {3}
    assert set(cols["N"].tolist()) == {500}


def test_pce_validate(tmp_path):
    assert main(["pce-validate", "--samples", "2000", "--out", str(tmp_path)]) == 0
    rep = export.read_json(tmp_path / "pce_validation.json")
    assert len(rep["steps"]) == 3
    assert (tmp_path / "pce_hist_step1.csv").exists()


def test_campaign_and_compare(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"total_time": 2.0, "runs": 2}))
    for c in ("smpc", "nmpc"):
        assert main(["campaign", "--controller", c, "--config", str(cfg), "--runs", "1",
                     "--seed", "5", "--out", str(tmp_path / c)]) == 0
        assert export.read_json(tmp_path / c / "summary.json")["n_runs"] == 1
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "smpc" / "summary.json"),
                 str(tmp_path / "nmpc" / "summary.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["a"]["controller"] == "smpc" and rep["b"]["controller"] == "nmpc"


def test_failure_emits_error_json(tmp_path, capsys):
    assert main(["compare", str(tmp_path / "missing.json"), str(tmp_path / "x.json")]) != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "FileNotFoundError"


def test_bad_config_fails_cleanly(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"runs": 0}))
    assert main(["campaign", "--config", str(cfg), "--out", str(tmp_path)]) != 0
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ValueError"


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code != 0
