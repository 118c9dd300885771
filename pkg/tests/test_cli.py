import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from ferret.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main

CONFIGS = Path(__file__).parents[1] / "configs"


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    shutil.copy(CONFIGS / "tiny.json", path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestPlan:
    def test_writes_plan(self, tiny, tmp_path, capsys):
        assert run("plan", "--config", tiny, "--out", tmp_path / "o") == EXIT_OK
        plan = json.loads((tmp_path / "o" / "plan.json").read_text())
        assert plan["format"] == "ferret-plan v1" and plan["budget"] == "inf"
        assert "predicted rate" in capsys.readouterr().out

    def test_budget_respected(self, tiny, tmp_path):
        assert run("plan", "--config", tiny, "--budget", "1500", "--out", tmp_path) == EXIT_OK
        assert json.loads((tmp_path / "plan.json").read_text())["memory"] <= 1500

    def test_infeasible_budget(self, tiny, tmp_path, capsys):
        assert run("plan", "--config", tiny, "--budget", "10", "--out", tmp_path) == EXIT_INFEASIBLE
        assert "infeasible" in capsys.readouterr().err

    def test_bad_budget(self, tiny, tmp_path):
        assert run("plan", "--config", tiny, "--budget", "lots", "--out", tmp_path) == EXIT_CONFIG

    def test_missing_config(self, tmp_path, capsys):
        assert run("plan", "--config", tmp_path / "none.json", "--out", tmp_path) == EXIT_CONFIG
        assert "not found" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"format": "ferret-config v1", "colour": "red"}))
        assert run("plan", "--config", p, "--out", tmp_path) == EXIT_CONFIG


class TestSimulate:
    def test_from_config_and_from_plan(self, tiny, tmp_path):
        assert run("plan", "--config", tiny, "--out", tmp_path / "p") == EXIT_OK
        assert run("simulate", "--config", tiny, "--out", tmp_path / "a", "--items", 60) == EXIT_OK
        assert run("simulate", "--config", tiny, "--plan", tmp_path / "p" / "plan.json",
                   "--out", tmp_path / "b", "--items", 60) == EXIT_OK
        for name in ("trace.txt", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        plan = json.loads((tmp_path / "p" / "plan.json").read_text())
        assert summary["peak_memory"] == plan["memory"]

    def test_mismatched_plan(self, tiny, tmp_path):
        p = tmp_path / "plan.json"
        p.write_text(json.dumps({"format": "ferret-plan v1", "bounds": [0, 1], "workers": [
            {"c_d": 0, "c_r": 0, "c_a": [1], "c_o": [0]}], "modulus": 1, "t_d": 1.0,
            "memory": 1, "rate": 0.1, "n_layers": 1}))
        assert run("simulate", "--config", tiny, "--plan", p, "--out", tmp_path) == EXIT_CONFIG


class TestTrainCompareReport:
    def test_pipeline(self, tiny, tmp_path, capsys):
        out = tmp_path / "o"
        assert run("train", "--config", tiny, "--seed", "0", "--out", out) == EXIT_OK
        rows = (out / "records.csv").read_text().splitlines()
        assert len(rows) == 2 and rows[1].startswith("tiny,ferret_M+,")
        assert run("compare", "--config", tiny, "--seed", "0,1", "--out", out) == EXIT_OK
        assert len((out / "results.csv").read_text().splitlines()) == 1 + 4 * 2
        assert run("report", out / "records.csv", "--baseline", "one_skip", "--out", out) == EXIT_OK
        assert (out / "report.csv").read_text() == (out / "results.csv").read_text()
        assert "wrote" in capsys.readouterr().out

    def test_report_missing_baseline(self, tiny, tmp_path):
        assert run("train", "--config", tiny, "--seed", "0", "--out", tmp_path) == EXIT_OK
        assert run("report", tmp_path / "records.csv", "--baseline", "oracle", "--out", tmp_path) == EXIT_CONFIG


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ferret.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("plan", "simulate", "train", "compare", "report"):
        assert cmd in res.stdout


def test_bad_seed_list(tiny):
    with pytest.raises(SystemExit):
        run("plan", "--config", tiny, "--seed", "a,b")
