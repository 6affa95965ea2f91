import json
import os
import sys
import textwrap

import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.cli.main import main
from semires.domain.constants import EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK

CLASSIFY = """
schema_version = 1
kind = "classify"

[potential]
family = "degenerate_bump"
params = { m = 2 }

[grid]
half_width = 5.0
spacing = 0.002
"""

SWEEP_ONE_H = """
schema_version = 1
kind = "sweep"

[potential]
family = "degenerate_bump"
params = { m = 2 }

[grid]
half_width = 5.0
spacing = 0.002

[sweep]
h_list = [0.1]
"""

GEVREY = """
schema_version = 1
kind = "gevrey"

[potential]
family = "gevrey_flat"
params = { p = 2 }
tau = 3.0

[gevrey]
x0 = 0.0
k_max = 4
sample_range = [0.1, 0.3, 12]
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
    return str(path)


def test_classify_writes_three_artifacts(tmp_path):
    cfg = _write(tmp_path, "classify.toml", CLASSIFY)
    out = tmp_path / "out"
    assert main(["classify", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert sorted(os.listdir(out)) == ["data.csv", "plot.script", "report.json"]
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["schema_version"] == 1
    assert report["kind"] == "classify"
    assert report["exit_code"] == EXIT_OK
    comps = report["classification"]["components"]
    assert len(comps) == 1
    assert comps[0]["predicted_gamma"] == pytest.approx(1.3333, abs=1e-4)
    header = (out / "data.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "x,v0,v1,v0p,v0pp"
    assert "set datafile separator ','" in (out / "plot.script").read_text(encoding="utf-8")


def test_classify_is_deterministic(tmp_path):
    cfg = _write(tmp_path, "classify.toml", CLASSIFY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(b)]) == EXIT_OK
    for name in ("report.json", "data.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_rerun_replaces_previous_output(tmp_path):
    cfg = _write(tmp_path, "classify.toml", CLASSIFY)
    out = tmp_path / "out"
    out.mkdir()
    (out / "stale.txt").write_text("old", encoding="utf-8")
    assert main(["classify", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert not (out / "stale.txt").exists()
    assert [p for p in os.listdir(tmp_path) if ".tmp-" in p or ".old-" in p] == []


def test_sweep_with_one_h_is_inconclusive(tmp_path):
    cfg = _write(tmp_path, "sweep.toml", SWEEP_ONE_H)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_INCONCLUSIVE
    rows = (out / "data.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "h,z,norm,iterations,converged,grid_n,cap_eta"
    assert len(rows) == 2
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["verdict"] == "inconclusive"
    assert report["z"] == pytest.approx(1.0)
    assert report["fits"] == {"pure_power": None, "power_log": None}


def test_gevrey_run_passes(tmp_path):
    cfg = _write(tmp_path, "gevrey.toml", GEVREY)
    out = tmp_path / "gevrey"
    assert main(["gevrey", "--config", cfg, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["passes"] is True
    assert (out / "data.csv").read_text(encoding="utf-8").splitlines()[0] == "k,s,ratio"


def test_output_root_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path, "classify.toml", CLASSIFY)
    monkeypatch.setenv("SEMIRES_OUTPUT_ROOT", str(tmp_path / "runs"))
    assert main(["classify", "--config", cfg]) == EXIT_OK
    assert (tmp_path / "runs" / "classify" / "report.json").is_file()


def test_validate_reports_problems(tmp_path, capsys):
    bad = _write(tmp_path, "bad.toml", SWEEP_ONE_H.replace("h_list = [0.1]", "h_list = [0.05, 0.1]"))
    assert main(["validate", "--config", bad]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert "sweep.h_list" in err
    assert f"{bad}:13:" in err
    good = _write(tmp_path, "good.toml", CLASSIFY)
    assert main(["validate", "--config", good]) == EXIT_OK


def test_run_with_unknown_kind_fails(tmp_path):
    cfg = _write(tmp_path, "odd.toml", CLASSIFY.replace('kind = "classify"', 'kind = "torus"'))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_ERROR
    assert not (tmp_path / "x").exists()


def test_invalid_config_exits_one_without_output(tmp_path):
    cfg = _write(tmp_path, "bad.toml", CLASSIFY.replace('"degenerate_bump"', '"torus"'))
    out = tmp_path / "out"
    assert main(["classify", "--config", cfg, "--out", str(out)]) == EXIT_ERROR
    assert not out.exists()


def test_missing_config_file_exits_one(tmp_path):
    assert main(["classify", "--config", str(tmp_path / "missing.toml")]) == EXIT_ERROR


def test_quiet_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "INFO")
    cfg = _write(tmp_path, "classify.toml", CLASSIFY)
    assert main(["classify", "--config", cfg, "--out", str(tmp_path / "q"), "--quiet"]) == EXIT_OK
