import json
import os
import stat
from pathlib import Path

import pytest

from pbfcontrol import io as pio
from pbfcontrol.cli import COMMANDS, run_command

CONFIGS = Path(__file__).resolve().parents[1] / "docs" / "configs"


def _run(capsys, *argv):
    code = run_command([str(a) for a in argv])
    line = capsys.readouterr().out.strip().splitlines()[-1]
    return code, json.loads(line)


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


CUBE = CONFIGS / "cube.json"


def test_mesh_happy_path(tmp_path, capsys):
    code, summ = _run(capsys, "mesh", "--config", CUBE, "--out", tmp_path / "mesh.json")
    assert code == 0 and summ["status"] == "ok" and summ["nodes"] == 8
    doc = json.loads((tmp_path / "mesh.json").read_text())
    assert doc["tool_version"]
    mode = stat.S_IMODE(os.stat(tmp_path / "mesh.json").st_mode)
    assert mode & stat.S_IRGRP
    # atomic writes leave no temp files behind
    assert sorted(p.name for p in tmp_path.iterdir()) == ["mesh.json"]


def test_custom_primary_name(tmp_path, capsys):
    code, _ = _run(capsys, "assemble", "--config", CUBE, "--out", tmp_path / "sys.json")
    assert code == 0
    assert {"sys.json", "A.csv", "B.csv", "C.csv"} <= {p.name for p in tmp_path.iterdir()}


def test_out_env_var(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(pio.OUT_ENV, str(tmp_path / "envout"))
    code, summ = _run(capsys, "mesh", "--config", CUBE)
    assert code == 0 and (tmp_path / "envout" / "mesh.json").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    assert _run(capsys, "energy", "--config", tmp_path / "missing.json")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(capsys, "mesh", "--config", bad)[0] == 2
    unknown = _write(tmp_path, {"schema_version": 1, "geometry": {}, "colour": "red"})
    code, summ = _run(capsys, "mesh", "--config", unknown)
    assert code == 2 and "colour" in summ["error"]
    version = _write(tmp_path, {"schema_version": 99})
    assert _run(capsys, "mesh", "--config", version)[0] == 2
    shape = _write(tmp_path, {"schema_version": 1, "geometry": {"shape": "torus"}})
    assert _run(capsys, "mesh", "--config", shape)[0] == 2
    assert run_command(["bogus"]) == 2
    capsys.readouterr()
    assert run_command(["mesh"]) == 2


def test_report_without_artifacts_exit_2(tmp_path, capsys):
    assert _run(capsys, "report", "--from", tmp_path, "--out", tmp_path)[0] == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    doc = json.loads(CUBE.read_text())
    doc["analysis"]["dt_s"] = 0.0
    code, summ = _run(capsys, "analyze-classical", "--config", _write(tmp_path, doc))
    assert code == 3 and "BadStep" in summ["error"]


def test_time_varying_case_rejected_by_energy(tmp_path, capsys):
    code, _ = _run(capsys, "energy", "--config", CONFIGS / "spool_case3.json", "--out", tmp_path)
    assert code == 2


def test_cube_pipeline_report(tmp_path, capsys):
    for cmd in ("mesh", "assemble", "analyze-structural", "analyze-classical", "energy"):
        assert _run(capsys, cmd, "--config", CUBE, "--out", tmp_path)[0] == 0
    code, summ = _run(capsys, "report", "--out", tmp_path)
    assert code == 0
    assert summ["SC"] is True and summ["hurwitz"] is True and summ["Wo_PD"] is True
    # 3-D geometry: G0 always fails
    assert summ["SSC"] is False
    rep = json.loads((tmp_path / "report.json").read_text())
    assert all("tolerance" in f for f in rep["flags"].values())
    assert "const_T_strictly_increasing" in rep["flags"]
    assert "unit_norm_non_increasing" in rep["flags"]
    assert (tmp_path / "report_flags.csv").exists()


@pytest.mark.parametrize("shape", [{"nx": 2, "ny": 1, "nz": 1}, {"nx": 1, "ny": 2, "nz": 2}])
def test_ssc_false_for_3d(tmp_path, capsys, shape):
    doc = {"schema_version": 1, "geometry": {"shape": "block", "params": shape}}
    cfg = _write(tmp_path, doc)
    assert _run(capsys, "analyze-structural", "--config", cfg, "--out", tmp_path)[0] == 0
    assert _run(capsys, "report", "--out", tmp_path)[1]["SSC"] is False


def test_energy_sweep_outputs(tmp_path, capsys):
    code, _ = _run(capsys, "energy", "--config", CONFIGS / "rectangle_energy.json",
                   "--out", tmp_path)
    assert code == 0
    header, rows = pio.read_csv(tmp_path / "sweep_const_T.csv")
    assert header == ["radius_mm", "E_obs", "nodes"] and len(rows) == 3
    assert (tmp_path / "eta_star.csv").exists()
    summ = _run(capsys, "report", "--out", tmp_path)[1]
    assert summ["const_T_strictly_increasing"] and summ["unit_norm_non_increasing"]


def test_enkf_seeded_determinism(tmp_path, capsys):
    cfg = CONFIGS / "small_enkf.json"
    outs = []
    for tag in ("a", "b"):
        code, summ = _run(capsys, "enkf", "--config", cfg, "--seed", 7, "--out", tmp_path / tag)
        assert code == 0 and summ["seed"] == 7
        outs.append(tmp_path / tag)
    for name in ("errors.csv", "errors_ol.csv", "rms.csv", "enkf.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    _run(capsys, "enkf", "--config", cfg, "--seed", 8, "--out", tmp_path / "c")
    assert (tmp_path / "c" / "errors.csv").read_bytes() != (outs[0] / "errors.csv").read_bytes()


def test_short_enkf_run_skips_trend(tmp_path, capsys):
    doc = json.loads((CONFIGS / "small_enkf.json").read_text())
    doc["filter"]["t_final_s"] = 1e-3
    code, _ = _run(capsys, "enkf", "--config", _write(tmp_path, doc), "--out", tmp_path)
    assert code == 0
    assert "skipped" in json.loads((tmp_path / "enkf.json").read_text())["late_trend"]
    assert _run(capsys, "report", "--out", tmp_path)[0] == 0


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_example_configs_validate(path):
    doc = pio.load_config(path)
    assert doc["schema_version"] == pio.SCHEMA_VERSION


def test_every_command_has_example(tmp_path, capsys):
    ran = set()
    pairs = [("mesh", "cube"), ("assemble", "spool_case3"), ("analyze-structural", "spool_case3"),
             ("analyze-classical", "spool_case3"), ("energy", "rectangle_energy"),
             ("enkf", "small_enkf")]
    for cmd, name in pairs:
        assert _run(capsys, cmd, "--config", CONFIGS / f"{name}.json", "--out", tmp_path)[0] == 0
        ran.add(cmd)
    assert _run(capsys, "report", "--out", tmp_path)[0] == 0
    assert ran | {"report"} == set(COMMANDS)
