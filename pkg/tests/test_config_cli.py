import csv
import json
import os

import pytest
import yaml

from poroheat.cli import EXIT_CONFIG, EXIT_OK, OUTPUT_ROOT_ENV, main
from poroheat.config import (ConfigError, bundled_config, emit_config, load_yaml, parse_config,
                             validate)


def bundled_dict(name):
    return load_yaml(bundled_config(name).read_text())


def small_layered(tmp_path, **split):
    d = parse_config(bundled_config("layered_default")).to_dict()
    d["grid"].update(nx=16, ny=16)
    d["split"].update(n_steps=4, dt_init=130.0, **split)
    d["output"]["snapshot_steps"] = [2, 4]
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


def test_bundled_layered_defaults():
    cfg = parse_config(bundled_config("layered_default"))
    m = cfg.model
    assert (m["phi"], m["g"], m["k_alpha"], m["retardation"]) == (0.333, 1e-3, 5e-4, 1.0)
    assert m["velocity"] == [0.0, -4e-3]
    assert [b["diffusion"] for b in m["layers"]] == [1e-3, 1e-5, 1e-3, 1e-5, 1e-3]
    assert (cfg.grid["nx"], cfg.grid["ny"]) == (64, 64)
    assert all(isinstance(q["total"], float) for q in cfg.sources)
    assert cfg.split["n_steps"] == 150 and cfg.output["snapshot_steps"] == [2, 150]


@pytest.mark.parametrize("name", ["layered_default", "two_phase", "convergence"])
def test_round_trip(name):
    cfg = parse_config(bundled_config(name))
    assert validate(load_yaml(emit_config(cfg))) == cfg


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        parse_config(p)


def test_parse_error_has_location(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("scenario: layered\ngrid: [1, 2\n")
    with pytest.raises(ConfigError, match=r"bad\.yaml:\d+:\d+"):
        parse_config(p)


def test_sigma_out_of_range():
    d = bundled_dict("layered_default")
    d["split"]["sigma"] = 1.5
    with pytest.raises(ConfigError, match=r"sigma must be in \[0,1\]"):
        validate(d)


def test_all_violations_reported():
    d = bundled_dict("layered_default")
    d["split"]["sigma"] = -1
    d["model"]["phi"] = 2.0
    d["grid"]["nx"] = 0
    with pytest.raises(ConfigError) as info:
        validate(d)
    assert len(info.value.violations) == 3


def test_unknown_key_rejected():
    d = bundled_dict("two_phase")
    d["benchmark"]["speed"] = 1.0
    with pytest.raises(ConfigError, match="speed"):
        validate(d)


def test_unknown_bundled_name():
    with pytest.raises(ConfigError, match="available"):
        bundled_config("nope")


def test_cli_two_phase(tmp_path, capsys):
    assert main(["benchmark", "two-phase", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "errors.csv")))
    assert len(rows) == 18
    assert {r["scheme"] for r in rows} == {"one_side_a", "one_side_b", "iterative"}
    manifest = json.load(open(tmp_path / "run.json"))
    assert manifest["status"] == "ok" and "numpy" in manifest["versions"]


def test_cli_snapshot_files(tmp_path):
    cfg = small_layered(tmp_path)
    out = tmp_path / "run"
    assert main(["simulate", str(cfg), "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.glob("snapshot_*.csv")) == ["snapshot_2.csv", "snapshot_4.csv"]
    series = list(csv.DictReader(open(out / "series.csv")))
    assert [int(r["step"]) for r in series] == [0, 1, 2, 3, 4]
    snap = list(csv.DictReader(open(out / "snapshot_2.csv")))
    assert len(snap) == 16 * 16 * 2 * 4


def test_cli_snapshot_override(tmp_path):
    cfg = small_layered(tmp_path)
    out = tmp_path / "run"
    assert main(["simulate", str(cfg), "--out", str(out), "--snapshot-steps", "1,3"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("snapshot_*.csv")) == ["snapshot_1.csv", "snapshot_3.csv"]


def test_cli_zero_sources_conserve(tmp_path):
    d = parse_config(small_layered(tmp_path)).to_dict()
    d["sources"] = []
    d["model"]["initial_value"] = 1.0
    d["grid"]["boundary"] = {s: "neumann" for s in ("left", "right", "top", "bottom")}
    d["model"]["velocity"] = [0.0, 0.0]
    d["model"]["decay"] = [[0.0, 0.0], [0.0, 0.0]]
    p = tmp_path / "closed.yaml"
    p.write_text(yaml.safe_dump(d))
    out = tmp_path / "closed"
    assert main(["simulate", str(p), "--out", str(out)]) == EXIT_OK
    series = list(csv.DictReader(open(out / "series.csv")))
    keys = ["total_mobile", "total_immobile", "total_adsorbed", "total_immobile_adsorbed"]
    total0 = sum(float(series[0][k]) for k in keys)
    for r in series:
        assert abs(sum(float(r[k]) for k in keys) - total0) <= 1e-12 * total0


def test_cli_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert main(["benchmark", "two-phase", "--kmax", "2", "--out", "rel"]) == EXIT_OK
    assert (tmp_path / "rel" / "errors.csv").exists()


@pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root ignores permissions")
def test_cli_unwritable_output(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert main(["benchmark", "two-phase", "--out", str(locked / "x")]) == EXIT_CONFIG
    finally:
        locked.chmod(0o700)


def test_cli_output_path_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    assert main(["benchmark", "two-phase", "--out", str(f / "sub")]) == EXIT_CONFIG


def test_cli_bad_config_exit_code(tmp_path, capsys):
    d = bundled_dict("layered_default")
    d["split"]["sigma"] = 1.5
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(d))
    assert main(["simulate", str(p)]) == EXIT_CONFIG
    assert "sigma must be in [0,1]" in capsys.readouterr().err


def test_cli_deterministic(tmp_path):
    cfg = small_layered(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["simulate", str(cfg), "--out", str(b)]) == EXIT_OK
    for name in ("series.csv", "snapshot_2.csv", "snapshot_4.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_cli_study_rejects_wrong_scenario(capsys):
    assert main(["study", "convergence", "two_phase"]) == EXIT_CONFIG


def test_show_config(capsys):
    assert main(["show-config", "two_phase"]) == EXIT_OK
    assert "scenario: two_phase" in capsys.readouterr().out
