import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmdrift.cli import main
from pmdrift.config import ConfigError, from_dict, parse_config, parse_config_list
from pmdrift.io import dumps, emit_csv, emit_manifest, read_csv, verify_manifest
from pmdrift.potential import Potential
from pmdrift.runner import run_experiment

SIMULATE = {"kind": "simulate", "grid": {"lower": [-2], "upper": [2], "h": 0.05},
            "potential": {"form": "quadratic"},
            "initial": {"type": "bump", "center": [0.3], "width": 0.5, "mass": 0.2},
            "solver": {"t_end": 0.5, "dt_out": 0.1}}
ORACLE = {"kind": "barenblatt-oracle", "grid": {"lower": [-10], "upper": [10], "h": 0.02},
          "initial": {"type": "barenblatt"}, "solver": {"t_end": 1.0, "dt_out": 0.5}}
TOUCHING = {"kind": "touching", "grid": {"lower": [-4], "upper": [4], "h": 0.02},
            "initial": {"type": "barenblatt"}, "solver": {"t_end": 1.0, "dt_out": 0.02},
            "options": {"n": 40}}


# csv and json -------------------------------------------------------------


def test_csv_formatting(tmp_path):
    path = emit_csv(("a", "b"), [(1 / 3, 2), (True, np.float64(0.1))], tmp_path / "x.csv")
    assert path.read_bytes() == b"a,b\n0.33333333333333331,2\n1,0.10000000000000001\n"
    empty = emit_csv(("t", "v"), [], tmp_path / "e.csv")
    assert empty.read_bytes() == b"t,v\n"
    with pytest.raises(ValueError):
        emit_csv(("a",), [(1, 2)], tmp_path / "bad.csv")
    with pytest.raises(OSError, match="nope"):
        emit_csv(("a",), [], tmp_path / "nope" / "x.csv")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False),
                          st.floats(allow_nan=False, allow_infinity=False)), max_size=10))
def test_csv_roundtrip_is_exact(tmp_path_factory, rows):
    path = emit_csv(("x", "y"), rows, tmp_path_factory.mktemp("csv") / "r.csv")
    header, back = read_csv(path)
    assert header == ["x", "y"]
    assert [tuple(r) for r in back] == [tuple(map(float, r)) for r in rows]


def test_manifest_is_stable(tmp_path):
    man = {"b": 1, "a": [np.float64(0.5), np.nan], "c": {"z": np.int64(3), "y": np.bool_(True)}}
    p1 = emit_manifest(man, tmp_path / "m1.json")
    p2 = emit_manifest(dict(reversed(list(man.items()))), tmp_path / "m2.json")
    assert p1.read_bytes() == p2.read_bytes()
    data = json.loads(p1.read_text())
    assert list(data) == ["a", "b", "c"] and data["a"] == [0.5, None]
    assert dumps(man) == p1.read_text()


# configuration ------------------------------------------------------------


def test_minimal_config_echoes_defaults():
    cfg = parse_config(json.dumps({"kind": "simulate", "grid": {"lower": [0], "upper": [1], "h": 0.1},
                                   "initial": {"type": "zero"}, "solver": {"t_end": 1, "dt_out": 0.5}}))
    d = cfg.to_dict()
    assert d["m"] == 2.0 and d["seed"] == 0 and d["output"] == "out"
    assert Potential.from_dict(d["potential"]).is_zero
    assert d["solver"] == {"t_end": 1.0, "dt_out": 0.5, "cfl": 0.4, "floor": 0.0,
                           "flux": "balanced", "guard_cells": 2, "margin": 0.1}


@pytest.mark.parametrize("cfg", [SIMULATE, ORACLE, TOUCHING])
def test_config_roundtrip(cfg):
    first = from_dict(cfg)
    second = parse_config(first.to_json())
    assert second == first
    assert second.to_json() == first.to_json()


@pytest.mark.parametrize("patch,message", [
    ({"m": 1.0}, "config.m: requires m > 1"),
    ({"solvr": {}}, "config.solvr: unknown key"),
    ({"grid": {"lower": [0], "upper": [1]}}, "config.grid.h: missing required key"),
    ({"solver": {"t_end": -1, "dt_out": 0.1}}, "config.solver.t_end"),
    ({"solver": {"t_end": 1, "dt_out": 0.1, "cfl": 0.9}}, "config.solver.cfl"),
    ({"kind": "simulation"}, "config.kind"),
    ({"potential": {"form": "quadratic", "scael": 1}}, "config.potential"),
    ({"initial": {"type": "bump", "center": [0.3]}}, "config.initial.mass"),
])
def test_config_errors_carry_key_path(patch, message):
    with pytest.raises(ConfigError, match=message.replace(".", r"\.")):
        from_dict({**SIMULATE, **patch})


def test_config_list():
    cfgs = parse_config_list(json.dumps([SIMULATE, ORACLE]))
    assert [c.kind for c in cfgs] == ["simulate", "barenblatt-oracle"]
    with pytest.raises(ConfigError, match=r"config\[1\]\.m"):
        parse_config_list(json.dumps([SIMULATE, {**ORACLE, "m": 0.5}]))
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config_list("{")


# runs ---------------------------------------------------------------------


def test_run_writes_complete_manifest(tmp_path):
    man = run_experiment(from_dict(SIMULATE), tmp_path / "run")
    assert man["status"] == "ok" and man["passed"]
    assert man["summary"]["conservation"]["drift"] <= 1e-10
    assert verify_manifest(tmp_path / "run" / "manifest.json")
    listed = {f["path"] for f in man["files"]}
    written = {p.relative_to(tmp_path / "run").as_posix()
               for p in (tmp_path / "run").rglob("*") if p.is_file()}
    assert written - listed == {"manifest.json"}
    (tmp_path / "run" / "diag.csv").write_text("tampered\n")
    assert not verify_manifest(tmp_path / "run" / "manifest.json")


def test_runs_are_deterministic(tmp_path):
    cfg = from_dict(TOUCHING)
    a = run_experiment(cfg, tmp_path / "a", seed=5)
    b = run_experiment(cfg, tmp_path / "b", seed=5)
    assert a["files"] == b["files"]
    for f in a["files"]:
        assert (tmp_path / "a" / f["path"]).read_bytes() == (tmp_path / "b" / f["path"]).read_bytes()
    strip = [{k: v for k, v in m.items() if k not in ("wall_clock_s", "config")} for m in (a, b)]
    assert strip[0] == strip[1]


def test_oracle_manifest_entries(tmp_path):
    man = run_experiment(from_dict(ORACLE), tmp_path)
    assert man["passed"]
    runs = man["summary"]["runs"]
    assert [r["h"] for r in runs] == [0.02, 0.01]
    assert runs[0]["linf_error"] <= 0.02
    assert man["summary"]["ratio"] >= 1.7 and "order" in man["summary"]


def test_failed_run_manifest(tmp_path):
    bad = {**SIMULATE, "initial": {"type": "bump", "center": [1.7], "width": 0.5, "mass": 0.2}}
    man = run_experiment(from_dict(bad), tmp_path)
    assert man["status"] == "failed" and not man["passed"]
    assert "away from the boundary" in man["error"]
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "failed"


# command line -------------------------------------------------------------


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    ok = write(tmp_path, "ok.json", SIMULATE)
    assert main(["simulate", "--config", ok, "--out", str(tmp_path / "o1")]) == 0
    bad_m = write(tmp_path, "bad.json", {**SIMULATE, "m": 1.0})
    assert main(["simulate", "--config", bad_m]) == 2
    assert "m > 1" in capsys.readouterr().err
    assert main(["oracle", "--config", ok]) == 2  # wrong subcommand for the kind
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    crash = write(tmp_path, "crash.json", {**SIMULATE, "initial": {
        "type": "bump", "center": [1.7], "width": 0.5, "mass": 0.2}})
    assert main(["simulate", "--config", crash, "--out", str(tmp_path / "o3")]) == 2


def test_cli_fails_when_checks_fail(tmp_path):
    expect_wrong = {"kind": "classify", "grid": {"lower": [-1], "upper": [1], "h": 0.01},
                    "options": {"candidate": {"type": "barenblatt", "tau": 1.0, "C": 1.0,
                                              "m": 2.0, "d": 1},
                                "domain": {"lower": [-2], "upper": [2], "times": [0.0, 0.5],
                                           "h": 0.05},
                                "expect": "neither"}}
    path = write(tmp_path, "c.json", expect_wrong)
    assert main(["verify", "--config", path, "--out", str(tmp_path / "o")]) == 1


def test_cli_jobs_use_separate_directories(tmp_path):
    path = write(tmp_path, "list.json", [SIMULATE, {**SIMULATE, "seed": 3}])
    out = tmp_path / "many"
    assert main(["simulate", "--config", path, "--out", str(out), "--jobs", "2"]) == 0
    assert (out / "000-simulate" / "manifest.json").exists()
    assert (out / "001-simulate" / "manifest.json").exists()


def test_module_entry_point(tmp_path):
    path = write(tmp_path, "ok.json", SIMULATE)
    proc = subprocess.run([sys.executable, "-m", "pmdrift", "simulate", "--config", path,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout
