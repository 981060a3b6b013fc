import json

import numpy as np
import pytest

from icd_sim import cli
from icd_sim.config import (PRESETS, ParseError, ValidationError, build_config, dump_config, load_config,
                            load_preset, preset_document, write_config)
from icd_sim.domain import ConfigurationError


def test_static_preset_contents():
    cfg = load_preset("static")
    assert cfg.delta == 5 and cfg.servers == 3 and cfg.cycles == 500
    assert cfg.step_size.alpha(1) == 1 / (1 + 1e-4)
    assert np.array_equal(cfg.weights.cycle(0)[0], [[3, -2, -3], [-1, 4, -4], [-1, -1, 8]])
    assert np.allclose(cfg.consensus[0].B, [[.8, .2, 0], [.2, .6, .2], [0, .2, .8]])
    assert cfg.weights.M == 5.0 and cfg.weights.Mbar == 75.0


@pytest.mark.parametrize("name", PRESETS)
def test_round_trip(name, tmp_path):
    cfg = load_preset(name, cycles=30)
    path = tmp_path / "c.json"
    write_config(cfg, path)
    again = load_config(path)
    assert dump_config(again) == dump_config(cfg)
    assert np.array_equal(again.weights.entries, cfg.weights.entries)
    assert all(np.array_equal(a.B, b.B) for a, b in zip(again.consensus, cfg.consensus))


def test_zero_delta_rejected():
    with pytest.raises(ValidationError, match="delta=0"):
        build_config(dict(preset_document("static"), delta=0))


def test_typo_matrix_rejected():
    doc = preset_document("topology4_path")
    doc["consensus"] = {"matrices": [[[.8, .2, 0, 0], [.2, .6, .2, .2], [0, .2, .6, .2], [0, 0, .2, .8]]]}
    with pytest.raises(ValidationError, match="row-stochastic rule violated: row 2"):
        build_config(doc)


def test_buc_failure_names_client():
    doc = preset_document("static")
    doc["weights"]["Mbar_step"] = 10.0
    with pytest.raises(ValidationError, match="bounded update condition.*client 3"):
        build_config(doc)


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError, match="schema_version"):
        build_config(dict(preset_document("static"), schema_version=9))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(ParseError, match="not found"):
        load_config(tmp_path / "missing.json")
    doc = preset_document("static")
    del doc["objectives"]
    with pytest.raises(ParseError, match="objectives"):
        build_config(doc)


def test_seed_and_mode_override():
    a = load_preset("dynamic", seed=4, cycles=5)
    assert a.seed == 4
    b = load_preset("complete_nonneg", mode="complete_graph", cycles=5)
    assert b.mode == "complete_graph"


def test_random_initial_is_seeded():
    doc = dict(preset_document("topology4_star"), cycles=3, initial={"kind": "random"})
    a, b = build_config(doc, seed=3), build_config(doc, seed=3)
    assert np.array_equal(a.initial, b.initial) and not np.all(a.initial == a.initial[0])


def test_cli_run_writes_outputs(tmp_path, monkeypatch):
    cfg_path = tmp_path / "s.json"
    write_config(load_preset("static", cycles=40), cfg_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["bounds.csv", "metrics.csv", "summary.json", "trace.csv"]
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "k,err_norm,eta_sq,max_delta,max_pairwise,f_gap"
    assert (out / "trace.csv").read_text().splitlines()[0] == "k,i,server,coordinate,value"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["bounds_ok"] and summary["validation"]["ok"]
    assert len((out / "metrics.csv").read_text().splitlines()) == 42


def test_cli_env_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv("ICD_SIM_OUT", str(tmp_path))
    doc = dict(preset_document("complete_nonneg"), cycles=5)
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(p)]) == 0
    assert (tmp_path / "tiny" / "summary.json").exists()


def test_check_only_runs_no_simulation(tmp_path, capsys):
    out = tmp_path / "none"
    assert cli.main(["run", "--preset", "static", "--check-only", "--out", str(out)]) == 0
    assert not out.exists()
    assert "symmetric learning condition" in capsys.readouterr().out
    assert cli.main(["check", "--preset", "dynamic"]) == 0


def test_cli_rejects_bad_config(tmp_path, capsys):
    doc = dict(preset_document("static"), delta=0)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "FAIL sizes" in capsys.readouterr().err


def test_compare_sorted_and_identical_rows(tmp_path):
    docs = []
    for name in ("static", "dynamic"):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(dict(preset_document(name), cycles=60)))
        docs.append(cli.RunManifest(str(p)))
    rows = cli.compare_runs(docs)
    assert [r["name"] for r in rows] == ["dynamic", "static"]
    rows = cli.compare_runs([docs[0], docs[0]])
    assert rows[0] == rows[1]


def test_compare_rejects_different_problems(tmp_path):
    doc = dict(preset_document("static"), cycles=5)
    other = json.loads(json.dumps(doc))
    other["objectives"][0]["center"] = [7.0]
    paths = []
    for n, d in enumerate((doc, other)):
        p = tmp_path / f"{n}.json"
        p.write_text(json.dumps(d))
        paths.append(cli.RunManifest(str(p)))
    with pytest.raises(cli.ProblemMismatch):
        cli.compare_runs(paths)
    with pytest.raises(ConfigurationError):
        cli.compare_runs(paths[:1])


def test_compare_cli_output(tmp_path, capsys):
    p = tmp_path / "a.json"
    p.write_text(json.dumps(dict(preset_document("complete_nonneg"), cycles=5)))
    assert cli.main(["compare", "--config", str(p), "--config", str(p), "--out", str(tmp_path / "cmp")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("name,seed,cycles_to_tol") and lines[1] == lines[2]
    assert (tmp_path / "cmp" / "comparison.csv").exists()
