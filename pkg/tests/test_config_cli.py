import csv
import json
import os
from importlib import resources

import pytest
import yaml

from metalab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from metalab.config import SEED_ENV_VAR, ConfigError, load_config, validate_config
from metalab.experiments import run_experiment

BASE = {
    "kind": "ValidateThm2",
    "loss": {"M": 1.0},
    "environment": {"generator": "relevant_coordinate", "seed": 1, "input_dim": 2},
    "family": {
        "v_dim": 1,
        "weights": {"lo": -1.0, "step": 1.0, "count": 3},
        "bias": {"lo": -1.0, "step": 1.0, "count": 3},
    },
    "params": {"alpha": 0.5, "delta": 0.1, "nu": 1.0, "n": 2, "m": 2, "trials": 100},
}


def doc(**changes):
    d = json.loads(json.dumps(BASE))
    for path, value in changes.items():
        section = d
        *head, last = path.split("__")
        for k in head:
            section = section.setdefault(k, {})
        if value is None:
            section.pop(last, None)
        else:
            section[last] = value
    return yaml.safe_dump(d)


def issues(text, **kw):
    with pytest.raises(ConfigError) as info:
        validate_config(text, **kw)
    return {(i.code, i.key) for i in info.value.issues}


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# --- validation --------------------------------------------------------------


def test_minimal_config_fills_defaults(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    cfg = validate_config(doc())
    assert cfg.seed == 0
    assert cfg.params["cover_mode"] == "greedy"
    assert cfg.params["probes"] == {"singles": True, "pairs": True, "heads": [], "reps": []}
    assert cfg.output == os.path.join("runs", "ValidateThm2")
    assert len(cfg.family.reps) == 2 and len(cfg.family.heads) == 9


def test_alpha_out_of_range():
    assert ("range", "params.alpha") in issues(doc(params__alpha=1.5))
    assert ("range", "params.alpha") in issues(doc(params__alpha=0))


def test_eps_identity_violation():
    text = doc(params__n="bound", params__m="bound", params__eps1=0.02, params__eps2=0.02)
    assert issues(text) == {("constraint", "params.eps1+eps2")}
    ok = doc(params__n="bound", params__m="bound", params__eps1=0.015625, params__eps2=0.015625)
    assert validate_config(ok).params["n"] == "bound"


def test_issue_codes_are_distinct():
    assert ("unknown_key", "params.colour") in issues(doc(params__colour=1))
    assert ("unknown_key", "flavour") in issues(doc(flavour=1))
    assert ("missing", "params.delta") in issues(doc(params__delta=None))
    assert ("missing", "loss") in issues(doc(loss=None))
    assert ("type", "params.trials") in issues(doc(params__trials="many"))
    assert issues("kind: [unclosed") == {("parse", "<document>")}
    assert ("range", "params.trials") in issues(doc(params__trials=50))


def test_issues_are_collected_not_first_only():
    found = issues(doc(params__alpha=2.0, params__delta=-1, params__extra=0))
    assert {("range", "params.alpha"), ("range", "params.delta"),
            ("unknown_key", "params.extra")} <= found


def test_bound_rules():
    assert ("range", "params.n") in issues(doc(kind="ValidateThm1", params__n="bound",
                                               params__eps1=0.03, params__eps2=0.0325))
    assert ("range", "params.m") in issues(doc(kind="TransferRisk", params__m="bound"))


def test_seed_priority(monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "77")
    assert validate_config(doc()).seed == 77
    assert validate_config(doc(seed=5)).seed == 5
    assert validate_config(doc(seed=5), seed=9).seed == 9
    monkeypatch.setenv(SEED_ENV_VAR, "seven")
    assert ("type", SEED_ENV_VAR) in issues(doc())
    assert ("range", "seed") in issues(doc(seed=2**64))


def test_config_hash_tracks_resolved_content(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    a = validate_config(doc())
    assert a.config_hash == validate_config(doc()).config_hash
    assert len(a.config_hash) == 40
    assert validate_config(doc(params__alpha=0.4)).config_hash != a.config_hash
    assert validate_config(doc(), seed=1).config_hash != a.config_hash
    # explicit defaults resolve to the same config
    assert validate_config(doc(params__cover_mode="greedy")).config_hash == a.config_hash


def test_explicit_environment_validation():
    env = {"input_dim": 1, "tasks": [{"p": 1.0, "support": [{"x": [0.0], "y": 0.0, "p": 0.4}]}]}
    keys = issues(doc(environment=env))
    assert any(code == "constraint" and key.startswith("environment") for code, key in keys)


# --- runs --------------------------------------------------------------------


def capacity_doc(tmp_path, **kw):
    return doc(kind="CapacityTable", output=str(tmp_path / "out"),
               params={"eps_grid": [0.01, 0.1, 0.5], **kw})


def test_single_head_capacity_table_is_all_ones(tmp_path):
    text = capacity_doc(tmp_path, cover_mode="exact")
    text = text.replace("count: 3", "count: 1")
    cfg = validate_config(text)
    assert len(cfg.family.heads) == 1
    report = run_experiment(cfg)
    with open(tmp_path / "out" / "capacity_heads.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["value"]) for r in rows] == [1, 1, 1]
    assert [float(r["eps"]) for r in rows] == [0.01, 0.1, 0.5]
    assert report.summary["probe_lower_bound"] is True


def test_run_writes_only_inside_output(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "nested" / "out"
    cfg = validate_config(doc(), output=str(out))
    report = run_experiment(cfg)
    assert sorted(os.listdir(tmp_path)) == ["nested"]
    assert sorted(os.listdir(out)) == ["summary.json", "trials.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config_hash"] == cfg.config_hash
    assert summary["summary"]["pass"] == report.passed
    assert set(summary["summary"]) >= {"violations", "trials", "frequency", "wilson_upper_95",
                                       "delta", "pass", "n", "m"}
    with open(out / "trials.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trial_index", "empirical_value", "true_value", "deviation", "exceeded"]
    assert len(rows) == 101


def test_identical_runs_byte_identical_csv(tmp_path):
    for kind_doc in (
        doc(),
        capacity_doc(tmp_path),
        doc(kind="TransferRisk", params={"m": 2, "trials": 20}),
        doc(kind="BoundsTable", params={"alpha": 0.5, "delta": 0.1, "nu": 1.0}),
        doc(kind="MetaTrainEval", params={"n": 3, "m": 2}),
    ):
        outs = []
        for run in ("a", "b"):
            cfg = validate_config(kind_doc, output=str(tmp_path / run))
            run_experiment(cfg)
            outs.append({
                name: (tmp_path / run / name).read_bytes()
                for name in os.listdir(tmp_path / run) if name.endswith(".csv")
            })
        assert outs[0] and outs[0] == outs[1]


def test_packaged_configs_validate():
    configs = resources.files("metalab") / "configs"
    names = sorted(p.name for p in configs.iterdir() if p.name.endswith(".yaml"))
    assert "reference_thm2.yaml" in names
    for name in names:
        load_config(str(configs / name))


# --- command line ------------------------------------------------------------


def test_cli_success_prints_summary(tmp_path, capsys):
    path = write(tmp_path, doc(kind="BoundsTable", params={"alpha": 0.5, "delta": 0.1, "nu": 1.0}))
    code = main(["run", path, "--output", str(tmp_path / "out"), "--seed", "3"])
    assert code == EXIT_OK
    line = json.loads(capsys.readouterr().out.strip())
    assert line["kind"] == "BoundsTable" and line["theorem2_n"] >= 1
    assert (tmp_path / "out" / "bounds.csv").exists()


def test_cli_config_errors(tmp_path, capsys):
    assert main(["run", write(tmp_path, doc(params__alpha=1.5))]) == EXIT_CONFIG
    assert "params.alpha" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_cli_runtime_error(tmp_path):
    # 13 heads exceed the exact cover limit
    text = capacity_doc(tmp_path, cover_mode="exact").replace("count: 3", "count: 13", 1)
    assert main(["run", write(tmp_path, text)]) == EXIT_RUNTIME


def test_cli_check_flag(tmp_path):
    text = doc(output=str(tmp_path / "out"), params__alpha=0.01, params__delta=0.01,
               params__n=1, params__m=1)
    path = write(tmp_path, text)
    assert main(["run", path, "--check", "--trials", "100"]) == EXIT_CHECK
    assert main(["run", path, "--trials", "100"]) == EXIT_OK
