"""CLI flows: exit codes, artifact files, byte-identical reruns."""

import json

import pytest

from archslim.cli import main


@pytest.fixture()
def run_config(tmp_path):
    payload = {
        "space": {"layers": 1, "hidden": 8, "heads": 2, "ff_dim": 16,
                  "key_dim": 8, "value_dim": 8, "m_ff": 2, "m_sim": 2, "m_value": 2},
        "task": {"kind": "sequence-classification", "vocab_size": 12, "seq_len": 8,
                 "num_classes": 2, "seed": 3, "train_size": 48, "dev_size": 16},
        "hyperparams": {"steps": 10, "batch_size": 4, "seed": 1, "eval_every": 5},
        "algorithm": "sdo",
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload))
    return path


def test_unknown_flag_exits_one(capsys):
    assert main(["search", "--bogus-flag"]) == 1
    assert "Usage" in capsys.readouterr().err


def test_missing_config_file_exits_one(tmp_path):
    assert main(["search", "--config", str(tmp_path / "nope.json")]) == 1


def test_invalid_config_exits_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"space": {"ff_dim": 15, "m_ff": 2}}))
    assert main(["search", "--config", str(bad)]) == 1


def test_search_writes_artifacts(run_config, tmp_path):
    out = tmp_path / "out"
    code = main(["search", "--config", str(run_config), "--algo", "do",
                 "--seed", "7", "--out", str(out)])
    assert code == 0
    for name in ("metrics.jsonl", "architecture.json", "description.json",
                 "architecture.dot", "checkpoint.json"):
        assert (out / name).exists(), name
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 10
    first = json.loads(lines[0])
    assert set(first) == {"step", "L_orig", "L_cost", "L_total", "cost_binary", "metric"}
    arch = json.loads((out / "architecture.json").read_text())
    assert arch["provenance"]["seed"] == 7
    assert arch["provenance"]["config_hash"]


def test_search_rerun_byte_identical(run_config, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["search", "--config", str(run_config), "--seed", "7",
                     "--out", str(out)]) == 0
    for name in ("metrics.jsonl", "architecture.json", "description.json",
                 "architecture.dot", "checkpoint.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_profile_and_export_flow(run_config, tmp_path):
    out = tmp_path / "out"
    assert main(["profile", "--config", str(run_config), "--lengths", "8,16",
                 "--reps", "5", "--out", str(out)]) == 0
    assert (out / "profile.json").exists()
    assert (out / "profile.csv").read_text().startswith("Component,8,16")

    assert main(["search", "--config", str(run_config), "--seed", "2",
                 "--profile", str(out / "profile.json"), "--out", str(out)]) == 0
    assert main(["export", "--arch", str(out / "architecture.json"),
                 "--profile", str(out / "profile.json"), "--out", str(out)]) == 0
    desc = json.loads((out / "description.json").read_text())
    assert desc["schema_version"] == 1


def test_grid_default_covers_sweep(run_config, tmp_path, monkeypatch):
    # Full default grids: cost weights 1e-2..1e-6 and both policy rates.
    out = tmp_path / "out"
    code = main(["grid", "--config", str(run_config), "--algo", "sdo",
                 "--cost-weights", "0.001,0.0001", "--policy-lrs", "0.01",
                 "--out", str(out)])
    assert code == 0
    rows = (out / "grid.csv").read_text().splitlines()
    assert rows[0] == "algorithm,lambda,nu,metric,cost,speedup"
    assert len(rows) == 3


def test_grid_default_flag_values():
    from archslim.cli import cli as group
    params = {p.name: p for p in group.commands["grid"].params}
    assert params["cost_weights"].default == "0.01,0.001,0.0001,1e-05,1e-06"
    assert params["policy_lrs"].default == "0.001,0.01"


def test_retrain_and_distill_flow(run_config, tmp_path):
    out = tmp_path / "out"
    assert main(["search", "--config", str(run_config), "--algo", "do",
                 "--seed", "3", "--out", str(out)]) == 0
    assert main(["retrain", "--arch", str(out / "architecture.json"),
                 "--config", str(run_config), "--out", str(out)]) == 0
    assert (out / "retrain_metrics.jsonl").exists()
    assert main(["distill", "--teacher", str(out / "checkpoint.json"),
                 "--teacher-arch", str(out / "architecture.json"),
                 "--config", str(run_config), "--ramp-start", "50",
                 "--out", str(out)]) == 0
    records = [json.loads(l) for l in (out / "distill_metrics.jsonl").read_text().splitlines()]
    assert records[0]["ramp"] == 0.0


def test_verify_exits_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "decomposition: pass" in out
    assert "all checks passed" in out
