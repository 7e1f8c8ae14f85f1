import math
from fractions import Fraction

import numpy as np
import pytest
import yaml

from hybridstab.cli import main
from hybridstab.config import (ConfigError, ExperimentConfig, config_hash, dump_config, from_dict, load_config,
                               parse_ratio, to_dict)
from hybridstab.experiments import (make_policy, read_csv, run_eval, run_episodes, steps_to_reach, write_csv)
from hybridstab.plant import ScenarioSpec

SMALL = {"eval": {"episodes": 4, "n_envs": 4, "curve_interval": 1, "curve_episodes": 2, "checkpoint_interval": 1,
                  "radial_directions": 2, "radial_trials": 1, "radial_resolution": 400.0,
                  "drift_duration": 10.0, "noise_levels": [1.0, 1.2], "noise_episodes": 2},
         "scenario": {"kind": "l1", "eval_cap": 20.0},
         "train": {"total_steps": 10_000, "batch_size": 8192, "n_envs": 8}}


def test_unknown_keys_rejected():
    for bad in ({"trian": {}}, {"train": {"lr": 1e-3}}, {"control": {"gains": {"K_x": 1}}},
                {"scenario": {"kind": "l1", "wind": 3}}, {"eval": {"episode": 3}}):
        with pytest.raises(ConfigError):
            from_dict(bad)


def test_bad_values_rejected():
    for bad in ({"train": {"ratio": "1/3"}}, {"scenario": {"kind": "q"}}, {"eval": {"episodes": 0}},
                {"train": {"clip": 2.0}}):
        with pytest.raises(ConfigError):
            from_dict(bad)
    assert parse_ratio("1/8") == Fraction(1, 8)


def test_roundtrip_and_hash(tmp_path):
    cfg = from_dict(SMALL)
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    cfg2 = load_config(p)
    assert to_dict(cfg2) == to_dict(cfg)
    assert config_hash(cfg2) == config_hash(cfg)
    assert len(config_hash(cfg)) == 16
    # out does not change the hash, seeds and ratios do
    assert config_hash(from_dict({**SMALL, "out": "elsewhere"})) == config_hash(cfg)
    assert config_hash(cfg.with_seed(1)) != config_hash(cfg)
    assert config_hash(cfg.with_ratio("1/2")) != config_hash(cfg)
    # inf survives the trip as null
    assert math.isinf(load_config(None).train.max_grad_norm)
    assert yaml.safe_load(dump_config(ExperimentConfig()))["train"]["max_grad_norm"] is None


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert files
    for f in files:
        load_config(f)


def test_csv_header_and_comment_row(tmp_path):
    cfg = ExperimentConfig().with_seed(7)
    p = write_csv(tmp_path / "x.csv", ["a", "b"], [(1, 0.1), (2, 1 / 3)], cfg)
    lines = p.read_text().splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == f"# config_hash={config_hash(cfg)},seed=7"
    assert lines[3] == f"2,{1 / 3!r}"
    cols, rows = read_csv(p)
    assert cols == ["a", "b"] and float(rows[1][1]) == 1 / 3


def test_steps_to_reach():
    curve = [(100, 1.0), (200, 5.0), (300, 12.0), (400, 8.0)]
    assert steps_to_reach(curve, 10.0) == 300
    assert steps_to_reach(curve, 12.0) == 300
    assert steps_to_reach(curve, 50.0) == math.inf


def test_run_episodes_independent_of_worker_count():
    cfg = from_dict(SMALL)
    pol = make_policy(None, cfg)
    a = run_episodes(pol, cfg, cfg.scenario, 11, 6, n_envs=1)
    b = run_episodes(pol, cfg, cfg.scenario, 11, 6, n_envs=4)
    assert [(r.episode, r.duration, r.fell) for r in a] == [(r.episode, r.duration, r.fell) for r in b]


def test_eval_csv_is_deterministic(tmp_path):
    cfg = from_dict(SMALL)
    run_eval(None, cfg, tmp_path / "a")
    run_eval(None, cfg, tmp_path / "b")
    for name in ("eval_l1.csv", "eval_l1_episodes.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_smoke(tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(SMALL))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--seed", "3", "--out", str(out), "--ratio", "1/2"]) == 0
    cols, rows = read_csv(out / "train_curve.csv")
    assert cols == ["million_steps", "mean_duration_s"] and len(rows) >= 1
    _, erows = read_csv(out / "eval_curve.csv")
    assert len(erows) >= 1
    assert (out / "model.ckpt").exists()
    ck = str(out / "model.ckpt")
    for cmd in (["eval", "--scenario", "l2"], ["radial"], ["drift"], ["noise"]):
        assert main([*cmd, "--config", str(cfg_path), "--seed", "3", "--out", str(out), "--checkpoint", ck]) == 0
    for name in ("eval_l2.csv", "radial.csv", "drift.csv", "drift_summary.csv", "noise_l1.csv"):
        text = (out / name).read_text().splitlines()
        assert text[1].startswith("# config_hash=") and text[1].endswith(",seed=3")
    assert yaml.safe_load((out / "config.yaml").read_text())["train"]["ratio"] == "1/2"


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {nope: 1}\n")
    assert main(["eval", "--config", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"0" * 100)
    assert main(["eval", "--out", str(tmp_path), "--checkpoint", str(junk)]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--ratio", "1/3"])
    with pytest.raises(SystemExit):
        main(["eval", "--scenario", "x"])
