import csv
import json
import math

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from mbec.harness.baselines import MFECAgent, MFECTable, run_mfec, run_random
from mbec.harness.cli import main
from mbec.harness.config import ConfigError, load_config, parse_config
from mbec.harness.metrics import aggregate, contribution_from_matches, contribution_metric, running_mean, seed_summary
from mbec.harness.runner import OUTPUT_ROOT_ENV, resolve_output_dir, run_experiment, summarize
from mbec.agent import AgentConfig
from mbec.envs import MazeEnv, MazeSpec

SMALL_AGENT = {"traj_hidden": 8, "reward_hidden": 8, "batch_size": 8}


def small_config(**over):
    cfg = {"name": "t", "task": {"kind": "maze", "size": 3, "mode": "plain", "max_steps": 60},
           "agent": "MBEC", "agent_config": SMALL_AGENT, "total_steps": 200, "seeds": [1, 2, 3]}
    cfg.update(over)
    return cfg


def test_unknown_agent_names_the_field():
    with pytest.raises(ConfigError, match="agent"):
        parse_config(small_config(agent="PPO"))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="agent_config.kk"):
        parse_config(small_config(agent_config={"kk": 3}))


def test_config_errors():
    with pytest.raises(ConfigError, match="seeds"):
        parse_config(small_config(seeds=[1, 1]))
    with pytest.raises(ConfigError, match="noise"):
        parse_config(small_config(noise={"gaussian_reward_std": 0.2, "bernoulli_reward_p": 0.1}))
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_load_config_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(small_config()))
    cfg = load_config(p)
    assert cfg.seeds == [1, 2, 3]
    assert cfg.task.step_cap == 60
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1, 2")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_shipped_configs_validate():
    from pathlib import Path
    paths = sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.yaml"))
    assert paths
    for p in paths:
        load_config(p)


def test_config_hash_is_stable():
    a, b = parse_config(small_config()), parse_config(small_config())
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != parse_config(small_config(total_steps=201)).config_hash()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_one_csv_per_seed_and_reruns_identically(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = parse_config(small_config())
    out1 = run_experiment(cfg, "a")
    out2 = run_experiment(cfg, "b")
    assert out1 == tmp_path / "a"
    csvs = sorted(p.name for p in out1.glob("seed_*.csv"))
    assert csvs == ["seed_1.csv", "seed_2.csv", "seed_3.csv"]
    assert (out1 / "summary.json").exists()
    for name in csvs:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["config_hash"] == cfg.config_hash()


def test_parallel_workers_match_serial(tmp_path):
    cfg = parse_config(small_config(seeds=[4, 5]))
    serial = run_experiment(cfg, str(tmp_path / "s"))
    par = run_experiment(cfg, str(tmp_path / "p"), workers=2)
    for s in (4, 5):
        assert (serial / f"seed_{s}.csv").read_bytes() == (par / f"seed_{s}.csv").read_bytes()


def test_summary_recomputed_from_csv_alone(tmp_path):
    cfg = parse_config(small_config(seeds=[0, 7]))
    out = run_experiment(cfg, str(tmp_path / "r"))
    stored = json.loads((out / "summary.json").read_text())
    again = summarize(out)
    # independent parse of the logs
    for seed in ("0", "7"):
        rows = read_csv(out / f"seed_{seed}.csv")
        header, body = rows[0], rows[1:]
        col = {name: [r[i] for r in body] for i, name in enumerate(header)}
        rewards = [float(x) for x in col["true_reward"]]
        steps = [int(x) for x in col["step"]]
        completed = sum(int(x) for x in col["terminated"])
        late = [r for r, s in zip(rewards, steps) if s > 0.9 * cfg.total_steps] or rewards[-1:]
        for src in (stored["per_seed"][seed], again["per_seed"][seed]):
            assert src["episodes"] == len(rewards)
            assert src["completed"] == completed
            assert math.isclose(src["mean_reward"], sum(rewards) / len(rewards), abs_tol=1e-9)
            assert math.isclose(src["final_reward"], sum(late) / len(late), abs_tol=1e-9)
    for key, agg in again["aggregate"].items():
        assert math.isclose(agg["mean"], stored["aggregate"][key]["mean"], abs_tol=1e-9)


def test_default_output_under_env_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = parse_config(small_config())
    assert resolve_output_dir(cfg) == tmp_path / f"t-{cfg.config_hash()[:8]}"


def test_failed_seed_marks_manifest_incomplete(tmp_path, monkeypatch):
    from mbec.harness import runner

    def boom(cfg, seed, on_episode=None):
        raise RuntimeError("environment exploded")

    monkeypatch.setattr(runner, "run_seed", boom)
    cfg = parse_config(small_config(seeds=[0]))
    with pytest.raises(RuntimeError, match="1 seed"):
        run_experiment(cfg, str(tmp_path / "x"))
    manifest = json.loads((tmp_path / "x" / "manifest.json").read_text())
    assert manifest["status"] == "incomplete"
    assert "exploded" in manifest["errors"]["0"]
    assert (tmp_path / "x" / "seed_0.csv").exists()


def test_cli_run_and_summarize(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(small_config(seeds=[0])))
    runner = CliRunner()
    res = runner.invoke(main, ["run", str(p), "-o", str(tmp_path / "out")])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["summarize", str(tmp_path / "out")])
    assert res.exit_code == 0
    assert "per_seed" in json.loads(res.output)


def test_cli_exit_codes(tmp_path):
    runner = CliRunner()
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(small_config(agent="PPO")))
    res = runner.invoke(main, ["run", str(bad)])
    assert res.exit_code == 2
    assert "agent" in res.output
    res = runner.invoke(main, ["summarize", str(tmp_path / "nothing")])
    assert res.exit_code == 2


def test_contribution_examples():
    f = np.array([0, 1, 2, 3])
    assert contribution_metric(f, f, f).episodic_frac == 1.0
    assert contribution_metric((f + 1) % 4, f, f).episodic_frac == 0.0
    half = np.array([0, 1, 0, 0])
    c = contribution_metric(half, f, f)
    assert c.episodic_frac == 0.5
    assert c.semantic_frac == 1.0
    with pytest.raises(ValueError):
        contribution_metric([], [], [])
    c = contribution_from_matches([1, 0, 1, 1], [0, 0, 1, 1], window=2)
    np.testing.assert_allclose(c.episodic, [1.0, 0.5, 0.5, 1.0])


def test_running_mean_partial_windows():
    np.testing.assert_allclose(running_mean([2, 4, 6, 8], 2), [2, 3, 5, 7])
    with pytest.raises(ValueError):
        running_mean([1], 0)


def test_seed_summary_and_aggregate():
    s = seed_summary([10, 50, 95, 100], [1.0, 2.0, 3.0, 5.0], [1, 0, 1, 1], total_steps=100)
    assert s == {"episodes": 4, "completed": 3, "mean_reward": 2.75, "final_reward": 4.0}
    agg = aggregate({"0": s, "1": {**s, "mean_reward": 3.25}})
    assert agg["mean_reward"] == {"mean": 3.0, "std": 0.25}
    assert seed_summary([], [], [], 100)["episodes"] == 0


def test_mfec_max_write_and_exact_read():
    t = MFECTable(2, k=3)
    assert t.lookup([0.0, 0.0]) == 0.0
    t.write([1.0, 0.0], 3.0)
    t.write([1.0, 0.0], 5.0)
    assert t.lookup([1.0, 0.0]) == 5.0
    t.write([1.0, 0.0], 2.0)
    assert t.lookup([1.0, 0.0]) == 5.0
    u = MFECTable(2, k=3)
    u.write([0.5, 0.5], 3.0)
    u.write([0.5, 0.5], 2.0)
    assert u.lookup([0.5, 0.5]) == 3.0


def test_mfec_unseen_key_averages_neighbours_and_evicts_fifo():
    t = MFECTable(1, k=2, capacity=3)
    for key, v in [(0.0, 1.0), (1.0, 3.0), (10.0, 100.0)]:
        t.write([key], v)
    assert t.lookup([0.4]) == pytest.approx(2.0)
    t.write([20.0], 7.0)
    assert len(t) == 3
    assert np.array([0.0]).tobytes() not in t.index  # earliest key evicted
    assert t.lookup([20.0]) == 7.0


def test_mfec_agent_and_random_runs():
    env = MazeEnv(MazeSpec(3, max_steps=50), np.random.default_rng(0))
    log = run_mfec(AgentConfig(), env, 500, seed=0)
    assert len(log) > 0 and log.column("memory_occupancy")[-1] > 0
    log = run_random(MazeEnv(MazeSpec(3, max_steps=50), np.random.default_rng(0)), 500, seed=0)
    assert len(log) > 0
    agent = MFECAgent(4, 2, key_dim=8, rng=np.random.default_rng(0))
    agent.mfec_baseline_step([np.ones(4)], [1], [2.0])
    assert agent.values(np.ones(4))[1] == 2.0
