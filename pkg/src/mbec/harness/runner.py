"""Run every seed of an experiment and write logs, summary and manifest."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..agent import EPISODE_FIELDS, MetricsLog, run_training
from ..envs import CartPole, MazeEnv, MazeSpec, MountainCar, NoiseConfig, apply_noise
from ..rng import Streams
from .baselines import run_dqn, run_mfec, run_random
from .config import ExperimentConfig, load_config
from .metrics import aggregate, seed_summary

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "MBEC_OUTPUT_ROOT"

log = logging.getLogger("mbec.harness")


def build_env(cfg: ExperimentConfig, streams: Streams):
    task = cfg.task
    rng = streams["env"]
    if task.kind == "maze":
        env = MazeEnv(MazeSpec(task.size, task.mode, task.drop_rate, task.step_cap), rng)
    elif task.kind == "cartpole":
        env = CartPole(rng, task.step_cap)
    else:
        env = MountainCar(rng, task.step_cap)
    noise = NoiseConfig(**cfg.noise.model_dump())
    return apply_noise(env, noise, streams["noise"])


def run_seed(cfg: ExperimentConfig, seed: int, on_episode=None) -> MetricsLog:
    """One full run of ``cfg`` under master seed ``seed``."""
    streams = Streams(seed)
    env = build_env(cfg, streams)
    kind, steps, ac = cfg.agent, cfg.total_steps, cfg.agent_config
    if kind in ("MBEC", "MBEC++"):
        return run_training(ac, env, kind, steps, seed, streams=streams, on_episode=on_episode)
    if kind == "DQN":
        return run_dqn(ac, env, steps, seed, streams, on_episode=on_episode)
    if kind == "MFEC":
        m = cfg.mfec
        return run_mfec(ac, env, steps, seed, streams, m.k, m.key_dim, m.capacity, on_episode=on_episode)
    return run_random(env, steps, seed, streams, on_episode=on_episode)


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    target = override or cfg.output_dir
    if target is None:
        return root / f"{cfg.name}-{cfg.config_hash()[:8]}"
    p = Path(target)
    return p if p.is_absolute() else root / p


def seed_csv(out: Path, seed: int) -> Path:
    return out / f"seed_{seed}.csv"


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _seed_job(cfg_json: str, seed: int, out: str) -> dict:
    """Worker entry point: run one seed, write its CSV, return its summary."""
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    out_dir = Path(out)
    partial = MetricsLog()
    eval_next = [cfg.eval_every]

    def progress(row):
        partial.episodes.append(row)
        if row["step"] >= eval_next[0]:
            log.info("seed %d step %d episode %d reward %.3f", seed, row["step"], row["episode"], row["true_reward"])
            eval_next[0] += cfg.eval_every

    try:
        result = run_seed(cfg, seed, progress)
    except Exception as exc:
        partial.to_csv(seed_csv(out_dir, seed))
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    result.to_csv(seed_csv(out_dir, seed))
    agent = result.agent
    if cfg.save_memory and getattr(agent, "memory", None) is not None:
        agent.memory.to_csv(out_dir / f"memory_seed_{seed}.csv")
    if cfg.save_checkpoint and hasattr(agent, "save_checkpoint"):
        agent.save_checkpoint(out_dir / f"checkpoint_seed_{seed}.bin")
    summary = seed_summary(result.column("step"), result.column("true_reward"), result.column("terminated"),
                           cfg.total_steps)
    if result.episodic_match:
        n = max(1, len(result.episodic_match) // 10)
        summary["episodic_contribution_first"] = float(np.mean(result.episodic_match[:n]))
        summary["episodic_contribution_last"] = float(np.mean(result.episodic_match[-n:]))
    return {"seed": seed, "summary": summary}


def manifest(cfg: ExperimentConfig, status: str, errors: dict, started: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "config_hash": cfg.config_hash(),
        "status": status,
        "seeds": cfg.seeds,
        "errors": errors,
        "csv_schema": {"seed_csv": EPISODE_FIELDS},
        "started": started,
        "finished": time.time(),
    }


def run_experiment(config, output: str | None = None, workers: int | None = None) -> Path:
    """Run all seeds; returns the result directory.

    Raises RuntimeError after writing partial logs if any seed fails.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    out = resolve_output_dir(cfg, output)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    (out / "config.json").write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    _write_json(out / "manifest.json", manifest(cfg, "running", {}, started))
    n_workers = workers or cfg.workers
    cfg_json = cfg.model_dump_json()
    if n_workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_seed_job, [cfg_json] * len(cfg.seeds), cfg.seeds, [str(out)] * len(cfg.seeds)))
    else:
        results = [_seed_job(cfg_json, s, str(out)) for s in cfg.seeds]
    errors = {str(r["seed"]): r["error"] for r in results if "error" in r}
    per_seed = {str(r["seed"]): r["summary"] for r in results if "summary" in r}
    if per_seed:
        _write_json(out / "summary.json", {"per_seed": per_seed, "aggregate": aggregate(per_seed),
                                           "total_steps": cfg.total_steps})
    _write_json(out / "manifest.json", manifest(cfg, "incomplete" if errors else "complete", errors, started))
    if errors:
        raise RuntimeError(f"{len(errors)} seed(s) failed: {errors}")
    return out


def read_seed_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for name in EPISODE_FIELDS:
        cols[name] = np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])
    return cols


def summarize(result_dir: str | Path) -> dict:
    """Recompute per-seed and aggregate scores from the CSV logs alone."""
    d = Path(result_dir)
    cfg_path = d / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{d} has no config.json; not a result directory")
    cfg = ExperimentConfig.model_validate_json(cfg_path.read_text())
    per_seed = {}
    for seed in cfg.seeds:
        path = seed_csv(d, seed)
        if not path.exists():
            continue
        c = read_seed_csv(path)
        per_seed[str(seed)] = seed_summary(c["step"], c["true_reward"], c["terminated"], cfg.total_steps)
    if not per_seed:
        raise FileNotFoundError(f"no seed logs in {d}")
    return {"per_seed": per_seed, "aggregate": aggregate(per_seed), "total_steps": cfg.total_steps}
