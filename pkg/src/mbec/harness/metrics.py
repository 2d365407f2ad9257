"""Greedy-agreement contribution metric and summary statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def running_mean(x, window: int = 100) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what exists so far."""
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be positive")
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(1, x.size + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


@dataclass
class Contribution:
    episodic: np.ndarray  # running fraction per step
    semantic: np.ndarray
    episodic_frac: float  # over the whole trace
    semantic_frac: float


def contribution_metric(episodic_argmax, semantic_argmax, final_argmax, window: int = 100) -> Contribution:
    """How often each system's greedy action equals the combined greedy action.

    The two fractions are computed independently and need not sum to one.
    """
    e = np.asarray(episodic_argmax)
    s = np.asarray(semantic_argmax)
    f = np.asarray(final_argmax)
    if f.size == 0:
        raise ValueError("contribution metric needs a non-empty trace")
    if not e.shape == s.shape == f.shape:
        raise ValueError("argmax traces must have equal length")
    em = (e == f).astype(np.float64)
    sm = (s == f).astype(np.float64)
    return Contribution(running_mean(em, window), running_mean(sm, window), float(em.mean()), float(sm.mean()))


def contribution_from_matches(episodic_match, semantic_match, window: int = 100) -> Contribution:
    em = np.asarray(episodic_match, dtype=np.float64)
    sm = np.asarray(semantic_match, dtype=np.float64)
    if em.size == 0:
        raise ValueError("contribution metric needs a non-empty trace")
    return Contribution(running_mean(em, window), running_mean(sm, window), float(em.mean()), float(sm.mean()))


def seed_summary(steps, true_rewards, terminated, total_steps: int, final_frac: float = 0.1) -> dict:
    """Per-seed scores from per-episode columns.

    ``final_reward`` averages episodes that end in the last ``final_frac`` of
    the step budget (the last episode if none do).
    """
    steps = np.asarray(steps, dtype=np.float64)
    rewards = np.asarray(true_rewards, dtype=np.float64)
    term = np.asarray(terminated, dtype=np.float64)
    if rewards.size == 0:
        return {"episodes": 0, "completed": 0, "mean_reward": float("nan"), "final_reward": float("nan")}
    late = steps > (1.0 - final_frac) * total_steps
    final = rewards[late].mean() if late.any() else rewards[-1]
    return {"episodes": int(rewards.size), "completed": int(term.sum()),
            "mean_reward": float(rewards.mean()), "final_reward": float(final)}


def aggregate(per_seed: dict) -> dict:
    """Mean and population std of each per-seed score across seeds."""
    keys = ("episodes", "completed", "mean_reward", "final_reward")
    out = {}
    for k in keys:
        vals = np.array([v[k] for v in per_seed.values()], dtype=np.float64)
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
