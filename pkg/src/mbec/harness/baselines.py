"""Baseline agents: DQN, a simplified MFEC and uniform random."""
from __future__ import annotations

import numpy as np

from .. import diffnum as dn
from ..agent import (AgentConfig, MetricsLog, ReplayBuffer, TrainingAborted, Transition, discounted_suffixes,
                     epsilon_at, select_action)
from ..rng import Streams
from ..trajmodel import TrajectoryVec
from ..valuenets import QNetwork, td_loss_graph, td_targets

_NO_TAU = TrajectoryVec(np.zeros(0), np.zeros(0))


def _episode_row(step, episode, rewards, true_return, t, info, eps, td_losses=()) -> dict:
    return {"step": step, "episode": episode, "reward": float(sum(rewards)), "true_reward": true_return,
            "episode_len": t, "terminated": bool(info.get("terminated", False)), "eps": eps,
            "episodic_contribution": float("nan"), "semantic_contribution": float("nan"),
            "memory_occupancy": 0, "td_loss": float(np.mean(td_losses)) if len(td_losses) else float("nan"),
            "tr_loss": float("nan"), "reward_loss": float("nan")}


def _env_step(env, action, step, episode):
    try:
        return env.step(action)
    except Exception as exc:
        raise TrainingAborted(f"environment failed at step {step + 1} (episode {episode}): {exc}") from exc


class DQNAgent:
    """Q-learning with a three-layer ReLU network, uniform replay and a target copy."""

    def __init__(self, cfg: AgentConfig, state_dim: int, n_actions: int, streams: Streams):
        self.cfg = cfg
        hidden = cfg.hidden_q(144)
        self.q_net = QNetwork(state_dim, n_actions, hidden, streams["init.q"])
        self.q_target = QNetwork(state_dim, n_actions, hidden, np.random.default_rng(0))
        self.q_target.params.copy_from(self.q_net.params)
        self.opt = dn.Adam(self.q_net.params, cfg.lr_q)
        self.replay = ReplayBuffer(cfg.replay_capacity, state_dim, 0)
        self.n_actions = n_actions

    def act(self, state, eps: float, rng) -> int:
        return select_action(self.q_net.predict(state)[0], eps, rng)

    def dqn_baseline_step(self, batch: dict) -> float:
        """One TD update on a replay batch; returns the loss."""
        b = batch["a"].shape[0]
        zeros = np.zeros((b, self.n_actions))
        targets = td_targets(batch["r"], batch["done"], zeros, np.zeros(b),
                             self.q_target.predict(batch["s_next"]), self.cfg.gamma)
        self.opt.zero_grad()
        loss = td_loss_graph(self.q_net, None, batch["s"], batch["a"], None, None, targets)
        loss.backward()
        self.opt.step()
        return float(loss.data)


def run_dqn(cfg: AgentConfig, env, total_steps: int, seed: int = 0, streams: Streams | None = None,
            on_episode=None, actions_out: list | None = None) -> MetricsLog:
    streams = streams if streams is not None else Streams(seed)
    agent = DQNAgent(cfg, env.obs_dim, env.n_actions, streams)
    explore, replay_rng = streams["explore"], streams["replay"]
    log = MetricsLog()
    step = episode = 0
    while step < total_steps:
        state = np.asarray(env.reset(), dtype=np.float64)
        rewards, true_return, losses, t, done, info = [], 0.0, [], 0, False, {}
        while not done and step < total_steps:
            t += 1
            eps = epsilon_at(step, total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_frac)
            action = agent.act(state, eps, explore)
            if actions_out is not None:
                actions_out.append(action)
            next_state, reward, done, info = _env_step(env, action, step, episode)
            next_state = np.asarray(next_state, dtype=np.float64)
            rewards.append(float(reward))
            true_return += float(info.get("true_reward", reward))
            agent.replay.add(Transition(state, action, next_state, float(reward), _NO_TAU, _NO_TAU,
                                        bool(info.get("terminated", done))))
            step += 1
            if len(agent.replay) >= cfg.batch_size:
                loss = agent.dqn_baseline_step(agent.replay.sample(cfg.batch_size, replay_rng))
                if not np.isfinite(loss):
                    raise TrainingAborted(f"non-finite TD loss at step {step}")
                losses.append(loss)
            if step % cfg.target_sync == 0:
                agent.q_target.params.copy_from(agent.q_net.params)
            state = next_state
        if not done:
            break
        row = _episode_row(step, episode, rewards, true_return, t, info, eps, losses)
        log.episodes.append(row)
        if on_episode is not None:
            on_episode(row)
        episode += 1
    log.agent = agent
    return log


class MFECTable:
    """Per-action value table keyed by projected observations.

    Exact key matches return the stored value; unseen keys average the values
    of the K nearest stored keys. Writes keep the maximum return seen.
    """

    def __init__(self, key_dim: int, k: int = 11, capacity: int = 1_000_000):
        self.k, self.capacity, self.key_dim = int(k), int(capacity), int(key_dim)
        self.keys = np.zeros((min(capacity, 1024), key_dim))
        self.values = np.zeros(self.keys.shape[0])
        self.index: dict[bytes, int] = {}
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def lookup(self, key) -> float:
        key = np.asarray(key, dtype=np.float64)
        slot = self.index.get(key.tobytes())
        if slot is not None:
            return float(self.values[slot])
        if self.size == 0:
            return 0.0
        d = ((self.keys[:self.size] - key) ** 2).sum(axis=1)
        k = min(self.k, self.size)
        nn = np.argpartition(d, k - 1)[:k] if k < self.size else np.arange(self.size)
        return float(self.values[nn].mean())

    def write(self, key, value: float) -> None:
        key = np.asarray(key, dtype=np.float64)
        tag = key.tobytes()
        slot = self.index.get(tag)
        if slot is not None:
            self.values[slot] = max(self.values[slot], value)
            return
        if self.size < self.capacity:
            if self.size == self.keys.shape[0]:
                n = min(self.capacity, 2 * self.size)
                self.keys = np.concatenate([self.keys, np.zeros((n - self.size, self.key_dim))])
                self.values = np.concatenate([self.values, np.zeros(n - self.size)])
            slot = self.size
            self.size += 1
        else:
            slot = self._head
            self._head = (self._head + 1) % self.capacity
            del self.index[self.keys[slot].tobytes()]
        self.keys[slot] = key
        self.values[slot] = value
        self.index[tag] = slot


class MFECAgent:
    def __init__(self, state_dim: int, n_actions: int, k: int = 11, key_dim: int = 64,
                 capacity: int = 1_000_000, gamma: float = 0.99, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.projection = rng.standard_normal((state_dim, key_dim)) / np.sqrt(key_dim)
        self.tables = [MFECTable(key_dim, k, capacity) for _ in range(n_actions)]
        self.gamma = gamma

    def key(self, state) -> np.ndarray:
        return np.asarray(state, dtype=np.float64) @ self.projection

    def values(self, state) -> np.ndarray:
        key = self.key(state)
        return np.array([t.lookup(key) for t in self.tables])

    def mfec_baseline_step(self, states, actions, rewards) -> None:
        """End-of-episode update: each visited (key, action) keeps its max discounted return."""
        returns = discounted_suffixes(rewards, self.gamma)
        for s, a, g in zip(states, actions, returns):
            self.tables[a].write(self.key(s), g)


def run_mfec(cfg: AgentConfig, env, total_steps: int, seed: int = 0, streams: Streams | None = None,
             k: int = 11, key_dim: int = 64, capacity: int = 1_000_000, on_episode=None) -> MetricsLog:
    streams = streams if streams is not None else Streams(seed)
    agent = MFECAgent(env.obs_dim, env.n_actions, k, key_dim, capacity, cfg.gamma, streams["init.mfec"])
    explore = streams["explore"]
    log = MetricsLog()
    step = episode = 0
    while step < total_steps:
        state = np.asarray(env.reset(), dtype=np.float64)
        states, actions, rewards, true_return, t, done, info = [], [], [], 0.0, 0, False, {}
        while not done and step < total_steps:
            t += 1
            eps = epsilon_at(step, total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_frac)
            action = select_action(agent.values(state), eps, explore)
            next_state, reward, done, info = _env_step(env, action, step, episode)
            states.append(state)
            actions.append(action)
            rewards.append(float(reward))
            true_return += float(info.get("true_reward", reward))
            step += 1
            state = np.asarray(next_state, dtype=np.float64)
        if not done:
            break
        agent.mfec_baseline_step(states, actions, rewards)
        row = _episode_row(step, episode, rewards, true_return, t, info, eps)
        row["memory_occupancy"] = sum(len(tb) for tb in agent.tables)
        log.episodes.append(row)
        if on_episode is not None:
            on_episode(row)
        episode += 1
    log.agent = agent
    return log


def run_random(env, total_steps: int, seed: int = 0, streams: Streams | None = None, on_episode=None) -> MetricsLog:
    streams = streams if streams is not None else Streams(seed)
    rng = streams["explore"]
    log = MetricsLog()
    step = episode = 0
    while step < total_steps:
        env.reset()
        rewards, true_return, t, done, info = [], 0.0, 0, False, {}
        while not done and step < total_steps:
            t += 1
            _, reward, done, info = _env_step(env, int(rng.integers(env.n_actions)), step, episode)
            rewards.append(float(reward))
            true_return += float(info.get("true_reward", reward))
            step += 1
        if not done:
            break
        row = _episode_row(step, episode, rewards, true_return, t, info, 1.0)
        log.episodes.append(row)
        if on_episode is not None:
            on_episode(row)
        episode += 1
    return log
