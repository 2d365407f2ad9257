"""Episodic planning policy, chunked memory writing and the training loop.

``MBEC`` acts greedily on the model-based episodic value alone;
``MBEC++`` adds a Q-network and mixes the two through a learned gate.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import diffnum as dn
from .memcore import EpisodicMemory, ReadRule
from .rng import Streams
from .trajmodel import TrajectoryBuffer, TrajectoryModel, TrajectoryVec, encode_sa
from .valuenets import Gate, QNetwork, RewardModel, ValueBundle, td_loss_graph, td_targets

MODES = ("MBEC", "MBEC++")


class TrainingAborted(RuntimeError):
    """A run stopped early; the message carries the global step."""


class AgentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(5, ge=1)
    chunk_len: int = Field(5, ge=1)
    mem_capacity: int = Field(1000, ge=1)
    alpha_w: float = Field(0.5, gt=0.0, le=1.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    p_read: float = Field(0.7, ge=0.0, le=1.0)
    p_u: float = Field(0.1, ge=0.0, le=1.0)
    p_rec: float = Field(0.5, ge=0.0, le=1.0)
    eps_start: float = Field(1.0, ge=0.0, le=1.0)
    eps_end: float = Field(0.01, ge=0.0, le=1.0)
    eps_decay_frac: float = Field(0.1, ge=0.0, le=1.0)
    lr_q: float = Field(1e-3, gt=0.0)
    lr_traj: float = Field(1e-3, gt=0.0)
    lr_reward: float = Field(1e-3, gt=0.0)
    replay_capacity: int = Field(1_000_000, ge=1)
    batch_size: int = Field(32, ge=1)
    target_sync: int = Field(100, ge=1)
    traj_hidden: int = Field(16, ge=1)
    q_hidden: int | None = Field(None, ge=1)
    reward_hidden: int = Field(32, ge=1)
    gate_hidden: int = Field(32, ge=1)
    tr_samples: int = Field(4, ge=1)
    tr_noise: float = Field(0.1, ge=0.0)
    bptt_window: int | None = Field(None, ge=1)
    normalize_keys: bool = False
    gate_uses_state: bool = False
    # ablations
    traj_loss: Literal["tr", "tp", "none"] = "tr"
    write_k: int | None = Field(None, ge=1)
    refine: bool = True
    fixed_beta: float | None = Field(None, ge=0.0, le=1.0)
    memory_enabled: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        return self

    @property
    def k_write(self) -> int:
        return self.k if self.write_k is None else self.write_k

    def hidden_q(self, default: int = 128) -> int:
        return default if self.q_hidden is None else self.q_hidden


def epsilon_at(step: int, total_steps: int, start: float = 1.0, end: float = 0.01,
               decay_frac: float = 0.1) -> float:
    """Linear decay from ``start`` to ``end`` over the first ``decay_frac`` of the run."""
    horizon = decay_frac * total_steps
    if horizon <= 0:
        return end
    return max(end, start - (start - end) * step / horizon)


def greedy(values) -> int:
    """Argmax with ties going to the lowest action index."""
    return int(np.argmax(np.asarray(values)))


def select_action(values, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over ``values``; one uniform draw decides explore vs exploit."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    if rng.random() < eps:
        return int(rng.integers(len(values)))
    return greedy(values)


def mc_returns(rewards, gamma: float) -> float:
    """Discounted sum ``sum_i gamma^i * rewards[i]``."""
    total = 0.0
    for r in reversed(list(rewards)):
        total = float(r) + gamma * total
    return total


def discounted_suffixes(rewards, gamma: float) -> np.ndarray:
    """``out[i] = mc_returns(rewards[i:], gamma)`` for every i."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = float(rewards[i]) + gamma * acc
        out[i] = acc
    return out


class QMBEC(NamedTuple):
    values: np.ndarray
    cold: bool


def q_mbec(state, tau_prev: TrajectoryVec, memory: EpisodicMemory, traj_model: TrajectoryModel,
           reward_model: RewardModel, rule: ReadRule, gamma: float,
           rng: np.random.Generator | None = None) -> QMBEC:
    """``r(s, a) + gamma * read(step([s, a], tau_prev))`` for every action.

    With an empty memory the read term is 0 and ``cold`` is set.
    """
    rewards = reward_model.predict_all(state)
    if memory.occupancy == 0:
        return QMBEC(rewards, True)
    keys = traj_model.lookahead(state, tau_prev)
    return QMBEC(rewards + gamma * memory.read_batch(keys, rule, rng), False)


@dataclass
class ChunkBuffer:
    """Trajectory vectors earmarked every L steps, with their 1-based step index."""

    chunk_len: int
    entries: list[tuple[np.ndarray, int]] = field(default_factory=list)

    def maybe_add(self, t: int, tau_prev: TrajectoryVec) -> bool:
        if t % self.chunk_len == 0:
            self.entries.append((tau_prev.hidden.copy(), t))
            return True
        return False

    def returns(self, rewards, gamma: float) -> list[tuple[np.ndarray, float]]:
        """Pair each stored key with the discounted reward suffix from its step on."""
        suffix = discounted_suffixes(rewards, gamma)
        return [(key, float(suffix[t - 1])) for key, t in self.entries]

    def clear(self) -> None:
        self.entries.clear()


@dataclass
class Transition:
    s: np.ndarray
    a: int
    s_next: np.ndarray
    r: float
    tau_prev: TrajectoryVec
    tau: TrajectoryVec
    done: bool


class ReplayBuffer:
    """Uniform replay over transitions with trajectory vectors; storage grows on demand."""

    def __init__(self, capacity: int, state_dim: int, traj_dim: int = 0):
        self.capacity = int(capacity)
        self.state_dim, self.traj_dim = int(state_dim), int(traj_dim)
        self.size = 0
        self._next = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, n: int) -> None:
        old = getattr(self, "data", None)
        dims = {"s": self.state_dim, "s_next": self.state_dim, "h_prev": self.traj_dim,
                "c_prev": self.traj_dim, "h": self.traj_dim, "c": self.traj_dim}
        data = {k: np.zeros((n, d)) for k, d in dims.items()}
        data["a"] = np.zeros(n, dtype=np.int64)
        data["r"] = np.zeros(n)
        data["done"] = np.zeros(n)
        if old is not None:
            for k, v in old.items():
                data[k][:self.size] = v[:self.size]
        self.data = data
        self._rows = n

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        if self._next >= self._rows and self._rows < self.capacity:
            self._alloc(min(self.capacity, 2 * self._rows))
        i = self._next
        d = self.data
        d["s"][i] = tr.s
        d["s_next"][i] = tr.s_next
        d["a"][i] = tr.a
        d["r"][i] = tr.r
        d["done"][i] = float(tr.done)
        if self.traj_dim:
            d["h_prev"][i], d["c_prev"][i] = tr.tau_prev.hidden, tr.tau_prev.cell
            d["h"][i], d["c"][i] = tr.tau.hidden, tr.tau.cell
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = rng.integers(0, self.size, size=batch_size)
        return {k: v[idx] for k, v in self.data.items()}


EPISODE_FIELDS = ["step", "episode", "reward", "true_reward", "episode_len", "terminated", "eps",
                  "episodic_contribution", "semantic_contribution", "memory_occupancy",
                  "td_loss", "tr_loss", "reward_loss"]


@dataclass
class MetricsLog:
    """Per-episode rows plus per-step greedy-agreement traces (MBEC++ only)."""

    episodes: list[dict] = field(default_factory=list)
    episodic_match: list[bool] = field(default_factory=list)
    semantic_match: list[bool] = field(default_factory=list)
    agent: object = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.episodes)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.episodes], dtype=np.float64)

    def to_csv(self, path: str | os.PathLike) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_FIELDS)
            for row in self.episodes:
                w.writerow([_fmt(row[k]) for k in EPISODE_FIELDS])
        os.replace(tmp, path)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _mean_or_nan(xs: list[float]) -> float:
    return float(np.mean(xs)) if xs else float("nan")


class MBECAgent:
    """Holds every learned component plus the episodic memory."""

    def __init__(self, cfg: AgentConfig, state_dim: int, n_actions: int, mode: str = "MBEC++",
                 streams: Streams | None = None):
        if mode not in MODES:
            raise ValueError(f"unknown agent mode {mode!r}")
        self.cfg, self.mode = cfg, mode
        self.state_dim, self.n_actions = int(state_dim), int(n_actions)
        self.streams = streams if streams is not None else Streams(0)
        rs = self.streams
        self.traj = TrajectoryModel(state_dim, n_actions, cfg.traj_hidden, rs["init.traj"])
        self.reward = RewardModel(state_dim, n_actions, cfg.reward_hidden, rs["init.reward"])
        self.memory = EpisodicMemory(cfg.mem_capacity, cfg.traj_hidden, cfg.k, cfg.normalize_keys)
        self.rule = ReadRule("mixed", cfg.p_read)
        self.replay = ReplayBuffer(cfg.replay_capacity, state_dim, cfg.traj_hidden)
        self.traj_opt = dn.Adam(self.traj.params, cfg.lr_traj)
        self.reward_opt = dn.Adam(self.reward.params, cfg.lr_reward)
        self.values: ValueBundle | None = None
        if mode == "MBEC++":
            hidden = cfg.hidden_q()
            q_net = QNetwork(state_dim, n_actions, hidden, rs["init.q"])
            q_target = QNetwork(state_dim, n_actions, hidden, np.random.default_rng(0))
            gate_net = Gate(cfg.traj_hidden, cfg.gate_hidden, rs["init.gate"],
                            state_dim if cfg.gate_uses_state else 0, cfg.fixed_beta)
            self.values = ValueBundle(q_net, q_target, gate_net, self.reward, cfg.target_sync)
            self.q_opt = dn.Adam([q_net.params, gate_net.params], cfg.lr_q)

    @property
    def episodic_on(self) -> bool:
        return self.cfg.memory_enabled

    # acting

    def _gate_beta(self, tau: TrajectoryVec, state) -> float:
        g = self.values.gate
        return float(g.predict(tau.hidden[None, :], state if g.state_dim else None)[0])

    def action_values(self, state, tau_prev: TrajectoryVec) -> dict:
        """Episodic, parametric and combined values for one state."""
        cfg = self.cfg
        if self.mode == "MBEC":
            qm = q_mbec(state, tau_prev, self.memory, self.traj, self.reward, self.rule, cfg.gamma,
                        self.streams["read"])
            return {"episodic": qm.values, "cold": qm.cold, "q": qm.values}
        q_theta = self.values.q_net.predict(state)[0]
        if self.episodic_on and self.memory.occupancy:
            qm = q_mbec(state, tau_prev, self.memory, self.traj, self.reward, self.rule, cfg.gamma,
                        self.streams["read"])
            episodic = qm.values * self._gate_beta(tau_prev, state)
            cold = False
        else:
            episodic, cold = np.zeros(self.n_actions), True
        return {"episodic": episodic, "semantic": q_theta, "cold": cold, "q": episodic + q_theta}

    # learning pieces

    def _q_mbec_batch(self, states, h, c, rng) -> np.ndarray:
        b = states.shape[0]
        keys = self.traj.lookahead_batch(states, h, c).reshape(b * self.n_actions, -1)
        reads = self.memory.read_batch(keys, self.rule, rng).reshape(b, self.n_actions)
        return self.reward.predict_all_batch(states) + self.cfg.gamma * reads

    def refine_step(self, state, tau_prev: TrajectoryVec) -> float | None:
        if self.memory.occupancy == 0:
            return None
        next_keys = self.traj.lookahead(state, tau_prev)
        rewards = self.reward.predict_all(state)
        return self.memory.refine_with(tau_prev.hidden, rewards, next_keys, self.cfg.gamma,
                                       self.cfg.alpha_w, self.cfg.k_write)

    def td_step(self, batch: dict) -> float:
        cfg, vb = self.cfg, self.values
        g = vb.gate
        use_mem = self.episodic_on and self.memory.occupancy > 0
        b = batch["a"].shape[0]
        if use_mem:
            rng = self.streams["read"]
            qm_next = self._q_mbec_batch(batch["s_next"], batch["h"], batch["c"], rng)
            beta_next = g.predict(batch["h"], batch["s_next"] if g.state_dim else None)
            qm = self._q_mbec_batch(batch["s"], batch["h_prev"], batch["c_prev"], rng)
            qm_sa = qm[np.arange(b), batch["a"]]
        else:
            qm_next = np.zeros((b, self.n_actions))
            beta_next = np.zeros(b)
            qm_sa = np.zeros(b)
        targets = td_targets(batch["r"], batch["done"], qm_next, beta_next,
                             vb.q_target.predict(batch["s_next"]), cfg.gamma)
        self.q_opt.zero_grad()
        loss = td_loss_graph(vb.q_net, g, batch["s"], batch["a"], qm_sa, batch["h_prev"], targets)
        loss.backward()
        self.q_opt.step()
        return float(loss.data)

    def reward_step(self, batch: dict) -> float | None:
        return self.reward.train_step(batch["s"], batch["a"], batch["r"], self.reward_opt)

    def traj_step(self, buffer: TrajectoryBuffer) -> float | None:
        cfg = self.cfg
        if cfg.traj_loss == "none":
            return None
        return self.traj.train_step(buffer, self.streams["traj"], self.traj_opt, cfg.traj_loss,
                                    cfg.tr_samples, cfg.tr_noise, cfg.bptt_window)

    def write_chunks(self, chunks: ChunkBuffer, rewards) -> int:
        pairs = chunks.returns(rewards, self.cfg.gamma)
        for key, value in pairs:
            self.memory.write(key, value, self.cfg.alpha_w, self.cfg.k_write)
        return len(pairs)

    # persistence

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"traj.{k}": v for k, v in self.traj.params.state_dict().items()}
        out.update({f"reward.{k}": v for k, v in self.reward.params.state_dict().items()})
        if self.values is not None:
            out.update({f"q.{k}": v for k, v in self.values.q_net.params.state_dict().items()})
            out.update({f"gate.{k}": v for k, v in self.values.gate.params.state_dict().items()})
        n = self.memory.occupancy
        out["memory.keys"] = self.memory.keys[:n].copy()
        out["memory.values"] = self.memory.values[:n].copy()
        return out

    def save_checkpoint(self, path) -> None:
        dn.save_arrays(path, self.state_arrays())


def _check_finite(name: str, value, step: int):
    if value is not None and not math.isfinite(value):
        raise TrainingAborted(f"non-finite {name} loss at step {step}")
    return value


def run_training(cfg: AgentConfig, env, mode: str = "MBEC++", total_steps: int = 10_000,
                 seed: int = 0, agent: MBECAgent | None = None, streams: Streams | None = None,
                 on_episode=None, actions_out: list | None = None) -> MetricsLog:
    """Interact with ``env`` for ``total_steps`` steps and learn online.

    Only finished episodes are logged. ``on_episode(row)`` is called after
    each; ``actions_out`` collects every action taken.
    """
    streams = streams if streams is not None else Streams(seed)
    if agent is None:
        agent = MBECAgent(cfg, env.obs_dim, env.n_actions, mode, streams)
    log = MetricsLog()
    explore, refine_rng, rec_rng, replay_rng = (streams["explore"], streams["refine"],
                                                streams["rec"], streams["replay"])
    plus = mode == "MBEC++"
    episodic = agent.episodic_on
    step = 0
    episode = 0
    while step < total_steps:
        state = np.asarray(env.reset(), dtype=np.float64)
        tau_prev = agent.traj.initial()
        traj_buf = TrajectoryBuffer()
        chunks = ChunkBuffer(cfg.chunk_len)
        rewards: list[float] = []
        true_return = 0.0
        td_losses: list[float] = []
        tr_losses: list[float] = []
        re_losses: list[float] = []
        t = 0
        done = False
        info: dict = {}
        while not done and step < total_steps:
            t += 1
            eps = epsilon_at(step, total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_frac)
            vals = agent.action_values(state, tau_prev)
            action = select_action(vals["q"], eps, explore)
            if actions_out is not None:
                actions_out.append(action)
            if plus:
                final = greedy(vals["q"])
                log.episodic_match.append(greedy(vals["episodic"]) == final)
                log.semantic_match.append(greedy(vals["semantic"]) == final)
            tau = agent.traj.step(encode_sa(state, action, agent.n_actions), tau_prev)
            try:
                next_state, reward, done, info = env.step(action)
            except Exception as exc:
                raise TrainingAborted(f"environment failed at step {step + 1} (episode {episode}): {exc}") from exc
            next_state = np.asarray(next_state, dtype=np.float64)
            rewards.append(float(reward))
            true_return += float(info.get("true_reward", reward))
            agent.replay.add(Transition(state, action, next_state, float(reward), tau_prev, tau,
                                        bool(info.get("terminated", done))))
            traj_buf.add(state, action)
            step += 1
            try:
                if episodic:
                    if refine_rng.random() < cfg.p_u and cfg.refine:
                        agent.refine_step(state, tau_prev)
                if len(agent.replay) >= cfg.batch_size:
                    batch = agent.replay.sample(cfg.batch_size, replay_rng)
                    if plus:
                        td_losses.append(_check_finite("TD", agent.td_step(batch), step))
                    if episodic:
                        re_losses.append(_check_finite("reward", agent.reward_step(batch), step))
                if plus:
                    agent.values.maybe_sync(step)
                if episodic and chunks.maybe_add(t, tau_prev) and rec_rng.random() < cfg.p_rec:
                    loss = _check_finite("trajectory", agent.traj_step(traj_buf), step)
                    if loss is not None:
                        tr_losses.append(loss)
            except dn.NonFiniteError as exc:
                raise TrainingAborted(f"non-finite value at step {step}: {exc}") from exc
            state, tau_prev = next_state, tau
        if not done:
            break
        if episodic:
            agent.write_chunks(chunks, rewards)
        row = {
            "step": step, "episode": episode, "reward": float(sum(rewards)), "true_reward": true_return,
            "episode_len": t, "terminated": bool(info.get("terminated", False)), "eps": eps,
            "episodic_contribution": float("nan"), "semantic_contribution": float("nan"),
            "memory_occupancy": agent.memory.occupancy,
            "td_loss": _mean_or_nan(td_losses), "tr_loss": _mean_or_nan(tr_losses),
            "reward_loss": _mean_or_nan(re_losses),
        }
        if plus:
            row["episodic_contribution"] = float(np.mean(log.episodic_match[-100:]))
            row["semantic_contribution"] = float(np.mean(log.semantic_match[-100:]))
        log.episodes.append(row)
        if on_episode is not None:
            on_episode(row)
        episode += 1
    log.agent = agent
    return log
