"""Reward model, parametric Q-network, consolidation gate and the TD loss."""
from __future__ import annotations

import numpy as np

from . import diffnum as dn
from .diffnum import MLP, ParamSet, Tensor


class RewardModel:
    """Two-layer ReLU network on ``[state, one-hot action]`` predicting the reward."""

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 32,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.n_actions = int(state_dim), int(n_actions)
        self.net = MLP([self.state_dim + self.n_actions, hidden, 1], rng, hidden_act="relu")
        self.params = self.net.params
        self._eye = np.eye(self.n_actions)

    def _inputs(self, states, actions) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        return np.concatenate([states, self._eye[np.asarray(actions, dtype=np.int64)]], axis=1)

    def predict(self, states, actions) -> np.ndarray:
        return self.net.predict(self._inputs(states, actions))[:, 0]

    def predict_all(self, state) -> np.ndarray:
        """Predicted reward of every action in one state; shape (A,)."""
        return self.predict_all_batch(np.asarray(state, dtype=np.float64)[None, :])[0]

    def predict_all_batch(self, states: np.ndarray) -> np.ndarray:
        b, a = states.shape[0], self.n_actions
        x = np.concatenate([np.repeat(states, a, axis=0), np.tile(self._eye, (b, 1))], axis=1)
        return self.net.predict(x).reshape(b, a)

    def loss_graph(self, states, actions, rewards) -> Tensor:
        pred = self.net(self._inputs(states, actions))
        target = np.asarray(rewards, dtype=np.float64).reshape(-1, 1)
        return dn.squared_error(pred, target)

    def train_step(self, states, actions, rewards, opt: dn.Adam) -> float | None:
        if len(rewards) == 0:
            return None
        self.params.zero_grad()
        loss = self.loss_graph(states, actions, rewards)
        loss.backward()
        opt.step()
        return float(loss.data)


def reward_loss(model: RewardModel, states, actions, rewards) -> float | None:
    """Mean squared reward error over a batch; None for an empty batch."""
    if len(rewards) == 0:
        return None
    return float(model.loss_graph(states, actions, rewards).data)


class QNetwork:
    """Three affine layers with ReLU between: state -> |A| action values."""

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 128,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.net = MLP([state_dim, hidden, hidden, n_actions], rng, hidden_act="relu")
        self.params = self.net.params
        self.n_actions = int(n_actions)

    def __call__(self, states) -> Tensor:
        return self.net(states)

    def predict(self, states) -> np.ndarray:
        return self.net.predict(np.asarray(states, dtype=np.float64).reshape(-1, self.net.in_dim))


class Gate:
    """Sigmoid-output network giving the episodic consolidation weight.

    Input is the previous trajectory vector, optionally concatenated with the
    state. With ``fixed_beta`` set, the gate returns that constant and has no
    trainable parameters.
    """

    def __init__(self, traj_dim: int, hidden: int = 32, rng: np.random.Generator | None = None,
                 state_dim: int = 0, fixed_beta: float | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.traj_dim, self.state_dim = int(traj_dim), int(state_dim)
        self.fixed_beta = fixed_beta
        if fixed_beta is None:
            self.net = MLP([self.traj_dim + self.state_dim, hidden, 1], rng, hidden_act="relu", out_act="sigmoid")
            self.params = self.net.params
        else:
            if not 0.0 <= fixed_beta <= 1.0:
                raise ValueError(f"fixed beta must lie in [0, 1], got {fixed_beta}")
            self.net = None
            self.params = ParamSet()

    def _inputs(self, taus, states) -> np.ndarray:
        taus = np.asarray(taus, dtype=np.float64).reshape(-1, self.traj_dim)
        if self.state_dim:
            states = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
            return np.concatenate([taus, states], axis=1)
        return taus

    def predict(self, taus, states=None) -> np.ndarray:
        x = self._inputs(taus, states)
        if self.net is None:
            return np.full(x.shape[0], self.fixed_beta)
        return self.net.predict(x)[:, 0]

    def __call__(self, taus, states=None) -> Tensor:
        x = self._inputs(taus, states)
        if self.net is None:
            return Tensor(np.full(x.shape[0], self.fixed_beta))
        return dn.reshape(self.net(x), (x.shape[0],))


def gate(g: Gate, tau_prev, state=None) -> float:
    return float(g.predict(getattr(tau_prev, "hidden", tau_prev), state)[0])


def combined_q(q_mbec, beta, q_theta):
    """Episodic value scaled by the gate, plus the parametric value."""
    return np.asarray(q_mbec) * beta + np.asarray(q_theta)


class ValueBundle:
    """Q-network, its target copy, the gate and the reward model."""

    def __init__(self, q_net: QNetwork, q_target: QNetwork, gate_net: Gate, reward: RewardModel,
                 target_sync_period: int = 100):
        self.q_net, self.q_target, self.gate, self.reward = q_net, q_target, gate_net, reward
        self.target_sync_period = int(target_sync_period)
        self.syncs = 0
        self.q_target.params.copy_from(self.q_net.params)

    def sync_target(self) -> None:
        self.q_target.params.copy_from(self.q_net.params)
        self.syncs += 1

    def maybe_sync(self, step: int) -> bool:
        """Sync after every ``target_sync_period``-th step (``step`` counts from 1)."""
        if step % self.target_sync_period == 0:
            self.sync_target()
            return True
        return False


def td_targets(rewards, dones, q_mbec_next, beta_next, q_target_next, gamma: float) -> np.ndarray:
    """``r + gamma * max_a' Q(s', a')`` with the combined Q; terminal rows keep only ``r``.

    ``q_mbec_next`` and ``q_target_next`` are (B, A); ``beta_next`` is (B,).
    """
    q_next = np.asarray(q_mbec_next) * np.asarray(beta_next)[:, None] + np.asarray(q_target_next)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    return np.asarray(rewards, dtype=np.float64) + gamma * not_done * q_next.max(axis=1)


def td_loss_graph(q_net: QNetwork, gate_net: Gate | None, states, actions, q_mbec_sa, taus_prev,
                  targets) -> Tensor:
    """Mean squared TD error of the combined Q; targets are treated as constants.

    With ``gate_net`` None the episodic term is dropped entirely (plain DQN).
    """
    q_sa = dn.gather_rows(q_net(states), actions)
    if gate_net is not None:
        beta = gate_net(taus_prev, states if gate_net.state_dim else None)
        q_sa = dn.add(dn.mul(np.asarray(q_mbec_sa, dtype=np.float64), beta), q_sa)
    return dn.mean(dn.square(dn.sub(np.asarray(targets, dtype=np.float64), q_sa)))
