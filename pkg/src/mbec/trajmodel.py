"""Recurrent trajectory model, reconstructor and the recall / prediction losses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum import MLP, LSTMCell, ParamSet, ShapeError, Tensor


@dataclass
class TrajectoryVec:
    """LSTM hidden state (the memory key) plus the cell state carried with it."""

    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "TrajectoryVec":
        return cls(np.zeros(dim), np.zeros(dim))

    def copy(self) -> "TrajectoryVec":
        return TrajectoryVec(self.hidden.copy(), self.cell.copy())


@dataclass
class TrajectoryBuffer:
    """State/action pairs of the current episode, in time order."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    def add(self, state, action: int) -> None:
        self.states.append(np.asarray(state, dtype=np.float64))
        self.actions.append(int(action))

    def clear(self) -> None:
        self.states.clear()
        self.actions.clear()

    def __len__(self) -> int:
        return len(self.actions)


def one_hot(action: int, n_actions: int) -> np.ndarray:
    v = np.zeros(n_actions)
    v[action] = 1.0
    return v


def encode_sa(state, action: int, n_actions: int) -> np.ndarray:
    return np.concatenate([np.asarray(state, dtype=np.float64).reshape(-1), one_hot(action, n_actions)])


class TrajectoryModel:
    """LSTM trajectory encoder with a feed-forward reconstructor.

    The reconstructor maps a hidden state back to a ``[state, one-hot action]``
    vector and has one ReLU hidden layer of width ``2 * (state_dim + n_actions)``.
    """

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 16,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim = int(state_dim)
        self.n_actions = int(n_actions)
        self.hidden = int(hidden)
        self.sa_dim = self.state_dim + self.n_actions
        self.cell = LSTMCell(self.sa_dim, self.hidden, rng)
        self.recon = MLP([self.hidden, 2 * self.sa_dim, self.sa_dim], rng, hidden_act="relu")
        self.params = ParamSet()
        self.params.extend(self.cell.params, "lstm.")
        self.params.extend(self.recon.params, "recon.")

    def initial(self) -> TrajectoryVec:
        return TrajectoryVec.zeros(self.hidden)

    def encode(self, state, action: int) -> np.ndarray:
        return encode_sa(state, action, self.n_actions)

    def step(self, sa, prev: TrajectoryVec) -> TrajectoryVec:
        sa = np.asarray(sa, dtype=np.float64).reshape(1, -1)
        if sa.shape[1] != self.sa_dim:
            raise ShapeError(f"trajectory step: input has {sa.shape[1]} features, expected {self.sa_dim}")
        h, c = self.cell.predict(sa, prev.hidden[None, :], prev.cell[None, :])
        return TrajectoryVec(h[0], c[0])

    def step_batch(self, sa: np.ndarray, h: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.cell.predict(sa, h, c)

    def lookahead(self, state, prev: TrajectoryVec) -> np.ndarray:
        """Hidden vectors after each possible action from ``prev``; shape (A, H)."""
        sa = np.concatenate([np.tile(np.asarray(state, dtype=np.float64).reshape(1, -1), (self.n_actions, 1)),
                             np.eye(self.n_actions)], axis=1)
        h = np.tile(prev.hidden, (self.n_actions, 1))
        c = np.tile(prev.cell, (self.n_actions, 1))
        return self.cell.predict(sa, h, c)[0]

    def lookahead_batch(self, states: np.ndarray, h: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Look-ahead keys for a batch; returns (B, A, H)."""
        b, a = states.shape[0], self.n_actions
        sa = np.concatenate([np.repeat(states, a, axis=0), np.tile(np.eye(a), (b, 1))], axis=1)
        hn, _ = self.cell.predict(sa, np.repeat(h, a, axis=0), np.repeat(c, a, axis=0))
        return hn.reshape(b, a, self.hidden)

    def unroll(self, sas: np.ndarray, start: TrajectoryVec | None = None) -> list[TrajectoryVec]:
        """Step-by-step unroll; returns the state after each input."""
        cur = self.initial() if start is None else start
        out = []
        for row in np.asarray(sas, dtype=np.float64):
            cur = self.step(row, cur)
            out.append(cur)
        return out

    # graph-building helpers

    def _unroll_graph(self, sas: np.ndarray, bptt_window: int | None = None) -> list[tuple[Tensor, Tensor]]:
        """Hidden/cell tensors after each step, starting from zeros.

        With ``bptt_window`` only the last that many steps are recorded.
        """
        n = sas.shape[0]
        cut = 0 if bptt_window is None else max(0, n - bptt_window)
        h0 = np.zeros((1, self.hidden))
        c0 = np.zeros((1, self.hidden))
        states: list[tuple[Tensor, Tensor]] = []
        if cut:
            h_np, c_np = h0, c0
            for row in sas[:cut]:
                h_np, c_np = self.cell.predict(row[None, :], h_np, c_np)
                states.append((dn.Tensor(h_np), dn.Tensor(c_np)))
            h, c = dn.Tensor(h_np), dn.Tensor(c_np)
        else:
            h, c = dn.Tensor(h0), dn.Tensor(c0)
        for row in sas[cut:]:
            h, c = self.cell(row[None, :], h, c)
            states.append((h, c))
        return states

    def tr_loss_graph(self, sas: np.ndarray, idx: np.ndarray, noise: np.ndarray,
                      bptt_window: int | None = None) -> Tensor:
        """Trajectorial-recall loss for fixed sample indices and query noise.

        ``sas`` holds the episode's encoded pairs 0..t-1 (t = len); the memory
        is the state after the last pair. For each index j the noisy query
        ``sas[j] + noise`` is fed from that state and the reconstruction is
        scored against ``sas[j + 1]``.
        """
        sas = np.asarray(sas, dtype=np.float64)
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0 or idx.max() >= sas.shape[0] - 1 or idx.min() < 0:
            raise ValueError("recall indices must lie in [0, t-2]")
        states = self._unroll_graph(sas, bptt_window)
        h_t, c_t = states[-1]
        ones = np.ones((idx.size, 1))
        h = dn.matmul(ones, h_t)
        c = dn.matmul(ones, c_t)
        q = sas[idx] + noise
        h_q, _ = self.cell(q, h, c)
        return dn.squared_error(self.recon(h_q), sas[idx + 1])

    def tp_loss_graph(self, sas: np.ndarray, idx: np.ndarray, noise: np.ndarray,
                      bptt_window: int | None = None) -> Tensor:
        """Transition-prediction loss: query j is fed from the state *before* j."""
        sas = np.asarray(sas, dtype=np.float64)
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0 or idx.max() >= sas.shape[0] - 1 or idx.min() < 0:
            raise ValueError("prediction indices must lie in [0, t-2]")
        states = self._unroll_graph(sas, bptt_window)
        zeros = dn.Tensor(np.zeros((1, self.hidden)))
        prev_h = [states[j - 1][0] if j > 0 else zeros for j in idx]
        prev_c = [states[j - 1][1] if j > 0 else zeros for j in idx]
        h = dn.concat(prev_h, axis=0)
        c = dn.concat(prev_c, axis=0)
        h_q, _ = self.cell(sas[idx] + noise, h, c)
        return dn.squared_error(self.recon(h_q), sas[idx + 1])

    def sample_queries(self, sas: np.ndarray, rng: np.random.Generator, n_samples: int = 4,
                       noise_std_scale: float = 0.1) -> tuple[np.ndarray, np.ndarray] | None:
        """Uniform past indices and Gaussian query noise with std ``scale * ||q||``."""
        t = sas.shape[0]
        if t < 2:
            return None
        idx = rng.integers(0, t - 1, size=n_samples)
        q = sas[idx]
        std = noise_std_scale * np.sqrt((q * q).sum(axis=1, keepdims=True))
        noise = rng.standard_normal(q.shape) * std
        return idx, noise

    def buffer_array(self, buffer: TrajectoryBuffer) -> np.ndarray:
        if not len(buffer):
            return np.zeros((0, self.sa_dim))
        return np.stack([encode_sa(s, a, self.n_actions) for s, a in zip(buffer.states, buffer.actions)])

    def train_step(self, buffer: TrajectoryBuffer, rng: np.random.Generator, opt: dn.Adam,
                   kind: str = "tr", n_samples: int = 4, noise_std_scale: float = 0.1,
                   bptt_window: int | None = None) -> float | None:
        """One optimiser step on the recall (``"tr"``) or prediction (``"tp"``) loss.

        Returns the loss, or None when the buffer is too short (skipped).
        """
        sas = self.buffer_array(buffer)
        drawn = self.sample_queries(sas, rng, n_samples, noise_std_scale)
        if drawn is None:
            return None
        idx, noise = drawn
        graph = self.tr_loss_graph if kind == "tr" else self.tp_loss_graph
        self.params.zero_grad()
        loss = graph(sas, idx, noise, bptt_window)
        loss.backward()
        opt.step()
        return float(loss.data)


def tr_loss(model: TrajectoryModel, buffer: TrajectoryBuffer, rng: np.random.Generator,
            n_samples: int = 4, noise_std_scale: float = 0.1) -> float | None:
    """Recall loss with gradients left in ``model.params``; None means skipped."""
    sas = model.buffer_array(buffer)
    drawn = model.sample_queries(sas, rng, n_samples, noise_std_scale)
    if drawn is None:
        return None
    model.params.zero_grad()
    loss = model.tr_loss_graph(sas, *drawn)
    loss.backward()
    return float(loss.data)


def tp_loss(model: TrajectoryModel, buffer: TrajectoryBuffer, rng: np.random.Generator,
            n_samples: int = 4, noise_std_scale: float = 0.1) -> float | None:
    sas = model.buffer_array(buffer)
    drawn = model.sample_queries(sas, rng, n_samples, noise_std_scale)
    if drawn is None:
        return None
    model.params.zero_grad()
    loss = model.tp_loss_graph(sas, *drawn)
    loss.backward()
    return float(loss.data)


@dataclass
class LinearBoundResult:
    holds: bool
    slack: float
    lhs: float
    rhs: float
    sigma_min: float


def linear_tr_loss(W, U, V, tau, queries, targets) -> float:
    """Recall loss of the linear model ``y = W (U tau + V q)`` summed over pairs."""
    pred = (W @ (U @ tau[:, None] + V @ np.asarray(queries).T)).T
    return float(((pred - np.asarray(targets)) ** 2).sum())


def smallest_nonzero_singular_value(m: np.ndarray, rtol: float = 1e-10) -> float:
    s = np.linalg.svd(m, compute_uv=False)
    nz = s[s > rtol * max(s.max(), 1e-300)]
    if nz.size == 0:
        raise np.linalg.LinAlgError("matrix has no nonzero singular value")
    return float(nz.min())


def linear_tr_bound_check(W, U, V, tau1, q1, y1, tau2, q2, y2, n_shared: int) -> LinearBoundResult:
    """Check ``||tau1 - tau2||^2 <= (L1 + L2) / (|S| * sigma_min(WU))``.

    The two trajectories must share their first ``n_shared`` (query, target)
    pairs; ``n_shared`` is |S|.
    """
    q1, q2, y1, y2 = (np.asarray(a, dtype=np.float64) for a in (q1, q2, y1, y2))
    if n_shared < 1:
        raise ValueError("shared-transition set must be nonempty")
    if not (np.array_equal(q1[:n_shared], q2[:n_shared]) and np.array_equal(y1[:n_shared], y2[:n_shared])):
        raise ValueError("trajectories do not share the declared transitions")
    sigma = smallest_nonzero_singular_value(W @ U)
    l1 = linear_tr_loss(W, U, V, tau1, q1, y1)
    l2 = linear_tr_loss(W, U, V, tau2, q2, y2)
    d = np.asarray(tau1) - np.asarray(tau2)
    lhs = float(d @ d)
    rhs = (l1 + l2) / (n_shared * sigma)
    return LinearBoundResult(lhs <= rhs, rhs - lhs, lhs, rhs, sigma)
