"""Trajectory-keyed episodic memory.

Keys are trajectory vectors, values are scalar return estimates. Reads are
kernel-weighted K-nearest-neighbour lookups (average or max rule), writes nudge
the K nearest slots toward the written return in proportion to their kernel
weight, and ``refine`` writes a one-step bootstrapped target.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

KERNEL_EPS = 1e-3


class MemoryEmpty(LookupError):
    """Raised when a lookup needs at least one stored slot."""


def kernel(x, y, eps: float = KERNEL_EPS) -> float:
    """Inverse-distance kernel ``1 / (||x - y|| + eps)``."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return 1.0 / (float(np.sqrt(d @ d)) + eps)


def neighbor_weight_bounds(k_w: int, eps: float = KERNEL_EPS) -> tuple[float, float]:
    """Bounds on a normalised neighbour weight when every key lies in the unit ball."""
    if k_w < 1 or eps <= 0:
        raise ValueError("need k_w >= 1 and eps > 0")
    lower = eps / (k_w * eps + 2 * k_w - 2)
    upper = (2 + eps) / (k_w * eps + 2)
    return lower, upper


@dataclass(frozen=True)
class ReadRule:
    """Average, Max, or a per-call random mix choosing Average with probability ``p_read``."""

    variant: str = "mixed"
    p_read: float = 0.7

    def __post_init__(self):
        if self.variant not in ("average", "max", "mixed"):
            raise ValueError(f"unknown read rule {self.variant!r}")
        if not 0.0 <= self.p_read <= 1.0:
            raise ValueError(f"p_read must lie in [0, 1], got {self.p_read}")

    @classmethod
    def average(cls) -> "ReadRule":
        return cls("average", 1.0)

    @classmethod
    def max(cls) -> "ReadRule":
        return cls("max", 0.0)

    @classmethod
    def mixed(cls, p_read: float) -> "ReadRule":
        return cls("mixed", p_read)

    def use_average(self, rng: np.random.Generator | None, size: int | None = None):
        """Draw which rule to apply: True means Average."""
        if self.variant != "mixed":
            flag = self.variant == "average"
            return flag if size is None else np.full(size, flag)
        if rng is None:
            raise ValueError("mixed read rule needs a random generator")
        if size is None:
            return bool(rng.random() < self.p_read)
        return rng.random(size) < self.p_read


class EpisodicMemory:
    """Fixed-capacity key/value store with first-in-first-out eviction.

    Slots are reused in a ring, so the slot overwritten on a full insert is
    always the earliest-inserted surviving one.
    """

    def __init__(self, capacity: int, dim: int, k: int = 5, normalize_keys: bool = False):
        if capacity < 1 or dim < 1 or k < 1:
            raise ValueError("capacity, dim and k must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.k = int(k)
        self.normalize_keys = normalize_keys
        self.keys = np.zeros((self.capacity, self.dim))
        self.values = np.zeros(self.capacity)
        self._seq = np.full(self.capacity, -1, dtype=np.int64)
        self.occupancy = 0
        self._next_seq = 0
        self._head = 0  # oldest slot once full

    def __len__(self) -> int:
        return self.occupancy

    @property
    def insertion_ring(self) -> np.ndarray:
        """Occupied slot indices ordered from earliest to latest insertion."""
        occ = np.arange(self.occupancy)
        return occ[np.argsort(self._seq[:self.occupancy], kind="stable")]

    def insertion_seq(self, slot: int) -> int:
        return int(self._seq[slot])

    def _prep(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"key has dimension {x.shape[0]}, memory expects {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite key")
        if self.normalize_keys:
            n = float(np.sqrt(x @ x))
            if n > 1.0:
                x = x / n
        return x

    def _prep_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.dim:
            raise ValueError(f"queries must have shape (B, {self.dim}), got {xs.shape}")
        if self.normalize_keys:
            n = np.sqrt((xs * xs).sum(axis=1, keepdims=True))
            xs = xs / np.maximum(n, 1.0)
        return xs

    # lookup

    def nearest_neighbors(self, query, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Slots of the ``min(k, occupancy)`` nearest keys and their raw kernel weights.

        Ordered by distance; equal distances keep the lower slot first.
        """
        if self.occupancy == 0:
            raise MemoryEmpty("memory-empty")
        q = self._prep(query)
        k = min(self.k if k is None else int(k), self.occupancy)
        diff = self.keys[:self.occupancy] - q
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if k < self.occupancy:
            kth = np.partition(dist, k - 1)[k - 1]
            cand = np.flatnonzero(dist <= kth)
        else:
            cand = np.arange(self.occupancy)
        order = cand[np.argsort(dist[cand], kind="stable")][:k]
        return order, 1.0 / (dist[order] + KERNEL_EPS)

    def knn_batch(self, queries, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised neighbour search; returns (B, k') slots and kernel weights."""
        if self.occupancy == 0:
            raise MemoryEmpty("memory-empty")
        qs = self._prep_batch(queries)
        n = self.occupancy
        k = min(self.k if k is None else int(k), n)
        keys = self.keys[:n]
        if k < n:
            d2 = (qs * qs).sum(1)[:, None] + (keys * keys).sum(1)[None, :] - 2.0 * qs @ keys.T
            idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
        else:
            idx = np.broadcast_to(np.arange(n), (qs.shape[0], n))
        diff = keys[idx] - qs[:, None, :]
        dist = np.sqrt(np.einsum("bkh,bkh->bk", diff, diff))
        return idx, 1.0 / (dist + KERNEL_EPS)

    def read(self, query, rule: ReadRule = ReadRule.average(), rng: np.random.Generator | None = None,
             k: int | None = None) -> float:
        slots, w = self.nearest_neighbors(query, k)
        vals = self.values[slots]
        if rule.use_average(rng):
            return float(w @ vals / w.sum())
        return float(vals.max())

    def read_batch(self, queries, rule: ReadRule = ReadRule.average(),
                   rng: np.random.Generator | None = None, k: int | None = None) -> np.ndarray:
        """One read per query row; a mixed rule draws independently per row."""
        idx, w = self.knn_batch(queries, k)
        vals = self.values[idx]
        avg = (w * vals).sum(1) / w.sum(1)
        use_avg = rule.use_average(rng, size=idx.shape[0])
        return np.where(use_avg, avg, vals.max(1))

    # update

    def _insert(self, key: np.ndarray, value: float) -> int:
        if self.occupancy < self.capacity:
            slot = self.occupancy
            self.occupancy += 1
        else:
            slot = self._head
            self._head = (self._head + 1) % self.capacity
        self.keys[slot] = key
        self.values[slot] = value
        self._seq[slot] = self._next_seq
        self._next_seq += 1
        return slot

    def find_exact(self, key) -> int | None:
        if self.occupancy == 0:
            return None
        q = self._prep(key)
        hit = np.flatnonzero(np.all(self.keys[:self.occupancy] == q, axis=1))
        return int(hit[0]) if hit.size else None

    def write(self, key, value: float, alpha_w: float = 0.5, k: int | None = None,
              append: bool = True) -> np.ndarray:
        """Multi-slot weighted write.

        The K nearest existing slots move toward ``value`` at rate
        ``alpha_w * w_i / sum(w)``. Unless the key is already stored verbatim,
        the (key, value) pair is then inserted, evicting the earliest slot when
        full. Returns the normalised weights applied to the neighbours.
        """
        if not 0.0 < alpha_w <= 1.0:
            raise ValueError(f"alpha_w must lie in (0, 1], got {alpha_w}")
        value = float(value)
        if not np.isfinite(value):
            raise ValueError("non-finite value written to memory")
        q = self._prep(key)
        matched = self.find_exact(q) is not None
        weights = np.zeros(0)
        if self.occupancy:
            slots, w = self.nearest_neighbors(q, k)
            weights = w / w.sum()
            self.values[slots] += alpha_w * (value - self.values[slots]) * weights
        if append and not matched:
            self._insert(q, value)
        return weights

    def refine_with(self, key, rewards, next_keys, gamma: float, alpha_w: float = 0.5,
                    k: int | None = None, next_probs=None, append: bool = True) -> float | None:
        """Write the bootstrapped target ``max_a r(a) + gamma * read(next_key(a))``.

        ``next_keys`` is (A, H), or (A, M, H) with ``next_probs`` (A, M) giving a
        distribution over M successor trajectories per action. Reads use the
        Average rule. Returns the target, or None when the memory is empty.
        """
        if self.occupancy == 0:
            return None
        rewards = np.asarray(rewards, dtype=np.float64)
        nk = np.asarray(next_keys, dtype=np.float64)
        if next_probs is None:
            reads = self.read_batch(nk.reshape(-1, self.dim), ReadRule.average(), k=k)
        else:
            probs = np.asarray(next_probs, dtype=np.float64)
            reads = (self.read_batch(nk.reshape(-1, self.dim), ReadRule.average(), k=k)
                     .reshape(probs.shape) * probs).sum(axis=1)
        target = float(np.max(rewards + gamma * reads))
        self.write(key, target, alpha_w, k, append=append)
        return target

    # persistence

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "insertion_seq", "value"] + [f"k_{i}" for i in range(self.dim)])
            for slot in self.insertion_ring:
                w.writerow([int(slot), int(self._seq[slot]), repr(float(self.values[slot]))]
                           + [repr(float(v)) for v in self.keys[slot]])


def nearest_neighbors(mem: EpisodicMemory, query, k: int) -> list[tuple[int, float]]:
    slots, w = mem.nearest_neighbors(query, k)
    return [(int(s), float(x)) for s, x in zip(slots, w)]


def read(mem: EpisodicMemory, query, rule: ReadRule, rng=None, k: int | None = None) -> float:
    return mem.read(query, rule, rng, k)


def write(mem: EpisodicMemory, key, value: float, alpha_w: float, k_w: int) -> EpisodicMemory:
    mem.write(key, value, alpha_w, k_w)
    return mem


def refine(mem: EpisodicMemory, state, tau_prev, traj_step: Callable, reward_fn: Callable,
           actions: Sequence[int], gamma: float, alpha_w: float, k: int) -> EpisodicMemory:
    """Refine around ``tau_prev`` using a trajectory model and reward model.

    ``traj_step(state, action, tau_prev)`` returns the look-ahead key for one
    action, ``reward_fn(state, action)`` the predicted reward. The write key is
    the hidden vector of ``tau_prev`` (or ``tau_prev`` itself for plain arrays).
    """
    if mem.occupancy == 0:
        return mem
    keys = np.stack([np.asarray(traj_step(state, a, tau_prev)) for a in actions])
    rewards = np.array([float(reward_fn(state, a)) for a in actions])
    prev_key = getattr(tau_prev, "hidden", tau_prev)
    mem.refine_with(np.asarray(prev_key).reshape(-1), rewards, keys, gamma, alpha_w, k)
    return mem
