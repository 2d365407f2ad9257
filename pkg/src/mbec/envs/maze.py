"""Grid maze with plain, noisy, trap and dynamic modes."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

# wall bits per cell
N, E, S, W = 1, 2, 4, 8
# action -> (drow, dcol, wall bit, opposite bit)
MOVES = {0: (-1, 0, N, S), 1: (0, 1, E, W), 2: (1, 0, S, N), 3: (0, -1, W, E)}
MODES = ("plain", "noisy", "trap", "dynamic")


def generate_maze(n: int, rng: np.random.Generator) -> np.ndarray:
    """Perfect maze by randomised depth-first carving from (0, 0)."""
    walls = np.full((n, n), N | E | S | W, dtype=np.uint8)
    seen = np.zeros((n, n), dtype=bool)
    stack = [(0, 0)]
    seen[0, 0] = True
    while stack:
        r, c = stack[-1]
        options = [a for a, (dr, dc, _, _) in MOVES.items()
                   if 0 <= r + dr < n and 0 <= c + dc < n and not seen[r + dr, c + dc]]
        if not options:
            stack.pop()
            continue
        a = options[int(rng.integers(len(options)))]
        dr, dc, bit, opp = MOVES[a]
        walls[r, c] = int(walls[r, c]) & ~bit
        walls[r + dr, c + dc] = int(walls[r + dr, c + dc]) & ~opp
        seen[r + dr, c + dc] = True
        stack.append((r + dr, c + dc))
    return walls


def shortest_path_length(walls: np.ndarray, start=(0, 0), goal=None) -> int | None:
    """BFS distance between two cells, or None if unreachable."""
    n = walls.shape[0]
    goal = (n - 1, n - 1) if goal is None else goal
    dist = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if (r, c) == goal:
            return dist[(r, c)]
        for dr, dc, bit, _ in MOVES.values():
            nxt = (r + dr, c + dc)
            if not walls[r, c] & bit and nxt not in dist:
                dist[nxt] = dist[(r, c)] + 1
                queue.append(nxt)
    return None


@dataclass
class MazeSpec:
    size: int = 3
    mode: str = "plain"
    drop_rate: float = 0.0
    max_steps: int = 1000
    feature_dim: int = 512

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown maze mode {self.mode!r}")
        if self.size < 2:
            raise ValueError("maze size must be at least 2")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("drop_rate must lie in [0, 1)")


class MazeEnv:
    """Reach (n-1, n-1) from (0, 0).

    Each step costs 0.1/n^2; bumping a wall adds -1 and leaves the agent in
    place; reaching the goal adds +1 and ends the episode; in trap mode
    entering the trap cell adds -2 without ending it. Episodes are cut at
    ``max_steps``.
    """

    def __init__(self, spec: MazeSpec | None = None, rng: np.random.Generator | None = None, **kwargs):
        self.spec = spec if spec is not None else MazeSpec(**kwargs)
        self.rng = np.random.default_rng(0) if rng is None else rng
        n = self.spec.size
        self.n_actions = 4
        self.walls = generate_maze(n, self.rng)
        self.features = None
        if self.spec.mode == "noisy":
            self.features = self.rng.random((n, n, self.spec.feature_dim))
        extra = {"plain": 0, "noisy": self.spec.feature_dim, "trap": 2, "dynamic": 4 * n * n}[self.spec.mode]
        self.obs_dim = 2 + extra
        self.max_steps = self.spec.max_steps
        self.step_cost = 0.1 / n ** 2
        self.pos = (0, 0)
        self.trap: tuple[int, int] | None = None
        self.t = 0

    @property
    def goal(self) -> tuple[int, int]:
        return (self.spec.size - 1, self.spec.size - 1)

    def _norm(self, cell) -> np.ndarray:
        return np.asarray(cell, dtype=np.float64) / (self.spec.size - 1)

    def observe(self) -> np.ndarray:
        pos = self._norm(self.pos)
        mode = self.spec.mode
        if mode == "plain":
            return pos
        if mode == "noisy":
            f = self.features[self.pos]
            if self.spec.drop_rate > 0:
                keep = self.rng.random(f.shape[0]) >= self.spec.drop_rate
                f = f * keep / (1.0 - self.spec.drop_rate)
            return np.concatenate([pos, f])
        if mode == "trap":
            return np.concatenate([pos, self._norm(self.trap)])
        bits = ((self.walls[..., None] >> np.arange(4)) & 1).astype(np.float64)
        return np.concatenate([pos, bits.reshape(-1)])

    def reset(self) -> np.ndarray:
        n = self.spec.size
        if self.spec.mode == "dynamic":
            self.walls = generate_maze(n, self.rng)
        if self.spec.mode == "trap":
            cells = [(r, c) for r in range(n) for c in range(n) if (r, c) not in ((0, 0), self.goal)]
            self.trap = cells[int(self.rng.integers(len(cells)))]
        self.pos = (0, 0)
        self.t = 0
        return self.observe()

    def step(self, action: int):
        if action not in MOVES:
            raise ValueError(f"invalid maze action {action}")
        dr, dc, bit, _ = MOVES[int(action)]
        r, c = self.pos
        reward = -self.step_cost
        if self.walls[r, c] & bit:
            reward -= 1.0
        else:
            self.pos = (r + dr, c + dc)
            if self.trap is not None and self.pos == self.trap:
                reward -= 2.0
        self.t += 1
        terminated = self.pos == self.goal
        if terminated:
            reward += 1.0
        truncated = not terminated and self.t >= self.max_steps
        info = {"true_reward": reward, "terminated": terminated, "truncated": truncated}
        return self.observe(), reward, terminated or truncated, info

    def config(self) -> dict:
        return {"kind": "maze", "size": self.spec.size, "mode": self.spec.mode,
                "drop_rate": self.spec.drop_rate, "max_steps": self.spec.max_steps}


def maze_step(env: MazeEnv, action: int):
    obs, reward, done, _ = env.step(action)
    return obs, reward, done
