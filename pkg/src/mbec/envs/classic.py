"""Cart-pole and mountain-car with the usual published dynamics."""
from __future__ import annotations

import math

import numpy as np


class CartPole:
    """Euler-integrated cart-pole; +1 per step, 200-step cap."""

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    tau = 0.02
    theta_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4

    def __init__(self, rng: np.random.Generator | None = None, max_steps: int = 200):
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.max_steps = max_steps
        self.n_actions = 2
        self.obs_dim = 4
        self.state = np.zeros(4)
        self.t = 0

    @classmethod
    def dynamics(cls, state: np.ndarray, action: int) -> np.ndarray:
        x, x_dot, theta, theta_dot = state
        force = cls.force_mag if action == 1 else -cls.force_mag
        total_mass = cls.masscart + cls.masspole
        polemass_length = cls.masspole * cls.length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * theta_dot ** 2 * sin) / total_mass
        theta_acc = (cls.gravity * sin - cos * temp) / (
            cls.length * (4.0 / 3.0 - cls.masspole * cos ** 2 / total_mass))
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        return np.array([x + cls.tau * x_dot, x_dot + cls.tau * x_acc,
                         theta + cls.tau * theta_dot, theta_dot + cls.tau * theta_acc])

    @classmethod
    def failed(cls, state: np.ndarray) -> bool:
        return bool(abs(state[0]) > cls.x_limit or abs(state[2]) > cls.theta_limit)

    def reset(self) -> np.ndarray:
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.t = 0
        return self.state.copy()

    def step(self, action: int):
        if action not in (0, 1):
            raise ValueError(f"invalid cart-pole action {action}")
        self.state = self.dynamics(self.state, action)
        self.t += 1
        terminated = self.failed(self.state)
        truncated = not terminated and self.t >= self.max_steps
        info = {"true_reward": 1.0, "terminated": terminated, "truncated": truncated}
        return self.state.copy(), 1.0, terminated or truncated, info

    def config(self) -> dict:
        return {"kind": "cartpole", "max_steps": self.max_steps}


class MountainCar:
    """Under-powered car in a valley; -1 per step until position >= 0.5.

    Observations are rescaled to roughly unit range; ``state`` keeps the raw
    (position, velocity).
    """

    min_position, max_position = -1.2, 0.6
    max_speed = 0.07
    goal_position = 0.5
    force = 0.001
    gravity = 0.0025
    obs_center = np.array([-0.3, 0.0])
    obs_scale = np.array([0.9, 0.07])

    def __init__(self, rng: np.random.Generator | None = None, max_steps: int = 200):
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.max_steps = max_steps
        self.n_actions = 3
        self.obs_dim = 2
        self.state = np.zeros(2)
        self.t = 0

    @classmethod
    def dynamics(cls, state: np.ndarray, action: int) -> np.ndarray:
        position, velocity = state
        velocity += (action - 1) * cls.force + math.cos(3 * position) * (-cls.gravity)
        velocity = min(max(velocity, -cls.max_speed), cls.max_speed)
        position += velocity
        position = min(max(position, cls.min_position), cls.max_position)
        if position == cls.min_position and velocity < 0:
            velocity = 0.0
        return np.array([position, velocity])

    def observe(self) -> np.ndarray:
        return (self.state - self.obs_center) / self.obs_scale

    def reset(self) -> np.ndarray:
        self.state = np.array([self.rng.uniform(-0.6, -0.4), 0.0])
        self.t = 0
        return self.observe()

    def step(self, action: int):
        if action not in (0, 1, 2):
            raise ValueError(f"invalid mountain-car action {action}")
        self.state = self.dynamics(self.state, action)
        self.t += 1
        terminated = bool(self.state[0] >= self.goal_position)
        truncated = not terminated and self.t >= self.max_steps
        info = {"true_reward": -1.0, "terminated": terminated, "truncated": truncated}
        return self.observe(), -1.0, terminated or truncated, info

    def config(self) -> dict:
        return {"kind": "mountaincar", "max_steps": self.max_steps}


def classic_control_step(env_kind: str, state, action: int):
    """Pure transition function on raw states: (next_state, reward, done-by-failure/goal)."""
    state = np.asarray(state, dtype=np.float64)
    if env_kind == "cartpole":
        nxt = CartPole.dynamics(state, action)
        return nxt, 1.0, CartPole.failed(nxt)
    if env_kind == "mountaincar":
        nxt = MountainCar.dynamics(state, action)
        return nxt, -1.0, bool(nxt[0] >= MountainCar.goal_position)
    raise ValueError(f"unknown classic-control env {env_kind!r}")
