"""Stochastic observation wrappers; the wrapped dynamics are never touched."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseConfig:
    gaussian_reward_std: float = 0.0
    bernoulli_reward_p: float = 0.0
    transition_freeze_p: float = 0.0

    def __post_init__(self):
        if self.gaussian_reward_std < 0:
            raise ValueError("gaussian_reward_std must be >= 0")
        for name in ("bernoulli_reward_p", "transition_freeze_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.gaussian_reward_std > 0 and self.bernoulli_reward_p > 0:
            raise ValueError("at most one reward-noise kind may be active")

    @property
    def active(self) -> bool:
        return bool(self.gaussian_reward_std or self.bernoulli_reward_p or self.transition_freeze_p)


class NoisyEnv:
    """Perturbs what the agent sees.

    Gaussian noise is added to rewards, or rewards are sign-flipped with
    probability ``bernoulli_reward_p``. With probability
    ``transition_freeze_p`` the agent is shown its previous observation again
    while the hidden state advances. ``info["true_reward"]`` keeps the clean
    reward.
    """

    def __init__(self, env, noise: NoiseConfig, rng: np.random.Generator):
        self.env = env
        self.noise = noise
        self.rng = rng
        self.n_actions = env.n_actions
        self.obs_dim = env.obs_dim
        self.max_steps = env.max_steps
        self._last_obs = None

    def reset(self):
        self._last_obs = self.env.reset()
        return self._last_obs.copy()

    def step(self, action: int):
        obs, reward, done, info = self.env.step(action)
        cfg = self.noise
        if cfg.gaussian_reward_std > 0:
            reward = reward + self.rng.normal(0.0, cfg.gaussian_reward_std)
        elif cfg.bernoulli_reward_p > 0 and self.rng.random() < cfg.bernoulli_reward_p:
            reward = -reward
        if cfg.transition_freeze_p > 0 and self.rng.random() < cfg.transition_freeze_p:
            obs = self._last_obs.copy()
        self._last_obs = obs
        return obs.copy(), reward, done, info

    def config(self) -> dict:
        cfg = self.env.config()
        cfg["noise"] = vars(self.noise).copy()
        return cfg

    def __getattr__(self, name):
        return getattr(self.env, name)


def apply_noise(env, noise: NoiseConfig, rng: np.random.Generator):
    return NoisyEnv(env, noise, rng) if noise.active else env
