"""Experiment configuration: YAML on disk, validated with pydantic."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..agent import AgentConfig

AGENT_KINDS = ("MBEC", "MBEC++", "DQN", "MFEC", "Random")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending fields."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TaskConfig(_Strict):
    kind: Literal["maze", "cartpole", "mountaincar"]
    size: int = Field(3, ge=2)
    mode: Literal["plain", "noisy", "trap", "dynamic"] = "plain"
    drop_rate: float = Field(0.0, ge=0.0, lt=1.0)
    max_steps: int | None = Field(None, ge=1)

    @property
    def step_cap(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 1000 if self.kind == "maze" else 200


class NoiseSection(_Strict):
    gaussian_reward_std: float = Field(0.0, ge=0.0)
    bernoulli_reward_p: float = Field(0.0, ge=0.0, le=1.0)
    transition_freeze_p: float = Field(0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _one_reward_noise(self):
        if self.gaussian_reward_std > 0 and self.bernoulli_reward_p > 0:
            raise ValueError("at most one reward-noise kind may be active")
        return self


class MFECConfig(_Strict):
    k: int = Field(11, ge=1)
    key_dim: int = Field(64, ge=1)
    capacity: int = Field(1_000_000, ge=1)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    task: TaskConfig
    agent: Literal["MBEC", "MBEC++", "DQN", "MFEC", "Random"]
    agent_config: AgentConfig = Field(default_factory=AgentConfig)
    mfec: MFECConfig = Field(default_factory=MFECConfig)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    total_steps: int = Field(..., ge=0)
    eval_every: int = Field(1000, ge=1)
    seeds: list[int] = Field(..., min_length=1)
    output_dir: str | None = None
    workers: int = Field(1, ge=1)
    save_memory: bool = False
    save_checkpoint: bool = False

    @field_validator("seeds")
    @classmethod
    def _unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("seeds must be unique")
        return v

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return parse_config(data)
