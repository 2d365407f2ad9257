from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor, get_default_dtype


class ParamSet:
    """Named parameter tensors with paired gradient accumulators."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        data = np.array(value, dtype=get_default_dtype(), copy=True)
        t = Tensor(data, requires_grad=True, name=name)
        t.grad = np.zeros_like(data)
        self._params[name] = t
        return t

    def extend(self, other: "ParamSet", prefix: str = "") -> None:
        for name, t in other.items():
            key = prefix + name
            if key in self._params:
                raise KeyError(f"duplicate parameter {key!r}")
            self._params[key] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad.fill(0.0)

    def size(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, t in self._params.items():
            v = np.asarray(state[k])
            if v.shape != t.data.shape:
                raise ShapeError(f"load: {k} has shape {v.shape}, expected {t.data.shape}")
            t.data[...] = v

    def copy_from(self, other: "ParamSet") -> None:
        for (k, t), (k2, s) in zip(self._params.items(), other.items()):
            if t.data.shape != s.data.shape:
                raise ShapeError(f"copy_from: {k} {t.data.shape} vs {k2} {s.data.shape}")
            t.data[...] = s.data
