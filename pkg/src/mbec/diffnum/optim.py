from __future__ import annotations

import numpy as np

from .params import ParamSet


class Adam:
    """Adam over one or more parameter sets.

    ``step`` reads the gradient accumulators but never clears them; callers
    zero gradients before the next backward pass.
    """

    def __init__(self, params: ParamSet | list[ParamSet], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        sets = params if isinstance(params, list) else [params]
        self.tensors = [t for ps in sets for t in ps]
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.zero_grad()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else float(lr)
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(opt: Adam, lr: float | None = None) -> None:
    opt.step(lr)
