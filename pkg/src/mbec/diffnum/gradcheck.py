from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParamSet
from .tensor import Tensor


def numeric_grad(loss_fn: Callable[[], float], param: Tensor, step: float) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. every entry of ``param``."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = loss_fn()
        flat[k] = orig - step
        down = loss_fn()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * step)
    return out


def finite_difference_check(loss_fn: Callable[[], Tensor], params: ParamSet, step: float = 1e-5) -> float:
    """Largest relative disagreement between reverse-mode and central-difference gradients.

    ``loss_fn`` must rebuild the graph from the current parameter values each
    call. The error is taken per parameter tensor as
    ``max|analytic - numeric| / max(max|analytic|, 1e-12)`` and the maximum
    over tensors is returned.
    """
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in params:
        analytic = t.grad.copy()
        numeric = numeric_grad(lambda: float(loss_fn().data), t, step)
        denom = max(float(np.max(np.abs(analytic))) if analytic.size else 0.0, 1e-12)
        err = float(np.max(np.abs(analytic - numeric))) / denom if analytic.size else 0.0
        worst = max(worst, err)
    params.zero_grad()
    return worst
