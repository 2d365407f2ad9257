"""Dense layers, MLPs and the LSTM cell built on :mod:`mbec.diffnum.tensor`.

Every module owns a :class:`ParamSet`. ``__call__`` records a graph;
``predict`` runs the same arithmetic directly on numpy arrays and is what the
agents use on hot paths where no gradient is needed.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .params import ParamSet
from .tensor import ShapeError, Tensor

_ACTIVATIONS = {
    "relu": (T.relu, lambda z: np.maximum(z, 0.0)),
    "tanh": (T.tanh, np.tanh),
    "sigmoid": (T.sigmoid, T._sigmoid_np),
    None: (lambda t: t, lambda z: z),
}


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MLP:
    """Feed-forward stack of affine layers; ``hidden_act`` between, ``out_act`` last."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator,
                 hidden_act: str | None = "relu", out_act: str | None = None):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.hidden_act = hidden_act
        self.out_act = out_act
        self.params = ParamSet()
        self._layers: list[tuple[Tensor, Tensor]] = []
        for li, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = self.params.add(f"w{li}", _uniform(rng, n_in, (n_in, n_out)))
            b = self.params.add(f"b{li}", _uniform(rng, n_in, (n_out,)))
            self._layers.append((w, b))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"MLP: expected (B, {self.in_dim}) input, got {x.shape}")
        last = len(self._layers) - 1
        for li, (w, b) in enumerate(self._layers):
            x = T.add(T.matmul(x, w), b)
            x = _ACTIVATIONS[self.out_act if li == last else self.hidden_act][0](x)
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self._layers[0][0].data.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"MLP: expected (B, {self.in_dim}) input, got {x.shape}")
        last = len(self._layers) - 1
        for li, (w, b) in enumerate(self._layers):
            x = x @ w.data + b.data
            x = _ACTIVATIONS[self.out_act if li == last else self.hidden_act][1](x)
        return x


class LSTMCell:
    """Standard LSTM cell; the hidden state doubles as the trajectory vector."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        n = self.input_size + self.hidden_size
        self.params = ParamSet()
        self.w = self.params.add("w", _uniform(rng, self.hidden_size, (n, 4 * self.hidden_size)))
        self.b = self.params.add("b", _uniform(rng, self.hidden_size, (4 * self.hidden_size,)))

    def __call__(self, x, h, c) -> tuple[Tensor, Tensor]:
        x = T.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.input_size:
            raise ShapeError(f"LSTMCell: expected (B, {self.input_size}) input, got {x.shape}")
        return T.lstm_cell(x, h, c, self.w, self.b)

    def predict(self, x: np.ndarray, h: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=self.w.data.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ShapeError(f"LSTMCell: expected (B, {self.input_size}) input, got {x.shape}")
        nh = self.hidden_size
        z = np.concatenate([x, h], axis=1) @ self.w.data + self.b.data
        i = T._sigmoid_np(z[:, :nh])
        f = T._sigmoid_np(z[:, nh:2 * nh])
        g = np.tanh(z[:, 2 * nh:3 * nh])
        o = T._sigmoid_np(z[:, 3 * nh:])
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new


def lstm_cell_composed(x, h, c, w, b) -> tuple[Tensor, Tensor]:
    """The LSTM step written with primitive ops only.

    Used to cross-check the fused ``lstm_cell`` kernel and its hand-written
    backward pass.
    """
    h = T.as_tensor(h)
    nh = h.shape[1]
    z = T.add(T.matmul(T.concat([x, h], axis=1), w), b)
    i = T.sigmoid(T.slice_cols(z, 0, nh))
    f = T.sigmoid(T.slice_cols(z, nh, 2 * nh))
    g = T.tanh(T.slice_cols(z, 2 * nh, 3 * nh))
    o = T.sigmoid(T.slice_cols(z, 3 * nh, 4 * nh))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    return T.mul(o, T.tanh(c_new)), c_new
