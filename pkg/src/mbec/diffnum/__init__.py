"""Small reverse-mode differentiable-numerics engine."""
from .checkpoint import CheckpointError, load_arrays, load_params, save_arrays, save_params
from .gradcheck import finite_difference_check, numeric_grad
from .layers import MLP, LSTMCell, lstm_cell_composed
from .optim import Adam, optimizer_step
from .params import ParamSet
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    finite_checks,
    gather_rows,
    get_default_dtype,
    lstm_cell,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    slice_cols,
    square,
    squared_error,
    sub,
    sum,
    tanh,
)


def forward_backward(loss_fn, params: ParamSet):
    """Zero ``params`` gradients, run ``loss_fn`` and backpropagate.

    Returns the scalar loss value; gradients are left in each parameter's
    ``grad`` accumulator.
    """
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    return float(loss.data)


__all__ = [
    "Adam", "CheckpointError", "LSTMCell", "MLP", "NonFiniteError", "ParamSet", "ShapeError", "Tensor",
    "add", "as_tensor", "concat", "finite_checks", "finite_difference_check", "forward_backward",
    "gather_rows", "get_default_dtype", "load_arrays", "load_params", "lstm_cell", "lstm_cell_composed",
    "matmul", "mean", "mul", "no_grad", "numeric_grad", "optimizer_step", "relu", "reshape",
    "save_arrays", "save_params", "set_default_dtype", "sigmoid", "slice_cols", "square",
    "squared_error", "sub", "sum", "tanh",
]
