from .optim import AdamState, ModelParams, adam_step, clip_grad_norm, uniform_init
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    add,
    affine,
    as_tensor,
    backward,
    clip,
    exp,
    gather,
    log,
    log_softmax,
    lstm_cell,
    lstm_pointwise,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    sigmoid,
    slice_cols,
    softmax,
    square,
    stack,
    sub,
    take_rows,
    tanh,
    tsum,
)

__all__ = [
    "AdamState", "ContractError", "ModelParams", "ShapeError", "Tensor", "adam_step", "add",
    "affine", "as_tensor", "backward", "clip", "clip_grad_norm", "exp", "gather", "log",
    "log_softmax", "lstm_cell", "lstm_pointwise", "matmul", "mean", "mul", "neg", "no_grad",
    "reshape", "sigmoid", "slice_cols", "softmax", "square", "stack", "sub", "take_rows", "tanh",
    "tsum", "uniform_init",
]
