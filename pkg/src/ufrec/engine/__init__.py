from .checkpoint import load_arrays, save_arrays
from .optim import ParameterStore, adam_step, finite_diff_check
from .tensor import (
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    embedding,
    layer_norm,
    log_softmax,
    masked_softmax,
    matmul,
    mse,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    square,
    sub,
    transpose,
    tsum,
)

__all__ = [
    "ParameterStore", "ShapeError", "Tensor", "adam_step", "add", "backward", "concat",
    "embedding", "finite_diff_check", "layer_norm", "load_arrays", "log_softmax",
    "masked_softmax", "matmul", "mse", "mul", "no_grad", "relu", "reshape", "save_arrays",
    "softmax", "square", "sub", "transpose", "tsum",
]
