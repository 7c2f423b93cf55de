from .tensor import (
    Tensor,
    as_tensor,
    concat,
    exp,
    gelu,
    grad_enabled,
    log,
    matmul,
    mse,
    no_grad,
    relu,
    softmax,
    sqrt,
    tanh,
)
from .optim import AdamW, LrSchedule, OptimizerState, lr_at
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamW",
    "LrSchedule",
    "OptimizerState",
    "Tensor",
    "as_tensor",
    "concat",
    "exp",
    "gelu",
    "grad_enabled",
    "load_checkpoint",
    "log",
    "lr_at",
    "matmul",
    "mse",
    "no_grad",
    "relu",
    "save_checkpoint",
    "softmax",
    "sqrt",
    "tanh",
]
