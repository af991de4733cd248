"""Dense tensors with reverse-mode autodiff and an Adam optimizer."""
from .autograd import (
    OP_KINDS,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv2d,
    default_dtype,
    div,
    embedding,
    exp,
    forward_op,
    get_default_dtype,
    layernorm,
    log,
    log_softmax,
    matmul,
    maxpool2d,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    slice_,
    softmax,
    sqrt,
    stack,
    sub,
    sum_,
    take,
    tanh,
    transpose,
)
from .gradcheck import max_relative_error, numerical_gradient
from .optim import Adam, AdamState, adam_step

__all__ = [
    "OP_KINDS", "Tensor", "add", "as_tensor", "backward", "concat", "conv2d",
    "default_dtype", "div", "embedding", "exp", "forward_op", "get_default_dtype",
    "layernorm", "log", "log_softmax", "matmul", "maxpool2d", "mean", "mul", "neg",
    "no_grad", "power", "relu", "reshape", "set_default_dtype", "slice_", "softmax",
    "sqrt", "stack", "sub", "sum_", "take", "tanh", "transpose",
    "max_relative_error", "numerical_gradient", "Adam", "AdamState", "adam_step",
]
