"""Self-contained reverse-mode autodiff with double-backprop support."""

from .adam import AdamState, adam_step, init_params
from .checkpoint import (
    CheckpointFormatError,
    checkpoint_hash,
    load_checkpoint,
    save_checkpoint,
)
from .engine import (
    Tensor,
    absolute,
    add,
    backward,
    broadcast_to,
    clip,
    concat,
    crop,
    embed,
    exp,
    find_first_nonfinite,
    fold,
    grad,
    leaky_relu,
    log,
    matmul,
    mul,
    neg,
    no_grad,
    pow_const,
    reshape,
    sum_of,
    transpose,
    unfold,
)
from .gradcheck import check_grad, check_grad_second, numeric_grad
from .ops import (
    conv2d,
    conv2d_transpose,
    flatten,
    mean,
    pad2d,
    softplus,
    sqrt,
    sub,
    sum_sq,
    tsum,
)

__all__ = [
    "AdamState",
    "CheckpointFormatError",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "backward",
    "broadcast_to",
    "check_grad",
    "check_grad_second",
    "checkpoint_hash",
    "clip",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "crop",
    "embed",
    "exp",
    "find_first_nonfinite",
    "flatten",
    "fold",
    "grad",
    "init_params",
    "leaky_relu",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "numeric_grad",
    "pad2d",
    "pow_const",
    "reshape",
    "save_checkpoint",
    "softplus",
    "sqrt",
    "sub",
    "sum_of",
    "sum_sq",
    "transpose",
    "tsum",
    "unfold",
]
