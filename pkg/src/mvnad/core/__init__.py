"""Numeric substrate: tensors with reverse-mode tape, layers, optimizer, PRNG."""

from mvnad.core.nn import ParameterSet, feed_forward, multi_head_attention
from mvnad.core.optim import OptimState, adamw_step, grad_check
from mvnad.core.rng import Rng, mix64, rng_gaussian, rng_next
from mvnad.core.tensor import (
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    add_row,
    backward,
    cosine_rows,
    cosine_sim,
    elementwise,
    exp,
    gelu,
    layer_norm,
    log,
    matmul,
    mul,
    scale,
    softmax_rows,
    sub,
    tmean,
    tsum,
)

__all__ = [
    "NumericError",
    "OptimState",
    "Parameter",
    "ParameterSet",
    "Rng",
    "ShapeError",
    "Tensor",
    "adamw_step",
    "add",
    "add_row",
    "backward",
    "cosine_rows",
    "cosine_sim",
    "elementwise",
    "exp",
    "feed_forward",
    "gelu",
    "grad_check",
    "layer_norm",
    "log",
    "matmul",
    "mix64",
    "mul",
    "multi_head_attention",
    "rng_gaussian",
    "rng_next",
    "scale",
    "softmax_rows",
    "sub",
    "tmean",
    "tsum",
]
