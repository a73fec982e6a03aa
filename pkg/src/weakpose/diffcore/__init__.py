"""Minimal reverse-mode differentiation on dense float64 arrays."""

from .checkpoint import CheckpointError, load_into, read_manifest, save_store
from .nn import MLP, LayerNorm, Linear, MultiHeadAttention, ParamStore, PointEncoder, attention, point_encoder
from .optim import adamw_step
from .tensor import (
    NonFiniteValue,
    ShapeMismatch,
    Tensor,
    add,
    as_tensor,
    clamp_min,
    concat,
    gather_rows,
    layer_norm,
    matmul,
    max_pool_over_points,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    take,
    transpose,
)
from .tensor import sum as tsum
from .gradcheck import check_gradients, check_parameters, directional_check

__all__ = [
    "CheckpointError", "LayerNorm", "Linear", "MLP", "MultiHeadAttention", "NonFiniteValue",
    "ParamStore", "PointEncoder", "ShapeMismatch", "Tensor", "adamw_step", "add", "as_tensor",
    "attention", "check_gradients", "check_parameters", "clamp_min", "concat", "directional_check", "gather_rows",
    "layer_norm", "load_into", "matmul", "max_pool_over_points", "mean", "mul", "point_encoder",
    "read_manifest", "relu", "reshape", "save_store", "scale", "softmax", "sub", "take",
    "transpose", "tsum",
]
