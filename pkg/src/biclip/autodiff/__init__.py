"""Minimal reverse-mode differentiable tensor engine."""

from biclip.autodiff import ops
from biclip.autodiff.gradcheck import GradCheckReport, check_parameter_gradients, grad_check
from biclip.autodiff.ops import (
    amax,
    amin,
    clamp,
    concat,
    concat_channels,
    conv2d,
    cosine_similarity,
    exp,
    gather_spatial,
    global_avg_pool,
    l1_distance,
    linear,
    log,
    matmul,
    max_pool2d,
    mean,
    nearest_upsample2d,
    power,
    relu,
    sigmoid,
    split_channels,
    squared_l2_distance,
    stack,
)
from biclip.autodiff.tensor import Graph, Tensor, as_tensor, backward, make_node, no_grad

__all__ = [
    "Graph",
    "GradCheckReport",
    "Tensor",
    "amax",
    "amin",
    "as_tensor",
    "backward",
    "check_parameter_gradients",
    "clamp",
    "concat",
    "concat_channels",
    "conv2d",
    "cosine_similarity",
    "exp",
    "gather_spatial",
    "global_avg_pool",
    "grad_check",
    "l1_distance",
    "linear",
    "log",
    "make_node",
    "matmul",
    "max_pool2d",
    "mean",
    "nearest_upsample2d",
    "no_grad",
    "ops",
    "power",
    "relu",
    "sigmoid",
    "split_channels",
    "squared_l2_distance",
    "stack",
]
