"""Dense tensors with reverse-mode differentiation."""
from .gradcheck import analytic_gradient, grad_check, numeric_gradient
from .ops import (
    add,
    concat,
    conv3d,
    conv_output_extent,
    elementwise,
    expand,
    hadamard,
    matmul,
    relu,
    reshape,
    scale,
    scatter_rows,
    sigmoid,
    softmax_cross_entropy,
    sub,
    take_rows,
    tanh,
    total,
    transpose,
)
from .tensor import Record, Tensor, as_tensor, backward, current_record

__all__ = [
    "Record", "Tensor", "as_tensor", "backward", "current_record",
    "add", "concat", "conv3d", "conv_output_extent", "elementwise", "expand", "hadamard",
    "matmul", "relu", "reshape", "scale", "scatter_rows", "sigmoid", "softmax_cross_entropy",
    "sub", "take_rows", "tanh", "total", "transpose",
    "analytic_gradient", "grad_check", "numeric_gradient",
]
