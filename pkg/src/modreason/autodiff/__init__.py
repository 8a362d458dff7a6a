"""Minimal dense-tensor engine with tape-based reverse-mode autodiff."""

from . import kernels
from .gradcheck import grad_check
from .tensor import (
    ComputationTape,
    Tensor,
    add,
    add_bias,
    add_const,
    add_scalar,
    apply_attention_mask,
    backward,
    bce_with_logits,
    cross_entropy,
    embedding,
    index_rows,
    layer_norm,
    log_softmax,
    matmul,
    mean_all,
    mul,
    mul_scalar,
    no_grad,
    relu,
    reset_tape,
    reshape,
    scale_rows,
    scatter_rows,
    softmax,
    sum_all,
    take_position,
    tape_size,
    transpose,
)

__all__ = [
    "ComputationTape", "Tensor", "add", "add_bias", "add_const", "add_scalar",
    "apply_attention_mask", "backward", "bce_with_logits", "cross_entropy",
    "embedding", "grad_check", "index_rows", "kernels", "layer_norm",
    "log_softmax", "matmul", "mean_all", "mul", "mul_scalar", "no_grad",
    "relu", "reset_tape", "reshape", "scale_rows", "scatter_rows", "softmax",
    "sum_all", "take_position", "tape_size", "transpose",
]
