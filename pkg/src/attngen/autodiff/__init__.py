"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from attngen.autodiff.tensor import (
    Parameter,
    Tensor,
    backward,
    get_dtype,
    precision,
    set_precision,
)
from attngen.autodiff.ops import (
    batchnorm1d,
    conv1d,
    cross_entropy,
    dropout,
    embedding_conv1d,
    embedding_lookup,
    kl_divergence,
    linear,
    log_softmax,
    maxpool1d,
    mean_last,
    relu,
    same_padding,
    softmax,
)
from attngen.autodiff.optim import adam_step, clip_grad_norm, global_grad_norm, zero_grad
from attngen.autodiff.gradcheck import grad_check, numerical_grad, relative_error

__all__ = [
    "Parameter", "Tensor", "backward", "get_dtype", "precision", "set_precision",
    "batchnorm1d", "conv1d", "cross_entropy", "dropout", "embedding_conv1d", "embedding_lookup",
    "kl_divergence", "linear", "log_softmax", "maxpool1d", "mean_last", "relu",
    "same_padding", "softmax",
    "adam_step", "clip_grad_norm", "global_grad_norm", "zero_grad",
    "grad_check", "numerical_grad", "relative_error",
]
