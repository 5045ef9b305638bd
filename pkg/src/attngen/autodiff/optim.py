"""Adam with decoupled-into-gradient weight decay, and global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from attngen.errors import UsageError


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update over ``params`` (in the given order).

    Weight decay is folded into the gradient (``g + wd * theta``) for
    parameters flagged ``decay``. Gradients are left in place; callers reset
    them.
    """
    for p in params:
        if p.grad is None:
            raise UsageError(f"parameter {getattr(p, 'name', '?')!r} has no gradient")
        g = p.grad
        if weight_decay and p.decay:
            g = g + weight_decay * p.data
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * (g * g)
        m_hat = p.adam_m / (1 - beta1 ** t)
        v_hat = p.adam_v / (1 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


def zero_grad(params):
    for p in params:
        p.grad = None
