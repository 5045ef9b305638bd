"""Differentiable primitives used by the classifier."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from attngen.errors import ShapeError
from attngen.autodiff.tensor import Tensor


def _pair(padding):
    if isinstance(padding, (tuple, list)):
        left, right = (int(p) for p in padding)
    else:
        left = right = int(padding)
    if left < 0 or right < 0:
        raise ShapeError(f"padding must be nonnegative, got {padding!r}")
    return left, right


def same_padding(kernel_size):
    """(left, right) zero padding that keeps the length under stride 1."""
    total = kernel_size - 1
    return total // 2, total - total // 2


def embedding_lookup(table: Tensor, tokens) -> Tensor:
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise TypeError("tokens must be an integer array")
    vocab, dim = table.shape
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        bad = tokens[(tokens < 0) | (tokens >= vocab)].flat[0]
        raise IndexError(f"token index {bad} out of range for vocabulary of size {vocab}")
    out = table.data[tokens]

    def grad_fn(g):
        # one-hot matmul instead of np.add.at: fixed reduction order
        flat = tokens.reshape(-1)
        onehot = np.zeros((flat.size, vocab), dtype=g.dtype)
        onehot[np.arange(flat.size), flat] = 1
        return (onehot.T @ g.reshape(-1, dim),)

    return Tensor._make(out, (table,), grad_fn)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor, padding=0) -> Tensor:
    """Stride-1 cross-correlation over the last axis of a (B, C_in, L) input.

    ``padding`` is either one int applied to both ends or a (left, right) pair.
    """
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError("conv1d expects input (B, C, L) and kernel (O, C, K)")
    batch, channels, length = x.shape
    out_ch, k_ch, width = kernel.shape
    if k_ch != channels:
        raise ShapeError(f"kernel expects {k_ch} input channels, got {channels}")
    if bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_ch} output channels")
    left, right = _pair(padding)
    padded_len = length + left + right
    if width > padded_len:
        raise ShapeError(f"kernel width {width} exceeds padded length {padded_len}")
    out_len = padded_len - width + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    # cols[b, t, c, k] = xp[b, c, t + k]
    cols = sliding_window_view(xp, width, axis=2).transpose(0, 2, 1, 3)
    cols = cols.reshape(batch * out_len, channels * width)
    w2 = kernel.data.reshape(out_ch, channels * width)
    out = (cols @ w2.T).reshape(batch, out_len, out_ch).transpose(0, 2, 1) + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, out_ch)
        grads = []
        if x.requires_grad:
            # input gradient = correlation of the fully padded output
            # gradient with the flipped, channel-transposed kernel
            gp = np.pad(g, ((0, 0), (0, 0), (width - 1, width - 1)))
            gcols = sliding_window_view(gp, width, axis=2)[:, :, left:left + length]
            gcols = gcols.transpose(0, 2, 1, 3).reshape(batch * length, out_ch * width)
            flipped = kernel.data[:, :, ::-1].transpose(1, 0, 2).reshape(channels, out_ch * width)
            dx = (gcols @ flipped.T).reshape(batch, length, channels).transpose(0, 2, 1)
            grads.append(np.ascontiguousarray(dx))
        if kernel.requires_grad:
            grads.append((g2.T @ cols).reshape(kernel.shape))
        if bias.requires_grad:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor._make(out, (x, kernel, bias), grad_fn)


def embedding_conv1d(table: Tensor, tokens, kernel: Tensor, bias: Tensor, padding=0) -> Tensor:
    """``conv1d(embedding_lookup(table, tokens).transpose(0, 2, 1), ...)`` fused.

    Each kernel tap k turns into a (V, C_out) table ``table @ kernel[:, :, k].T``,
    so the cost no longer scales with the embedding width. Zero padding is a
    sentinel token whose projected row is zero.
    """
    tokens = np.asarray(tokens)
    vocab, dim = table.shape
    out_ch, k_ch, width = kernel.shape
    if k_ch != dim:
        raise ShapeError(f"kernel expects {k_ch} input channels, embedding width is {dim}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise IndexError(f"token index out of range for vocabulary of size {vocab}")
    batch, length = tokens.shape
    left, right = _pair(padding)
    out_len = length + left + right - width + 1
    if out_len < 1:
        raise ShapeError(f"kernel width {width} exceeds padded length {length + left + right}")
    padded = np.pad(tokens, ((0, 0), (left, right)), constant_values=vocab)
    # proj[k, v, o] = sum_c table[v, c] * kernel[o, c, k]; row ``vocab`` stays zero
    proj = np.zeros((width, vocab + 1, out_ch), dtype=table.data.dtype)
    for k in range(width):
        proj[k, :vocab] = table.data @ kernel.data[:, :, k].T
    acc = np.zeros((batch, out_len, out_ch), dtype=table.data.dtype)
    for k in range(width):
        acc += proj[k][padded[:, k:k + out_len]]
    out = np.ascontiguousarray(acc.transpose(0, 2, 1)) + bias.data[None, :, None]

    def grad_fn(g):
        gt = g.transpose(0, 2, 1).reshape(batch * out_len, out_ch)
        rows = np.arange(batch * out_len)
        dtable = np.zeros_like(table.data)
        dkernel = np.zeros_like(kernel.data)
        for k in range(width):
            onehot = np.zeros((batch * out_len, vocab + 1), dtype=g.dtype)
            onehot[rows, padded[:, k:k + out_len].reshape(-1)] = 1
            dproj = (onehot.T @ gt)[:vocab]
            dtable += dproj @ kernel.data[:, :, k]
            dkernel[:, :, k] = dproj.T @ table.data
        grads = []
        if table.requires_grad:
            grads.append(dtable)
        if kernel.requires_grad:
            grads.append(dkernel)
        if bias.requires_grad:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor._make(out, (table, kernel, bias), grad_fn)


def maxpool1d(x: Tensor, width: int, stride: int) -> Tensor:
    batch, channels, length = x.shape
    if width > length:
        raise ShapeError(f"pool width {width} exceeds length {length}")
    if width < 1 or stride < 1:
        raise ShapeError("pool width and stride must be positive")
    out_len = (length - width) // stride + 1
    windows = sliding_window_view(x.data, width, axis=2)[:, :, ::stride][:, :, :out_len]
    arg = windows.argmax(axis=-1)  # first maximum on ties
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        dx = np.zeros_like(x.data)
        starts = stride * np.arange(out_len)
        for j in range(width):
            dx[:, :, starts + j] += np.where(arg == j, g, 0)
        return (dx,)

    return Tensor._make(np.ascontiguousarray(out), (x,), grad_fn)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
                mode="train", momentum=0.1, eps=1e-5, update_running=True) -> Tensor:
    """Per-channel normalisation of a (B, C, L) input.

    In train mode the batch statistics (population variance over B and L)
    are used and, unless ``update_running`` is false, blended into
    ``running_mean``/``running_var`` in place.
    """
    batch, channels, length = x.shape
    g_ = gamma.data[None, :, None]
    if mode == "train":
        n = batch * length
        if n < 2:
            raise ValueError(f"degenerate batch: {n} value(s) per channel in train mode")
        mean = x.data.mean(axis=(0, 2))
        centered = x.data - mean[None, :, None]
        var = (centered * centered).mean(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std[None, :, None]
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    elif mode == "eval":
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)
        xhat = (x.data - running_mean[None, :, None].astype(x.data.dtype)) * inv_std[None, :, None]
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = g_ * xhat + beta.data[None, :, None]

    def grad_fn(g):
        grads = []
        if x.requires_grad:
            dxhat = g * g_
            if mode == "train":
                n = batch * length
                s1 = dxhat.sum(axis=(0, 2), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
                dx = (inv_std[None, :, None] / n) * (n * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv_std[None, :, None]
            grads.append(dx)
        if gamma.requires_grad:
            grads.append((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor._make(out.astype(x.data.dtype, copy=False), (x, gamma, beta), grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data

    def grad_fn(g):
        grads = []
        if x.requires_grad:
            grads.append(g @ weight.data)
        if weight.requires_grad:
            grads.append(g.T @ x.data)
        if bias.requires_grad:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return Tensor._make(out, (x, weight, bias), grad_fn)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return Tensor._make(np.where(positive, x.data, 0).astype(x.data.dtype), (x,),
                        lambda g: (np.where(positive, g, 0),))


def dropout(x: Tensor, p: float, mode="train", rng=None) -> Tensor:
    """Inverted dropout; the mask is drawn from ``rng`` in C order."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if mode == "eval" or p == 0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = (rng.random_array(x.size) >= p).reshape(x.shape)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    mask = keep.astype(x.data.dtype) * scale
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis=-1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), grad_fn)


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax(x: Tensor) -> Tensor:
    logp = _log_softmax(x.data)
    p = np.exp(logp)
    return Tensor._make(logp, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise IndexError(f"label out of range for {classes} classes")
    logp = _log_softmax(logits.data)
    rows = np.arange(batch)
    loss = -logp[rows, labels].mean()

    def grad_fn(g):
        d = np.exp(logp)
        d[rows, labels] -= 1
        return (d * (g / batch),)

    return Tensor._make(np.asarray(loss, dtype=logits.data.dtype), (logits,), grad_fn)


def kl_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Batch mean of KL(softmax(p_logits) || softmax(q_logits)), in log space."""
    if p_logits.shape != q_logits.shape:
        raise ShapeError(f"kl_divergence shapes differ: {p_logits.shape} vs {q_logits.shape}")
    batch = p_logits.shape[0]
    logp = _log_softmax(p_logits.data)
    logq = _log_softmax(q_logits.data)
    p = np.exp(logp)
    diff = logp - logq
    rows = (p * diff).sum(axis=-1)
    value = rows.mean()

    def grad_fn(g):
        scale = g / batch
        grads = []
        if p_logits.requires_grad:
            grads.append(scale * p * (diff - rows[:, None]))
        if q_logits.requires_grad:
            grads.append(scale * (np.exp(logq) - p))
        return tuple(grads)

    return Tensor._make(np.asarray(value, dtype=p_logits.data.dtype), (p_logits, q_logits), grad_fn)


def mean_last(x: Tensor) -> Tensor:
    """Average over the trailing (feature) axis."""
    return x.mean(axis=-1)
