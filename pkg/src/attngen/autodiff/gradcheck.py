"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from attngen.autodiff.tensor import Tensor


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_grad(fn, values, h=1e-5, coords=None):
    """Central differences of scalar ``fn(array)`` at ``values``.

    ``coords`` restricts the estimate to the listed flat indices; the other
    entries of the result are NaN.
    """
    x = np.array(values, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    out = np.full(flat.size, np.nan)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(fn(x))
        flat[i] = orig - h
        f_minus = float(fn(x))
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2 * h)
    return out.reshape(x.shape)


def grad_check(fn, point, h=1e-5, coords=None):
    """Max relative error between backprop and central differences.

    ``fn`` maps a Tensor to a scalar Tensor. Run under float64 precision for
    meaningful results.
    """
    point = np.asarray(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(point, requires_grad=True, dtype=np.float64)
    fn(x).backward()
    analytic = np.zeros_like(point) if x.grad is None else x.grad

    numeric = numerical_grad(lambda v: fn(Tensor(v, dtype=np.float64)).item(), point, h, coords)
    idx = slice(None) if coords is None else np.asarray(coords)
    err = relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx])
    return float(err.max()) if err.size else 0.0
