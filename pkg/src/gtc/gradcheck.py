"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(fn, arrays, eps=1e-5):
    """d fn / d arrays[k] by central differences; ``fn`` maps arrays to a float."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn(*arrays)
            flat[i] = orig - eps
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-10):
    """||a - n|| / max(||a||, ||n||, floor) over the flattened arrays."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def tape_gradient(fn, arrays):
    """Analytic gradients of scalar ``fn(*tensors)`` with respect to each input array."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    backward(out)
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, leaves)]


def check_gradient(fn, arrays, eps=1e-5):
    """Max relative error between tape and finite-difference gradients of ``fn``.

    ``fn`` receives tensors and must return a scalar tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = tape_gradient(fn, arrays)

    def value(*arrs):
        return fn(*(Tensor(a) for a in arrs)).item()

    numeric = numerical_gradient(value, arrays, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
