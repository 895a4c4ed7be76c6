"""Central finite-difference gradient checking (run in float64)."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype


def numeric_gradient(f, arrays, index, eps=1e-5):
    """d f / d arrays[index] by central differences; ``f`` maps arrays to a float."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        plus = f(arrays)
        x[i] = old - eps
        minus = f(arrays)
        x[i] = old
        grad[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||), with 0 when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-12 else float(np.linalg.norm(a - b) / scale)


def check_gradients(op, arrays, rng, eps=1e-5) -> float:
    """Worst relative error between autodiff and finite-difference gradients of
    ``sum(op(*tensors) * R)`` for a fixed random projection R, over every input."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with default_dtype(np.float64):
        probe = op(*[Tensor(a) for a in arrays])
        weights = rng.standard_normal(probe.shape)

        def scalar(arrs):
            return float((op(*[Tensor(a) for a in arrs]).data * weights).sum())

        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = op(*tensors)
        (out * Tensor(weights)).sum().backward()
        worst = 0.0
        for i, t in enumerate(tensors):
            analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
            worst = max(worst, relative_error(analytic, numeric_gradient(scalar, arrays, i, eps)))
    return worst
