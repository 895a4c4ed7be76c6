"""Fused ops with hand-written backward passes (softmax, norms, conv, pooling, loss)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, concat, gelu, matmul, relu, sigmoid  # noqa: F401


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor(out, _parents=(x,), _backward=backward, op="softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, _parents=(x,), _backward=backward, op="log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = (lse - shifted[rows, labels]).mean()

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return Tensor(np.asarray(loss, dtype=logits.dtype), _parents=(logits,),
                  _backward=backward, op="cross_entropy")


def _normalize(x, axes, eps):
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def _normalize_backward(dxhat, xhat, inv_std, axes):
    return inv_std * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))


def _leading_normalize(x, eps):
    """Normalize a (..., C) array over all leading axes via a 2-D view."""
    flat = x.reshape(-1, x.shape[-1])
    xhat, inv_std = _normalize(flat, 0, eps)
    return xhat.reshape(x.shape), inv_std[0]


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape} vs scale {gamma.shape}")
    xhat, inv_std = _normalize(x.data, -1, eps)
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gx = _normalize_backward(g * gamma.data, xhat, inv_std, -1) if x.requires_grad else None
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor(out, _parents=(x, gamma, beta), _backward=backward, op="layer_norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch norm over every axis except the last (channels-last layout).

    Running statistics are updated in place when ``training``.
    """
    c = x.shape[-1]
    if gamma.shape != (c,):
        raise ShapeError(f"batch_norm: input {x.shape} vs scale {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        xhat, inv_std = _leading_normalize(x.data, eps)
        count = x.data.size // c
        flat = x.data.reshape(-1, c)
        running_mean *= 1 - momentum
        running_mean += momentum * flat.mean(axis=0)
        running_var *= 1 - momentum
        running_var += momentum * (1.0 / inv_std ** 2 - eps) * (count / max(count - 1, 1))
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x.data - running_mean) * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        if not x.requires_grad:
            gx = None
        elif training:
            gx = _normalize_backward(dxhat.reshape(-1, c), xhat.reshape(-1, c), inv_std, 0).reshape(x.shape)
        else:
            gx = dxhat * inv_std
        g2, xhat2 = g.reshape(-1, c), xhat.reshape(-1, c)
        return gx, (g2 * xhat2).sum(axis=0), g2.sum(axis=0)

    return Tensor(out.astype(x.dtype, copy=False), _parents=(x, gamma, beta),
                  _backward=backward, op="batch_norm")


def embedding(weight: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    n = weight.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"embedding: index out of range for table of size {n}")

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, indices.ravel(), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return Tensor(weight.data[indices], _parents=(weight,), _backward=backward, op="embedding")


def _im2col(xp, kh, kw, stride, ho, wo):
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (N, Ho, Wo, C, kh, kw) -> (N*Ho*Wo, kh*kw*C) with C fastest
    n, c = xp.shape[0], xp.shape[3]
    return np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """2-D cross-correlation with 'same' zero padding, channels-last.

    x (N, H, W, C), weight (kh, kw, C, O) with odd kh, kw -> (N, ceil(H/s), ceil(W/s), O).
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[3] != weight.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} vs weight {weight.shape}")
    n, h, w, c = x.shape
    kh, kw, _, o = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} must be odd for same padding")
    ph, pw = kh // 2, kw // 2
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    if kh == kw == 1 and stride == 1:
        cols = x.data.reshape(-1, c)
        xp = None
    else:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(-1, o)
    out = cols @ wmat
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(-1, o)
        gw = (cols.T @ g2).reshape(weight.shape)
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if x.requires_grad:
            if xp is None:
                gx = (g2 @ wmat.T).reshape(x.shape)
            elif stride == 1:
                # input gradient = same-padded correlation of g with the flipped kernel
                flipped = weight.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
                gpad = np.pad(g, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
                gx = (_im2col(gpad, kh, kw, 1, h, w) @ flipped).reshape(x.shape)
            else:
                dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, c)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
                gx = gxp[:, ph:ph + h, pw:pw + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out.reshape(n, ho, wo, o), _parents=parents, _backward=backward, op="conv2d")


def _pool_view(x: Tensor, k: int):
    n, h, w, c = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise ShapeError(f"pool: input {x.shape} smaller than window {k}")
    cropped = x.data[:, :ho * k, :wo * k]
    return cropped.reshape(n, ho, k, wo, k, c), ho, wo


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling on (N, H, W, C).

    Trailing rows/columns that do not fill a window are dropped.
    """
    view, ho, wo = _pool_view(x, k)
    out = view.mean(axis=(2, 4))

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, :ho * k, :wo * k] = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
        return (full,)

    return Tensor(out, _parents=(x,), _backward=backward, op="avg_pool2d")


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    view, ho, wo = _pool_view(x, k)
    n, c = x.shape[0], x.shape[3]
    blocks = view.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, k * k)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        full = np.zeros_like(x.data)
        full[:, :ho * k, :wo * k] = gb.reshape(n, ho, wo, c, k, k).transpose(0, 1, 4, 2, 5, 3).reshape(
            n, ho * k, wo * k, c)
        return (full,)

    return Tensor(out, _parents=(x,), _backward=backward, op="max_pool2d")


def global_mean_max_pool(x: Tensor) -> Tensor:
    """(N, T, F, C) -> (N, C): average over frequency, then max + mean over time."""
    if x.ndim != 4:
        raise ShapeError(f"global_mean_max_pool: expected 4-D input, got {x.shape}")
    over_freq = x.mean(axis=2)
    return over_freq.max(axis=1) + over_freq.mean(axis=1)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    rng = rng or np.random.default_rng()
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return Tensor(x.data * mask, _parents=(x,), _backward=lambda g: (g * mask,), op="dropout")
