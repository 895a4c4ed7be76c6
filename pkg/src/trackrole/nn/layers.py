"""Module containers and standard layers.

Initialization: linear/embedding/conv weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
norm scales 1, biases 0. Embedding tables use their row width as fan_in.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import functional as F
from .tensor import Parameter, ShapeError, Tensor, get_default_dtype


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Module:
    training = True

    def children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, ModuleList):
                for i, m in enumerate(value):
                    yield f"{key}.{i}", m

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key in getattr(self, "_buffer_names", ()):
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict, strict: bool = True):
        """Copy arrays into matching parameters/buffers; returns the names loaded."""
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        loaded = []
        for name, value in state.items():
            if name in own:
                target = own[name].data
            elif name in buffers:
                target = buffers[name]
            elif strict:
                raise KeyError(f"unexpected entry {name!r} in state")
            else:
                continue
            if target.shape != value.shape:
                raise ShapeError(f"{name}: expected shape {target.shape}, got {value.shape}")
            target[...] = value
            loaded.append(name)
        if strict:
            missing = (set(own) | set(buffers)) - set(state)
            if missing:
                raise KeyError(f"missing entries: {sorted(missing)}")
        return loaded

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(list):
    pass


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.weight = Parameter(_uniform(rng, in_dim, (in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim, dtype=get_default_dtype())) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear: input {x.shape} vs weight {self.weight.shape}")
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    def __init__(self, num, dim, rng):
        self.weight = Parameter(_uniform(rng, dim, (num, dim)))

    def forward(self, indices):
        return F.embedding(self.weight, indices)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, bias=False):
        self.weight = Parameter(_uniform(rng, in_ch * kernel * kernel, (kernel, kernel, in_ch, out_ch)))
        self.bias = Parameter(np.zeros(out_ch, dtype=get_default_dtype())) if bias else None
        self.stride = stride

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        self.p = p
        self.rng = rng

    def forward(self, x):
        return F.dropout(x, self.p, self.training, self.rng)


class MultiHeadAttention(Module):
    def __init__(self, d_model, n_heads, rng, dropout_p=0.0):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.drop = Dropout(dropout_p, rng)

    def forward(self, x, key_bias=None):
        """x (N, T, D); key_bias (N, T) additive mask over keys (0 or large negative)."""
        n, t, d = x.shape
        h = self.n_heads
        qkv = self.qkv(x).reshape(n, t, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // h))
        if key_bias is not None:
            scores = scores + key_bias[:, None, None, :].astype(x.dtype)
        attn = self.drop(F.softmax(scores, axis=-1))
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
        return self.out(ctx)


class TransformerLayer(Module):
    """Pre-norm encoder layer: x + Attn(LN(x)), then x + FF(LN(x))."""

    def __init__(self, d_model, n_heads, ff_dim, rng, dropout_p=0.1):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, dropout_p)
        self.norm2 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, ff_dim, rng)
        self.ff2 = Linear(ff_dim, d_model, rng)
        self.drop = Dropout(dropout_p, rng)

    def forward(self, x, key_bias=None):
        x = x + self.drop(self.attn(self.norm1(x), key_bias))
        return x + self.drop(self.ff2(F.gelu(self.ff1(self.norm2(x)))))
