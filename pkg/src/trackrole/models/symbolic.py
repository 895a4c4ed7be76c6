"""Octuple-token transformer encoder with projection + classification head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tokenizer as tok
from ..nn import functional as F
from ..nn.layers import Dropout, Embedding, LayerNorm, Linear, Module, ModuleList, TransformerLayer
from ..nn.tensor import Parameter, Tensor, concat, get_default_dtype, tanh

N_CLASSES = 6
MASK_PITCH = 128  # reserved pitch id used by masked pretraining
FIELD_VOCAB = tuple(size + 1 if name == "pitch" else size
                    for name, size in zip(tok.FIELD_NAMES, tok.FIELD_SIZES))
PAD_BIAS = -1e9


@dataclass
class SymbolicModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 512
    dropout_p: float = 0.1
    field_vocab: tuple = FIELD_VOCAB

    def __post_init__(self):
        self.field_vocab = tuple(int(v) for v in self.field_vocab)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if len(self.field_vocab) != 8:
            raise ValueError("octuple input needs 8 field vocabularies")

    @classmethod
    def small(cls, **overrides):
        return cls(**{"n_layers": 2, **overrides})

    @classmethod
    def base(cls, **overrides):
        return cls(**{"n_layers": 4, **overrides})


def parameter_count(config: SymbolicModelConfig, n_outputs: int = N_CLASSES) -> int:
    """Closed-form parameter count of SymbolicClassifier."""
    d, f, L = config.d_model, config.ff_dim, config.n_layers
    embeddings = d * sum(config.field_vocab) + d * (config.max_len + 1) + d  # fields, positions, CLS
    per_layer = (2 * 2 * d            # two layer norms
                 + 3 * d * d + 3 * d  # fused q/k/v projection
                 + d * d + d          # attention output
                 + d * f + f + f * d + d)  # feed-forward
    final_norm = 2 * d
    head = (d * d + d) + (d * n_outputs + n_outputs)
    return embeddings + L * per_layer + final_norm + head


class SymbolicEncoder(Module):
    def __init__(self, config: SymbolicModelConfig, rng):
        d = config.d_model
        self.fields = ModuleList(Embedding(v, d, rng) for v in config.field_vocab)
        self.positions = Embedding(config.max_len + 1, d, rng)
        self.cls = Parameter(rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), d).astype(get_default_dtype()))
        self.layers = ModuleList(TransformerLayer(d, config.n_heads, config.ff_dim, rng, config.dropout_p)
                                 for _ in range(config.n_layers))
        self.norm = LayerNorm(d)
        self.drop = Dropout(config.dropout_p, rng)

    def forward(self, tokens: np.ndarray, lengths: np.ndarray) -> Tensor:
        """tokens (N, T, 8) int, lengths (N,) -> hidden states (N, T + 1, d); index 0 is CLS."""
        n, t, _ = tokens.shape
        x = None
        for i, table in enumerate(self.fields):
            e = table(tokens[:, :, i])
            x = e if x is None else x + e
        cls = self.cls.reshape(1, 1, -1) + Tensor(np.zeros((n, 1, 1), dtype=self.cls.dtype))
        x = concat([cls, x], axis=1) if t else cls
        x = self.drop(x + self.positions(np.arange(t + 1)))
        key_bias = np.where(np.arange(t + 1)[None, :] <= lengths[:, None], 0.0, PAD_BIAS)
        for layer in self.layers:
            x = layer(x, key_bias)
        return self.norm(x)


class ClassificationHead(Module):
    """CLS vector -> projection (d -> d, tanh) -> classification (d -> n_outputs)."""

    def __init__(self, d_model, rng, n_outputs=N_CLASSES, dropout_p=0.1):
        self.projection = Linear(d_model, d_model, rng)
        self.classifier = Linear(d_model, n_outputs, rng)
        self.drop = Dropout(dropout_p, rng)

    def forward(self, cls_vec):
        return self.classifier(self.drop(tanh(self.projection(self.drop(cls_vec)))))


class SymbolicClassifier(Module):
    domain = "symbolic"

    def __init__(self, config: SymbolicModelConfig, seed: int = 0, n_outputs: int = N_CLASSES):
        rng = np.random.default_rng(seed)
        self.config = config
        self.encoder = SymbolicEncoder(config, rng)
        self.head = ClassificationHead(config.d_model, rng, n_outputs, config.dropout_p)

    def forward(self, batch):
        tokens, lengths = batch
        hidden = self.encoder(tokens, lengths)
        return self.head(hidden[:, 0])

    def collate(self, sequences):
        """TokenSequences (or row lists) -> (tokens (N, T, 8), lengths (N,)), truncated to max_len."""
        rows = [np.asarray(getattr(s, "tuples", s), dtype=np.int64).reshape(-1, 8)[:self.config.max_len]
                for s in sequences]
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        t = int(lengths.max(initial=0))
        tokens = np.zeros((len(rows), t, 8), dtype=np.int64)
        for i, r in enumerate(rows):
            tokens[i, :len(r)] = r
        return tokens, lengths


class MaskedPitchHead(Module):
    """Auxiliary pretraining head: hidden state -> pitch logits (dropped after pretraining)."""

    def __init__(self, d_model, rng):
        self.proj = Linear(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)
        self.out = Linear(d_model, 128, rng)

    def forward(self, h):
        return self.out(self.norm(F.gelu(self.proj(h))))


def mask_tokens(tokens: np.ndarray, lengths: np.ndarray, rng, fraction: float = 0.15):
    """Replace the pitch of ~fraction of real tuples (at least one per non-empty row) with MASK_PITCH.

    Returns (masked tokens, positions (rows, cols), original pitches).
    """
    masked = tokens.copy()
    rows, cols = [], []
    for i, length in enumerate(lengths):
        if length == 0:
            continue
        k = max(1, int(round(fraction * length)))
        chosen = np.sort(rng.choice(length, size=k, replace=False))
        rows.extend([i] * k)
        cols.extend(chosen.tolist())
    rows, cols = np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)
    targets = tokens[rows, cols, 3].copy()
    masked[rows, cols, 3] = MASK_PITCH
    return masked, (rows, cols), targets
