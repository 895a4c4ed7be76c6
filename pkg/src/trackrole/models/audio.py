"""Conv-block log-mel classifier with optional attention feature fusion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import functional as F
from ..nn.layers import BatchNorm2d, Conv2d, Dropout, Linear, Module, ModuleList
from ..nn.tensor import ShapeError, Tensor, get_default_dtype, sigmoid

N_CLASSES = 6
FLOOR_DB = -100.0


@dataclass
class AudioModelConfig:
    n_conv_blocks: int = 4
    channels: tuple = (16, 32, 64, 128)
    use_aff: bool = False
    hidden_dim: int = 128
    n_mels: int = 64
    # training/prediction crop length in frames (shorter inputs padded with the dB floor)
    max_frames: int = 256
    dropout_p: float = 0.2
    aff_reduction: int = 4

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != self.n_conv_blocks:
            raise ValueError(f"{self.n_conv_blocks} conv blocks need {self.n_conv_blocks} "
                             f"channel sizes, got {list(self.channels)}")
        if self.use_aff and self.n_conv_blocks < 2:
            raise ValueError("attention feature fusion needs at least two conv blocks")


class ConvBlock(Module):
    """[conv3x3 -> BN -> ReLU] x 2 -> 2x2 average pool."""

    def __init__(self, in_ch, out_ch, rng):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng)
        self.bn2 = BatchNorm2d(out_ch)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        return F.avg_pool2d(x, 2)


class AudioBackbone(Module):
    def __init__(self, config: AudioModelConfig, rng):
        self.bn0 = BatchNorm2d(config.n_mels)
        self.blocks = ModuleList()
        in_ch = 1
        for ch in config.channels:
            self.blocks.append(ConvBlock(in_ch, ch, rng))
            in_ch = ch

    def forward(self, x):
        """x (N, T, M) log-mel -> outputs of every block, each (N, T', M', C)."""
        x = self.bn0(x)  # normalizes each mel band
        x = x.reshape(x.shape + (1,))  # (N, T, M, 1)
        outputs = []
        for block in self.blocks:
            x = block(x)
            outputs.append(x)
        return outputs


class AttentionFeatureFusion(Module):
    """out = w*X + (1-w)*Y with w = sigmoid(local(X+Y) + global(X+Y))."""

    def __init__(self, in_ch, channels, rng, reduction=4):
        inter = max(channels // reduction, 1)
        self.project = Conv2d(in_ch, channels, 1, rng, bias=True)
        self.local_conv1 = Conv2d(channels, inter, 1, rng, bias=True)
        self.local_bn = BatchNorm2d(inter)
        self.local_conv2 = Conv2d(inter, channels, 1, rng, bias=True)
        self.global_conv1 = Conv2d(channels, inter, 1, rng, bias=True)
        self.global_bn = BatchNorm2d(inter)
        self.global_conv2 = Conv2d(inter, channels, 1, rng, bias=True)

    def attention(self, s):
        local = self.local_conv2(F.relu(self.local_bn(self.local_conv1(s))))
        pooled = s.mean(axis=(1, 2), keepdims=True)
        glob = self.global_conv2(F.relu(self.global_bn(self.global_conv1(pooled))))
        return sigmoid(local + glob)

    def fuse(self, x, y):
        if x.shape != y.shape:
            raise ShapeError(f"aff_fuse: shapes {x.shape} and {y.shape} differ")
        w = self.attention(x + y)
        return w * x + (1.0 - w) * y

    def forward(self, prev, last):
        """Fuse the previous block's output (pooled + projected) with the last block's."""
        x = self.project(F.avg_pool2d(prev, 2))
        return self.fuse(x, last)


def aff_fuse(module: AttentionFeatureFusion, x, y):
    return module.fuse(x, y)


class AudioHead(Module):
    def __init__(self, in_dim, hidden_dim, rng, dropout_p):
        self.fc1 = Linear(in_dim, hidden_dim, rng)
        self.fc2 = Linear(hidden_dim, N_CLASSES, rng)
        self.drop = Dropout(dropout_p, rng)

    def forward(self, x):
        return self.fc2(self.drop(F.relu(self.fc1(self.drop(x)))))


class AudioClassifier(Module):
    domain = "audio"

    def __init__(self, config: AudioModelConfig, seed: int = 0, n_outputs: int = N_CLASSES):
        rng = np.random.default_rng(seed)
        self.config = config
        self.backbone = AudioBackbone(config, rng)
        self.aff = (AttentionFeatureFusion(config.channels[-2], config.channels[-1], rng,
                                           config.aff_reduction)
                    if config.use_aff else None)
        self.head = AudioHead(config.channels[-1], config.hidden_dim, rng, config.dropout_p)
        if n_outputs != N_CLASSES:
            self.head.fc2 = Linear(config.hidden_dim, n_outputs, rng)

    def features(self, x):
        outputs = self.backbone(x)
        fused = self.aff(outputs[-2], outputs[-1]) if self.aff is not None else outputs[-1]
        return F.global_mean_max_pool(fused)

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=get_default_dtype()))
        if x.ndim != 3 or x.shape[2] != self.config.n_mels:
            raise ShapeError(f"audio model expects (N, frames, {self.config.n_mels}), got {x.shape}")
        if x.shape[1] < 2 ** self.config.n_conv_blocks:
            raise ShapeError(f"need at least {2 ** self.config.n_conv_blocks} frames, got {x.shape[1]}")
        return self.head(self.features(x))

    def collate(self, spectrograms) -> np.ndarray:
        """Crop/pad each (frames, n_mels) array to max_frames and stack."""
        t = self.config.max_frames
        batch = np.full((len(spectrograms), t, self.config.n_mels), FLOOR_DB, dtype=get_default_dtype())
        for i, values in enumerate(spectrograms):
            values = np.asarray(getattr(values, "values", values))
            batch[i, :min(t, len(values))] = values[:t]
        return batch


def audio_parameter_groups(model: AudioClassifier):
    """Backbone parameter names vs freshly-initialized head/fusion names."""
    names = [n for n, _ in model.named_parameters()]
    backbone = [n for n in names if n.startswith("backbone.")]
    return backbone, [n for n in names if not n.startswith("backbone.")]
