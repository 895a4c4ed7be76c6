"""Flat ``key = value`` run configuration shared by every CLI subcommand.

Format: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored. Values are parsed according to the field type (booleans accept
true/false, tuples are comma-separated, ``none`` clears an optional field).
Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields

from .models.audio import AudioModelConfig
from .models.symbolic import SymbolicModelConfig
from .models.training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_dir: str = ""
    audio_dir: str = ""  # rendered WAVs with manifest.csv; empty means render on the fly
    balance_per_class: int | None = None
    split_seed: int = 0
    dataset_seed: int = 0  # synth preset seed
    augmentation: str = "none"  # none | default
    augmentation_seed: int = 0
    # symbolic model
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 512
    dropout_p: float = 0.1
    # audio model
    n_conv_blocks: int = 4
    channels: tuple = (16, 32, 64, 128)
    use_aff: bool = False
    hidden_dim: int = 128
    max_frames: int = 256
    audio_dropout_p: float = 0.2
    aff_reduction: int = 4
    # front end
    n_fft: int = 2048
    hop: int = 480
    n_mels: int = 64
    fmin: float = 20.0
    fmax: float = 24000.0
    # optimisation
    epochs: int = 10
    total_steps: int | None = None
    batch_size: int = 8
    seed: int = 0
    peak_lr: float = 5e-5
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_backbone: bool = False
    # pretraining
    pretrain_steps: int = 500
    pretrain_batch_size: int = 16
    pretrain_peak_lr: float = 1e-3
    pretrain_corpus_size: int = 2000
    pretrain_seed: int = 1

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.augmentation not in ("none", "default"):
            raise ConfigError(f"augmentation must be 'none' or 'default', got {self.augmentation!r}")

    def symbolic_model(self) -> SymbolicModelConfig:
        return SymbolicModelConfig(d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads,
                                   ff_dim=self.ff_dim, max_len=self.max_len, dropout_p=self.dropout_p)

    def audio_model(self) -> AudioModelConfig:
        return AudioModelConfig(n_conv_blocks=self.n_conv_blocks, channels=self.channels,
                                use_aff=self.use_aff, hidden_dim=self.hidden_dim, n_mels=self.n_mels,
                                max_frames=self.max_frames, dropout_p=self.audio_dropout_p,
                                aff_reduction=self.aff_reduction)

    def train_config(self, mode: str, init_checkpoint: str | None = None) -> TrainConfig:
        return TrainConfig(mode=mode, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           peak_lr=self.peak_lr, warmup_fraction=self.warmup_fraction,
                           beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
                           total_steps=self.total_steps, init_checkpoint=init_checkpoint,
                           freeze_backbone=self.freeze_backbone, augmentation=self.augmentation)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


_HINTS = typing.get_type_hints(RunConfig)


def _parse_value(key: str, raw: str):
    hint = _HINTS[key]
    optional = typing.get_origin(hint) in (typing.Union, getattr(__import__("types"), "UnionType", None))
    base = next(a for a in typing.get_args(hint) if a is not type(None)) if optional else hint
    if raw.lower() == "none" and base is not str:
        if optional:
            return None
        raise ConfigError(f"{key}: 'none' not allowed")
    try:
        if base is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if base is int:
            return int(raw)
        if base is float:
            return float(raw)
        if base is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(base, '__name__', base)}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    try:
        return dataclasses.replace(base or RunConfig(), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
