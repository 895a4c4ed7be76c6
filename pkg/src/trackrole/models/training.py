"""Training, pretraining, fine-tune initialization and prediction for both model families."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..midi_io import TrackRole
from ..nn import functional as F
from ..nn import checkpoint
from ..nn.checkpoint import CheckpointError
from ..nn.layers import Linear, Module
from ..nn.optim import Adam, LrSchedule, NumericError, lr_at
from ..nn.tensor import Tensor
from .audio import AudioClassifier
from .symbolic import MaskedPitchHead, SymbolicClassifier, mask_tokens

logger = logging.getLogger(__name__)

MODES = ("fine_tune", "from_scratch")


class DomainError(TypeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "from_scratch"
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    peak_lr: float = 5e-5
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    total_steps: int | None = None
    init_checkpoint: str | None = None
    freeze_backbone: bool = False
    augmentation: str = "none"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "fine_tune" and not self.init_checkpoint:
            raise ValueError("fine_tune mode requires a pretrained checkpoint")

    def steps_for(self, n_train: int) -> int:
        if self.total_steps is not None:
            return self.total_steps
        return self.epochs * math.ceil(n_train / self.batch_size)


@dataclass
class HistoryRow:
    epoch: int
    split: str
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    model: Module
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    steps: int = 0

    def history_csv(self) -> str:
        lines = ["epoch,split,loss,accuracy"]
        lines += [f"{r.epoch},{r.split},{r.loss:.6f},{r.accuracy:.6f}" for r in self.history]
        return "\n".join(lines) + "\n"


def backbone_prefix(model: Module) -> str:
    return "encoder." if isinstance(model, SymbolicClassifier) else "backbone."


def _batches(n, batch_size, order=None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def forward_batch(model, inputs):
    return model(model.collate(inputs))


def evaluate_model(model, inputs, labels, batch_size=16):
    """Mean loss, accuracy and argmax predictions in eval mode."""
    model.eval()
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) == 0:
        return float("nan"), float("nan"), np.zeros(0, dtype=np.int64)
    total, preds = 0.0, []
    for idx in _batches(len(inputs), batch_size):
        logits = forward_batch(model, [inputs[i] for i in idx])
        total += F.cross_entropy(logits, labels[idx]).item() * len(idx)
        preds.append(logits.data.argmax(axis=1))
    preds = np.concatenate(preds)
    return total / len(inputs), float((preds == labels).mean()), preds


def initial_loss(model, inputs, labels, batch_size=16) -> float:
    return evaluate_model(model, inputs, labels, batch_size)[0]


def load_pretrained(model: Module, ckpt_path) -> list[str]:
    """Load encoder/backbone weights from a pretraining checkpoint into ``model``.

    Heads stay as initialized. Verifies every backbone entry is present,
    matches shape/dtype, is bit-identical after loading, and that no head
    parameter name occurs in the pretraining manifest.
    """
    state, meta = checkpoint.load(ckpt_path)
    if meta.get("domain") not in (None, model.domain):
        raise CheckpointError(f"checkpoint domain {meta.get('domain')!r} != model domain {model.domain!r}")
    prefix = backbone_prefix(model)
    own = model.state_dict()
    backbone = [n for n in own if n.startswith(prefix)]
    heads = [n for n, _ in model.named_parameters() if not n.startswith(prefix)]
    leaked = sorted(set(heads) & set(state))
    if leaked:
        raise CheckpointError(f"pretraining checkpoint contains head parameters {leaked}")
    checkpoint.check_manifest(state, own, backbone)
    model.load_state_dict({n: state[n] for n in backbone}, strict=False)
    own = model.state_dict()
    for n in backbone:
        if own[n].tobytes() != state[n].tobytes():
            raise CheckpointError(f"{n!r} differs from checkpoint after load")
    return backbone


def train(model: Module, splits: dict, config: TrainConfig, schedule: LrSchedule | None = None) -> TrainResult:
    """Minimize cross-entropy with Adam under a warmup/decay schedule.

    ``splits`` maps "train" (and optionally "val") to (inputs, labels). The
    parameters with the best validation accuracy are restored at the end.
    """
    train_x, train_y = splits["train"]
    train_y = np.asarray(train_y, dtype=np.int64)
    val_x, val_y = splits.get("val", ([], []))
    result = TrainResult(model)
    if config.mode == "fine_tune":
        load_pretrained(model, config.init_checkpoint)
    if config.epochs == 0 or len(train_x) == 0:
        return result

    total = config.steps_for(len(train_x))
    schedule = schedule or LrSchedule(total_steps=total, peak=config.peak_lr,
                                      warmup_steps=math.floor(config.warmup_fraction * total))
    prefix = backbone_prefix(model)
    trainable = [(n, p) for n, p in model.named_parameters()
                 if not (config.freeze_backbone and n.startswith(prefix))]
    opt = Adam(trainable, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)

    best_acc, best_state = -1.0, None
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        losses, correct, n_seen = [], 0, 0
        for idx in _batches(len(train_x), config.batch_size, rng.permutation(len(train_x))):
            if step >= schedule.total_steps:
                break
            logits = forward_batch(model, [train_x[i] for i in idx])
            loss = F.cross_entropy(logits, train_y[idx])
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}")
            loss.backward()
            step += 1
            opt.step(lr_at(schedule, step))
            opt.zero_grad()
            losses.append(loss.item() * len(idx))
            correct += int((logits.data.argmax(axis=1) == train_y[idx]).sum())
            n_seen += len(idx)
        n_seen = max(n_seen, 1)
        result.history.append(HistoryRow(epoch, "train", sum(losses) / n_seen, correct / n_seen))
        if len(val_x):
            v_loss, v_acc, _ = evaluate_model(model, val_x, val_y, max(config.batch_size, 16))
            result.history.append(HistoryRow(epoch, "val", v_loss, v_acc))
            if v_acc >= best_acc:  # ties favour the later, longer-trained epoch
                best_acc, result.best_epoch = v_acc, epoch
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
        logger.info("epoch %d: %s", epoch, result.history[-1])
        if step >= schedule.total_steps:
            break
    result.steps = step
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def pretrain_masked(model: SymbolicClassifier, corpus, steps: int, seed: int = 0,
                    batch_size: int = 16, peak_lr: float = 1e-3):
    """Masked-pitch pretraining of the encoder.

    Returns (encoder state dict, per-step losses). The auxiliary pitch head
    is discarded.
    """
    if not corpus:
        raise ValueError("pretraining corpus is empty")
    rng = np.random.default_rng(seed)
    aux = MaskedPitchHead(model.config.d_model, np.random.default_rng([seed, 1]))
    params = [(n, p) for n, p in model.named_parameters() if n.startswith("encoder.")]
    params += [("aux." + n, p) for n, p in aux.named_parameters()]
    opt = Adam(params)
    schedule = LrSchedule(total_steps=max(steps, 1), peak=peak_lr)
    losses = []
    model.train()
    for step in range(1, steps + 1):
        idx = rng.choice(len(corpus), size=min(batch_size, len(corpus)), replace=False)
        tokens, lengths = model.collate([corpus[i] for i in idx])
        masked, (rows, cols), targets = mask_tokens(tokens, lengths, rng)
        hidden = model.encoder(masked, lengths)
        logits = aux(hidden[rows, cols + 1])
        loss = F.cross_entropy(logits, targets)
        if not np.isfinite(loss.item()):
            raise NumericError(f"non-finite loss at pretraining step {step}")
        loss.backward()
        opt.step(lr_at(schedule, step))
        opt.zero_grad()
        losses.append(loss.item())
    model.eval()
    state = {n: v.copy() for n, v in model.state_dict().items() if n.startswith("encoder.")}
    return state, losses


class _AuxAudioHead(Module):
    def __init__(self, channels, n_classes, rng):
        self.fc = Linear(channels, n_classes, rng)

    def forward(self, x):
        return self.fc(x)


def pretrain_auxiliary(model: AudioClassifier, spectrograms, labels, n_classes: int, steps: int,
                       seed: int = 0, batch_size: int = 8, peak_lr: float = 1e-3):
    """Backbone pretraining on an auxiliary label (e.g. the preset waveform of a rendered clip).

    Returns (backbone state dict, per-step losses).
    """
    if not len(spectrograms):
        raise ValueError("pretraining corpus is empty")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    aux = _AuxAudioHead(model.config.channels[-1], n_classes, np.random.default_rng([seed, 1]))
    params = [(n, p) for n, p in model.named_parameters() if n.startswith("backbone.")]
    params += [("aux." + n, p) for n, p in aux.named_parameters()]
    opt = Adam(params)
    schedule = LrSchedule(total_steps=max(steps, 1), peak=peak_lr)
    losses = []
    model.train()
    for step in range(1, steps + 1):
        idx = rng.choice(len(spectrograms), size=min(batch_size, len(spectrograms)), replace=False)
        x = Tensor(model.collate([spectrograms[i] for i in idx]))
        feats = F.global_mean_max_pool(model.backbone(x)[-1])
        loss = F.cross_entropy(aux(feats), labels[idx])
        if not np.isfinite(loss.item()):
            raise NumericError(f"non-finite loss at pretraining step {step}")
        loss.backward()
        opt.step(lr_at(schedule, step))
        opt.zero_grad()
        losses.append(loss.item())
    model.eval()
    state = {n: v.copy() for n, v in model.state_dict().items() if n.startswith("backbone.")}
    return state, losses


def predict(model: Module, features) -> tuple[TrackRole, np.ndarray]:
    """Role (argmax, ties to the lowest index) and the 6 softmax probabilities."""
    from ..dsp import LogMelSpectrogram
    from ..tokenizer import TokenSequence

    if isinstance(model, SymbolicClassifier) and not isinstance(features, TokenSequence):
        raise DomainError("symbolic model needs a TokenSequence input")
    if isinstance(model, AudioClassifier) and not isinstance(features, LogMelSpectrogram):
        raise DomainError("audio model needs a LogMelSpectrogram input")
    model.eval()
    logits = forward_batch(model, [features]).data[0].astype(np.float64)
    return probabilities_to_role(logits)


def probabilities_to_role(logits: np.ndarray) -> tuple[TrackRole, np.ndarray]:
    shifted = logits - logits.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    return TrackRole(int(np.argmax(probs))), probs
