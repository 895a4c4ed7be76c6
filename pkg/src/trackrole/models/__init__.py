"""Symbolic and audio role classifiers plus their training loops."""
from .audio import (AttentionFeatureFusion, AudioBackbone, AudioClassifier, AudioModelConfig,
                    ConvBlock, aff_fuse)
from .symbolic import (MASK_PITCH, N_CLASSES, SymbolicClassifier, SymbolicEncoder,
                       SymbolicModelConfig, mask_tokens, parameter_count)
from .training import (DomainError, HistoryRow, TrainConfig, TrainResult, evaluate_model,
                       load_pretrained, predict, pretrain_auxiliary, pretrain_masked, train)


def build_symbolic(config: SymbolicModelConfig, seed: int = 0) -> SymbolicClassifier:
    return SymbolicClassifier(config, seed=seed)


def build_audio(config: AudioModelConfig, seed: int = 0) -> AudioClassifier:
    return AudioClassifier(config, seed=seed)
