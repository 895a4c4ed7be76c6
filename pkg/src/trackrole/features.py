"""Turn labeled examples into model inputs for either domain."""
from __future__ import annotations

import numpy as np

from . import tokenizer
from .dsp import LogMelSpectrogram, log_mel
from .synth import render


def symbolic_inputs(examples, max_len: int = tokenizer.DEFAULT_MAX_LEN):
    """(TokenSequences, int labels)."""
    return ([tokenizer.encode(ex.sequence, max_len) for ex in examples],
            np.array([int(ex.role) for ex in examples], dtype=np.int64))


def clip_features(clip, max_frames: int | None = None, **mel) -> LogMelSpectrogram:
    """Log-mel of a clip, computing at most ``max_frames`` frames."""
    if max_frames is not None:
        keep = (max_frames - 1) * mel.get("hop", 480) + mel.get("n_fft", 2048)
        clip = type(clip)(clip.samples[:keep], clip.sample_rate)
    return log_mel(clip, **mel)


def audio_input(example, dataset_seed: int, max_frames: int | None = None, **mel) -> LogMelSpectrogram:
    """Render and featurize one example."""
    return clip_features(render(example.sequence, dataset_seed), max_frames, **mel)


def audio_inputs(examples, dataset_seed: int, max_frames: int | None = None, **mel):
    """(LogMelSpectrograms, int labels)."""
    return ([audio_input(ex, dataset_seed, max_frames, **mel) for ex in examples],
            np.array([int(ex.role) for ex in examples], dtype=np.int64))
