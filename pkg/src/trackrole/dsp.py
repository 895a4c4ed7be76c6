"""Log-mel spectrogram front end (periodic Hann, power STFT, HTK mel filters)."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .synth import SAMPLE_RATE, AudioClip

EPS = 1e-10
FLOOR_DB = 10.0 * np.log10(EPS)


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # (frames, n_mels)
    n_mels: int = 64
    frame_hop_s: float = 0.010

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hann_window(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("window length must be >= 1")
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def frame_count(num_samples: int, n_fft: int, hop: int) -> int:
    return 0 if num_samples < n_fft else 1 + (num_samples - n_fft) // hop


def power_stft(samples, n_fft: int = 2048, hop: int = 480) -> np.ndarray:
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    samples = np.asarray(samples, dtype=np.float64)
    n_frames = frame_count(samples.size, n_fft, hop)
    if n_frames == 0:
        return np.zeros((0, n_fft // 2 + 1))
    frames = sliding_window_view(samples, n_fft)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * hann_window(n_fft), axis=-1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def mel_band_edges(n_mels: int, n_fft: int, sr: int, fmin: float, fmax: float) -> np.ndarray:
    """FFT-bin indices of the n_mels + 2 triangle edge points (centers are [1:-1])."""
    if not 0 <= fmin < fmax <= sr / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin}, fmax={fmax}")
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    bins = np.rint(mel_to_hz(mels) * n_fft / sr).astype(int)
    if np.any(np.diff(bins) <= 0):
        raise ValueError(
            f"adjacent mel points share an FFT bin with n_fft={n_fft}; "
            "use a larger n_fft or fewer mel bands")
    return bins


def mel_center_frequencies(n_mels=64, n_fft=2048, sr=SAMPLE_RATE, fmin=20.0, fmax=24000.0):
    """Frequencies (Hz) of the FFT bins where each filter peaks."""
    return mel_band_edges(n_mels, n_fft, sr, fmin, fmax)[1:-1] * sr / n_fft


def mel_filterbank(n_mels: int = 64, n_fft: int = 2048, sr: int = SAMPLE_RATE,
                   fmin: float = 20.0, fmax: float = 24000.0) -> np.ndarray:
    edges = mel_band_edges(n_mels, n_fft, sr, fmin, fmax)
    bins = np.arange(n_fft // 2 + 1)
    fb = np.zeros((n_mels, bins.size))
    for j in range(n_mels):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rise = (bins - lo) / (mid - lo)
        fall = (hi - bins) / (hi - mid)
        fb[j] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


def log_mel(clip: AudioClip, n_fft: int = 2048, hop: int = 480, n_mels: int = 64,
            fmin: float = 20.0, fmax: float = 24000.0) -> LogMelSpectrogram:
    if clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    power = power_stft(clip.samples, n_fft, hop)
    mel_power = power @ mel_filterbank(n_mels, n_fft, clip.sample_rate, fmin, fmax).T
    values = 10.0 * np.log10(np.maximum(mel_power, EPS))
    return LogMelSpectrogram(values, n_mels, hop / clip.sample_rate)


def dump_spectrogram(spec: LogMelSpectrogram) -> bytes:
    frames, n_mels = spec.values.shape
    return struct.pack("<ii", frames, n_mels) + spec.values.astype("<f4").tobytes()


def load_spectrogram(data: bytes, frame_hop_s: float = 0.010) -> LogMelSpectrogram:
    frames, n_mels = struct.unpack_from("<ii", data)
    values = np.frombuffer(data, dtype="<f4", offset=8, count=frames * n_mels)
    return LogMelSpectrogram(values.reshape(frames, n_mels).astype(np.float64), n_mels, frame_hop_s)
