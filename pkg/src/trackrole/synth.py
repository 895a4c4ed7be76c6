"""Oscillator rendering of Sequences to 48 kHz mono audio, plus 16-bit WAV I/O."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .midi_io import Sequence

SAMPLE_RATE = 48_000
WAVEFORMS = ("sine", "triangle", "square", "saw")
PEAK_LIMIT = 0.9


class WavError(ValueError):
    pass


@dataclass(frozen=True)
class Preset:
    waveform: str
    attack_s: float
    decay_s: float
    sustain_level: float
    release_s: float
    gain: float

    def __post_init__(self):
        if self.waveform not in WAVEFORMS:
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if min(self.attack_s, self.decay_s, self.release_s) < 0:
            raise ValueError("envelope times must be non-negative")
        if not 0.0 <= self.sustain_level <= 1.0:
            raise ValueError(f"sustain level {self.sustain_level} outside [0, 1]")
        if not 0.0 < self.gain <= 1.0:
            raise ValueError(f"gain {self.gain} outside (0, 1]")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise ValueError("samples outside [-1, 1]")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def preset_for_program(program: int, dataset_seed: int) -> Preset:
    """Seeded preset: fixed for a given (program, dataset_seed) pair."""
    if not 0 <= program <= 127:
        raise ValueError(f"program {program} outside [0, 127]")
    rng = np.random.default_rng([dataset_seed & 0xFFFFFFFF, program])
    return Preset(
        waveform=WAVEFORMS[int(rng.integers(len(WAVEFORMS)))],
        attack_s=round(float(rng.uniform(0.002, 0.05)), 4),
        decay_s=round(float(rng.uniform(0.05, 0.4)), 4),
        sustain_level=round(float(rng.uniform(0.3, 1.0)), 4),
        release_s=round(float(rng.uniform(0.02, 0.3)), 4),
        gain=round(float(rng.uniform(0.5, 1.0)), 4),
    )


def oscillator(waveform: str, freq: float, n: int) -> np.ndarray:
    phase = freq * np.arange(n) / SAMPLE_RATE
    if waveform == "sine":
        return np.sin(2 * np.pi * phase)
    saw = 2.0 * (phase - np.floor(phase + 0.5))
    if waveform == "saw":
        return saw
    if waveform == "triangle":
        return 1.0 - 2.0 * np.abs(saw)
    return np.where(np.sin(2 * np.pi * phase) >= 0, 1.0, -1.0)


def adsr(preset: Preset, gate: int, total: int) -> np.ndarray:
    """Envelope for a note held ``gate`` samples, rendered over ``total`` samples."""
    t = np.arange(total) / SAMPLE_RATE
    a, d, s = preset.attack_s, preset.decay_s, preset.sustain_level
    env = np.full(total, s)
    if a > 0:
        env = np.where(t < a, t / a, env)
    if d > 0:
        in_decay = (t >= a) & (t < a + d)
        env = np.where(in_decay, 1.0 - (1.0 - s) * (t - a) / d, env)
    if gate < total:
        level = env[gate - 1] if gate > 0 else 0.0
        tail = np.arange(total - gate) / SAMPLE_RATE
        if preset.release_s > 0:
            env[gate:] = level * np.clip(1.0 - tail / preset.release_s, 0.0, 1.0)
        else:
            env[gate:] = 0.0
    return env


def render(seq: Sequence, dataset_seed: int, preset: Preset | None = None) -> AudioClip:
    if not seq.notes:
        return AudioClip(np.zeros(0))
    preset = preset or preset_for_program(seq.program, dataset_seed)
    sec_per_tick = seq.seconds_per_tick()
    release = int(round(preset.release_s * SAMPLE_RATE))
    length = int(round(seq.end_tick * sec_per_tick * SAMPLE_RATE)) + release
    mix = np.zeros(length)
    for note in seq.notes:
        start = int(round(note.onset_tick * sec_per_tick * SAMPLE_RATE))
        stop = int(round(note.end_tick * sec_per_tick * SAMPLE_RATE))
        gate = max(stop - start, 1)
        total = min(gate + release, length - start)
        freq = 440.0 * 2.0 ** ((note.pitch - 69) / 12)
        amp = note.velocity / 127 * preset.gain
        mix[start:start + total] += amp * oscillator(preset.waveform, freq, total) * adsr(preset, gate, total)
    peak = np.abs(mix).max()
    if peak > PEAK_LIMIT:
        mix *= PEAK_LIMIT / peak
    return AudioClip(mix)


_WAV_HEADER = struct.Struct("<4sI4s4sIHHIIHH4sI")


def write_wav(clip: AudioClip) -> bytes:
    pcm = np.rint(np.clip(clip.samples, -1.0, 1.0) * 32767).astype("<i2").tobytes()
    header = _WAV_HEADER.pack(
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def read_wav(data: bytes) -> AudioClip:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("bad magic: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        tag, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavError(f"truncated {tag!r} chunk")
        if tag == b"fmt ":
            if size < 16:
                raise WavError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif tag == b"data":
            if fmt is None:
                raise WavError("data chunk before fmt chunk")
            code, channels, rate, _, _, bits = fmt
            if code != 1:
                raise WavError(f"unsupported format code {code} (only PCM=1)")
            if channels != 1 or bits != 16:
                raise WavError(f"expected mono 16-bit PCM, got {channels} ch / {bits} bit")
            if rate != SAMPLE_RATE:
                raise WavError(f"sample rate {rate} != {SAMPLE_RATE}; resampling is not supported")
            pcm = np.frombuffer(body[:size - size % 2], dtype="<i2")
            return AudioClip(np.maximum(pcm.astype(np.float64) / 32767, -1.0))
        pos += 8 + size + (size & 1)
    raise WavError("no data chunk")
