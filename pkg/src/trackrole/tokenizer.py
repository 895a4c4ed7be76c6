"""Octuple-style note encoding: one 8-integer tuple per note.

Binning constants here are this package's own choices (grid of 12 slots per
quarter, velocity bins of width 4, 16 log-spaced tempo bins over 30-300 bpm).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .midi_io import Note, Sequence

logger = logging.getLogger(__name__)

SLOTS_PER_QUARTER = 12
MAX_BARS = 256
MAX_POSITION = 47
MAX_DURATION = 96
VELOCITY_BIN_WIDTH = 4
N_VELOCITY_BINS = 32
N_TEMPO_BINS = 16
TEMPO_MIN, TEMPO_MAX = 30.0, 300.0
TIME_SIGNATURES = ((4, 4), (3, 4), (6, 8), (2, 4), (12, 8))
DEFAULT_MAX_LEN = 512

# embedding table sizes per field, in tuple order
FIELD_NAMES = ("bar", "position", "program", "pitch", "duration",
               "velocity_bin", "tempo_bin", "timesig_idx")
FIELD_SIZES = (MAX_BARS, MAX_POSITION + 1, 128, 128, MAX_DURATION + 1,
               N_VELOCITY_BINS, N_TEMPO_BINS, len(TIME_SIGNATURES))


class TokenTuple(NamedTuple):
    bar: int
    position: int
    program: int
    pitch: int
    duration: int
    velocity_bin: int
    tempo_bin: int
    timesig_idx: int


@dataclass(frozen=True)
class TokenSequence:
    tuples: tuple[TokenTuple, ...] = ()
    max_len: int = DEFAULT_MAX_LEN
    n_truncated: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.tuples)

    def as_rows(self) -> list[list[int]]:
        return [list(t) for t in self.tuples]


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def tempo_bin(bpm: float) -> int:
    if not bpm > 0:
        raise ValueError(f"tempo must be positive, got {bpm}")
    clamped = min(max(bpm, TEMPO_MIN), TEMPO_MAX)
    frac = (math.log(clamped) - math.log(TEMPO_MIN)) / (math.log(TEMPO_MAX) - math.log(TEMPO_MIN))
    return min(max(math.floor((N_TEMPO_BINS - 1) * frac), 0), N_TEMPO_BINS - 1)


def tempo_from_bin(index: int) -> float:
    """Representative bpm for a tempo bin (geometric bin midpoint, 2 decimals)."""
    if index >= N_TEMPO_BINS - 1:
        return TEMPO_MAX
    ratio = math.log(TEMPO_MAX / TEMPO_MIN)
    return round(TEMPO_MIN * math.exp(ratio * (index + 0.5) / (N_TEMPO_BINS - 1)), 2)


def timesig_index(time_sig: tuple[int, int]) -> int:
    time_sig = tuple(time_sig)
    if time_sig in TIME_SIGNATURES:
        return TIME_SIGNATURES.index(time_sig)
    quarters = 4 * time_sig[0] / time_sig[1]
    best = min(range(len(TIME_SIGNATURES)),
               key=lambda i: abs(4 * TIME_SIGNATURES[i][0] / TIME_SIGNATURES[i][1] - quarters))
    logger.warning("time signature %d/%d not in registry; using %d/%d",
                   *time_sig, *TIME_SIGNATURES[best])
    return best


def bar_length(time_sig: tuple[int, int]) -> int:
    """Bar length in grid slots (12 per quarter note)."""
    num, den = time_sig
    return max(1, num * 4 * SLOTS_PER_QUARTER // den)


def encode(seq: Sequence, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    ts_idx = timesig_index(seq.time_sig)
    bar_len = bar_length(TIME_SIGNATURES[ts_idx])
    t_bin = tempo_bin(seq.tempo_bpm)
    scale = SLOTS_PER_QUARTER / seq.ppq

    tuples = []
    dropped = 0
    for note in seq.notes:
        slot = _round_half_up(note.onset_tick * scale)
        bar, pos = divmod(slot, bar_len)
        if bar >= MAX_BARS:
            dropped += 1
            continue
        duration = min(max(_round_half_up(note.duration_tick * scale), 1), MAX_DURATION)
        tuples.append(TokenTuple(bar, min(pos, MAX_POSITION), note.program, note.pitch,
                                 duration, note.velocity // VELOCITY_BIN_WIDTH, t_bin, ts_idx))
    tuples.sort()
    if dropped:
        logger.warning("dropped %d note(s) beyond bar %d", dropped, MAX_BARS - 1)
    truncated = max(0, len(tuples) - max_len)
    return TokenSequence(tuple(tuples[:max_len]), max_len, dropped + truncated)


def decode(tokens: TokenSequence, ppq: int = 480) -> Sequence:
    if not tokens.tuples:
        return Sequence(ppq=ppq)
    first = tokens.tuples[0]
    time_sig = TIME_SIGNATURES[first.timesig_idx]
    bar_len = bar_length(time_sig)
    ticks_per_slot = ppq / SLOTS_PER_QUARTER
    notes = []
    for t in tokens.tuples:
        slot = t.bar * bar_len + t.position
        notes.append(Note(
            onset_tick=_round_half_up(slot * ticks_per_slot),
            pitch=t.pitch,
            duration_tick=max(1, _round_half_up(t.duration * ticks_per_slot)),
            velocity=max(1, t.velocity_bin * VELOCITY_BIN_WIDTH),
            program=t.program,
        ))
    return Sequence(tuple(notes), ppq, tempo_from_bin(first.tempo_bin), time_sig)


def dump_tokens(tokens: TokenSequence) -> str:
    return "".join(" ".join(str(v) for v in t) + "\n" for t in tokens.tuples)


def load_tokens(text: str, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    tuples = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        values = [int(v) for v in line.split()]
        if len(values) != 8:
            raise ValueError(f"line {line_no}: expected 8 integers, got {len(values)}")
        for name, size, v in zip(FIELD_NAMES, FIELD_SIZES, values):
            if not 0 <= v < size:
                raise ValueError(f"line {line_no}: {name}={v} outside [0, {size})")
        tuples.append(TokenTuple(*values))
    return TokenSequence(tuple(tuples), max_len)
