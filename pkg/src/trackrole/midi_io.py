"""Standard MIDI File reading/writing and labeled-corpus ingestion."""
from __future__ import annotations

import csv
import enum
import logging
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_TEMPO_BPM = 120.0
DEFAULT_TIME_SIG = (4, 4)
VALID_DENOMINATORS = (1, 2, 4, 8, 16)
# Tempo is stored in SMF as integer microseconds per quarter; parsed bpm is
# rounded to this many decimals so that 2-decimal tempos round-trip exactly.
TEMPO_DECIMALS = 2


class MidiError(ValueError):
    """Raised for malformed or unsupported MIDI input."""


class TrackRole(enum.IntEnum):
    """Six track-roles, in the canonical index order used for every label
    vector and confusion-matrix axis (alphabetical by abbreviation)."""

    ACCOMPANIMENT = 0
    BASS = 1
    MAIN_MELODY = 2
    PAD = 3
    RIFF = 4
    SUB_MELODY = 5

    @property
    def key(self) -> str:
        return self.name.lower()

    @property
    def abbrev(self) -> str:
        return ROLE_ABBREVIATIONS[self]

    @classmethod
    def from_key(cls, text: str) -> "TrackRole":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown track role {text!r}") from None


ROLE_ABBREVIATIONS = {
    TrackRole.ACCOMPANIMENT: "Ac",
    TrackRole.BASS: "Bs",
    TrackRole.MAIN_MELODY: "MM",
    TrackRole.PAD: "Pad",
    TrackRole.RIFF: "Riff",
    TrackRole.SUB_MELODY: "SM",
}


@dataclass(frozen=True, order=True)
class Note:
    # field order gives the (onset, pitch) sort key for free
    onset_tick: int
    pitch: int
    duration_tick: int
    velocity: int
    program: int = 0

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside [0, 127]")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")
        if not 0 <= self.program <= 127:
            raise ValueError(f"program {self.program} outside [0, 127]")
        if self.onset_tick < 0:
            raise ValueError(f"negative onset {self.onset_tick}")
        if self.duration_tick < 1:
            raise ValueError(f"duration {self.duration_tick} < 1")

    @property
    def end_tick(self) -> int:
        return self.onset_tick + self.duration_tick


@dataclass(frozen=True)
class Sequence:
    notes: tuple[Note, ...] = ()
    ppq: int = 480
    tempo_bpm: float = DEFAULT_TEMPO_BPM
    time_sig: tuple[int, int] = DEFAULT_TIME_SIG
    role: TrackRole | None = field(default=None, compare=False)

    def __post_init__(self):
        notes = tuple(sorted(self.notes, key=lambda n: (n.onset_tick, n.pitch)))
        object.__setattr__(self, "notes", notes)
        object.__setattr__(self, "time_sig", tuple(self.time_sig))
        if self.ppq <= 0:
            raise ValueError(f"ppq must be positive, got {self.ppq}")
        if not self.tempo_bpm > 0:
            raise ValueError(f"tempo must be positive, got {self.tempo_bpm}")
        num, den = self.time_sig
        if num < 1 or den not in VALID_DENOMINATORS:
            raise ValueError(f"invalid time signature {num}/{den}")
        programs = {n.program for n in notes}
        if len(programs) > 1:
            raise ValueError(f"sequence mixes programs {sorted(programs)}")

    @property
    def program(self) -> int:
        return self.notes[0].program if self.notes else 0

    @property
    def end_tick(self) -> int:
        return max((n.end_tick for n in self.notes), default=0)

    def seconds_per_tick(self) -> float:
        return 60.0 / (self.tempo_bpm * self.ppq)


def parse_varint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode a MIDI variable-length quantity. Returns (value, bytes consumed)."""
    value = 0
    for i in range(4):
        pos = offset + i
        if pos >= len(data):
            raise MidiError("stream ends inside a variable-length quantity")
        byte = data[pos]
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, i + 1
    raise MidiError("variable-length quantity longer than 4 bytes")


def encode_varint(value: int) -> bytes:
    if not 0 <= value <= 0x0FFFFFFF:
        raise ValueError(f"value {value} not representable as a 4-byte varint")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MidiError("truncated chunk")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def byte(self) -> int:
        return self.take(1)[0]

    def varint(self) -> int:
        value, used = parse_varint(self.data[:self.end], self.pos)
        self.pos += used
        return value

    @property
    def done(self) -> bool:
        return self.pos >= self.end


_CHANNEL_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(reader: _Reader, state: dict) -> list[tuple]:
    tick = 0
    running = None
    programs = [None] * 16
    # (channel, pitch) -> FIFO of (onset, velocity, program)
    pending: dict[tuple[int, int], deque] = defaultdict(deque)
    notes = []

    def close(key, onset, velocity, program, end):
        notes.append((onset, key[1], max(1, end - onset), velocity, program))

    while not reader.done:
        tick += reader.varint()
        status = reader.data[reader.pos] if reader.pos < reader.end else None
        if status is None:
            raise MidiError("truncated event")
        if status & 0x80:
            reader.pos += 1
            if status < 0xF0:
                running = status
        else:
            if running is None:
                raise MidiError("data byte without running status")
            status = running

        if status == 0xFF:
            meta_type = reader.byte()
            payload = reader.take(reader.varint())
            if meta_type == 0x2F:
                break
            if meta_type == 0x51 and "tempo" not in state:
                if len(payload) != 3:
                    raise MidiError("malformed tempo event")
                usec = int.from_bytes(payload, "big")
                if usec == 0:
                    raise MidiError("zero tempo")
                state["tempo"] = round(60_000_000 / usec, TEMPO_DECIMALS)
            elif meta_type == 0x58 and "time_sig" not in state:
                if len(payload) < 2:
                    raise MidiError("malformed time-signature event")
                num, den_pow = payload[0], payload[1]
                if num < 1 or den_pow > 4:
                    raise MidiError(f"unsupported time signature {num}/2^{den_pow}")
                state["time_sig"] = (num, 1 << den_pow)
            continue
        if status in (0xF0, 0xF7):
            reader.take(reader.varint())
            continue
        if status >= 0xF0:
            raise MidiError(f"unexpected system message 0x{status:02X}")

        kind, channel = status & 0xF0, status & 0x0F
        data = reader.take(_CHANNEL_DATA_LEN[kind])
        if any(b & 0x80 for b in data):
            raise MidiError("status byte where data byte expected")
        if kind == 0xC0:
            programs[channel] = data[0]
            state.setdefault("first_program", data[0])
        elif kind == 0x90 and data[1] > 0:
            program = programs[channel]
            pending[(channel, data[0])].append((tick, data[1], program))
        elif kind == 0x80 or kind == 0x90:
            queue = pending.get((channel, data[0]))
            if queue:
                onset, velocity, program = queue.popleft()
                close((channel, data[0]), onset, velocity, program, tick)

    unclosed = 0
    for key, queue in pending.items():
        while queue:
            onset, velocity, program = queue.popleft()
            close(key, onset, velocity, program, tick)
            unclosed += 1
    state["unclosed"] = state.get("unclosed", 0) + unclosed
    return notes


def parse_smf(data: bytes) -> Sequence:
    """Parse an SMF (format 0 or 1) into a single-instrument Sequence.

    Tracks of a format-1 file are merged. Note-ons left open at the end of a
    track are closed there, and the count is logged as a warning.
    """
    reader = _Reader(bytes(data))
    if reader.take(4) != b"MThd":
        raise MidiError("bad magic: not a Standard MIDI File")
    header_len = struct.unpack(">I", reader.take(4))[0]
    if header_len < 6:
        raise MidiError("header chunk too short")
    fmt, ntracks, division = struct.unpack(">HHH", reader.take(6))
    reader.take(header_len - 6)
    if fmt not in (0, 1):
        raise MidiError(f"unsupported SMF format {fmt}")
    if division & 0x8000 or division == 0:
        raise MidiError("SMPTE or zero time division is not supported")

    state: dict = {}
    raw_notes: list[tuple] = []
    for _ in range(ntracks):
        tag = reader.take(4)
        length = struct.unpack(">I", reader.take(4))[0]
        end = reader.pos + length
        if end > len(reader.data):
            raise MidiError("truncated chunk")
        if tag == b"MTrk":
            raw_notes.extend(_parse_track(_Reader(reader.data, reader.pos, end), state))
        reader.pos = end

    if state.get("unclosed"):
        logger.warning("closed %d unterminated note(s) at end of track", state["unclosed"])

    default_program = state.get("first_program", 0)
    programs = {p if p is not None else default_program for *_, p in raw_notes}
    if len(programs) > 1:
        raise MidiError(f"multiple programs {sorted(programs)} in one sequence")
    program = programs.pop() if programs else default_program
    notes = [Note(onset, pitch, dur, vel, program)
             for onset, pitch, dur, vel, _ in raw_notes]
    return Sequence(notes=tuple(notes), ppq=division,
                    tempo_bpm=state.get("tempo", DEFAULT_TEMPO_BPM),
                    time_sig=state.get("time_sig", DEFAULT_TIME_SIG))


def write_smf(seq: Sequence) -> bytes:
    """Serialize as a format-0 SMF on channel 0."""
    events = []  # (tick, order, payload); offs sort before ons at the same tick
    usec = max(1, min(0xFFFFFF, round(60_000_000 / seq.tempo_bpm)))
    num, den = seq.time_sig
    events.append((0, 0, b"\xFF\x51\x03" + usec.to_bytes(3, "big")))
    events.append((0, 0, bytes([0xFF, 0x58, 0x04, num, den.bit_length() - 1, 24, 8])))
    if seq.notes:
        events.append((0, 1, bytes([0xC0, seq.program])))
    for note in seq.notes:
        events.append((note.onset_tick, 3, bytes([0x90, note.pitch, note.velocity])))
        events.append((note.end_tick, 2, bytes([0x80, note.pitch, 0])))
    # stable sort keeps FIFO pairing: earlier-starting notes' offs stay first
    events.sort(key=lambda e: (e[0], e[1]))

    body = bytearray()
    last = 0
    for tick, _, payload in events:
        body += encode_varint(tick - last)
        body += payload
        last = tick
    body += b"\x00\xFF\x2F\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, seq.ppq)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def read_midi_file(path) -> Sequence:
    return parse_smf(Path(path).read_bytes())


def load_labeled_dataset(midi_dir, metadata, column_map: dict | None = None):
    """Read a metadata CSV (``file,track_role``) and the MIDI files it names.

    ``column_map`` renames source columns for exports that use other headers,
    e.g. ``{"file": "midi_path", "track_role": "role"}``.
    Rows naming missing files are skipped and counted in a warning.
    """
    columns = {"file": "file", "track_role": "track_role"}
    columns.update(column_map or {})
    midi_dir = Path(midi_dir)
    try:
        with open(metadata, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise MidiError(f"cannot read metadata {metadata}: {exc}") from exc
    if rows and not all(c in rows[0] for c in columns.values()):
        raise MidiError(f"metadata must have columns {sorted(columns.values())}")

    pairs = []
    missing = 0
    for row_no, row in enumerate(rows, start=1):
        try:
            role = TrackRole.from_key(row[columns["track_role"]])
        except ValueError:
            raise MidiError(
                f"row {row_no}: unknown track role {row[columns['track_role']]!r}"
            ) from None
        path = midi_dir / row[columns["file"]]
        if not path.is_file():
            missing += 1
            continue
        seq = read_midi_file(path)
        pairs.append((Sequence(seq.notes, seq.ppq, seq.tempo_bpm, seq.time_sig, role), role))
    if missing:
        logger.warning("skipped %d metadata row(s) with missing MIDI files", missing)
    return pairs
