import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackrole.midi_io import (MidiError, Note, Sequence, TrackRole, encode_varint,
                               load_labeled_dataset, parse_smf, parse_varint, write_smf)


def smf(track_body: bytes, fmt=0, ppq=480, extra_tracks=()):
    tracks = [track_body, *extra_tracks]
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), ppq)
    for body in tracks:
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


EOT = b"\x00\xff\x2f\x00"


def fifo_ambiguous(a_on, a_end, b_on, b_end):
    """Same-pitch notes whose on/off pairing FIFO cannot recover: equal onsets or nesting."""
    if a_on > b_on:
        a_on, a_end, b_on, b_end = b_on, b_end, a_on, a_end
    return a_on == b_on or a_end > b_end


def random_sequence(rng) -> Sequence:
    program = int(rng.integers(0, 128))
    notes = []
    for _ in range(int(rng.integers(0, 40))):
        pitch = int(rng.integers(0, 128))
        onset = int(rng.integers(0, 8000))
        dur = int(rng.integers(1, 2000))
        if any(n.pitch == pitch and fifo_ambiguous(n.onset_tick, n.end_tick, onset, onset + dur)
               for n in notes):
            continue
        notes.append(Note(onset, pitch, dur, int(rng.integers(1, 128)), program))
    tempo = round(float(rng.uniform(30, 300)), 2)
    sig = [(4, 4), (3, 4), (6, 8), (2, 4), (12, 8), (5, 16)][int(rng.integers(0, 6))]
    return Sequence(tuple(notes), ppq=int(rng.choice([96, 120, 480, 960])), tempo_bpm=tempo, time_sig=sig)


class TestVarint:
    @pytest.mark.parametrize("data,expected", [
        (b"\x00", (0, 1)),
        (b"\x81\x48", (200, 2)),
        (b"\xff\xff\xff\x7f", (268435455, 4)),
        (b"\x7f\x00", (127, 1)),
    ])
    def test_known_values(self, data, expected):
        assert parse_varint(data) == expected

    def test_truncated(self):
        with pytest.raises(MidiError):
            parse_varint(b"\x81")

    def test_too_long(self):
        with pytest.raises(MidiError):
            parse_varint(b"\xff\xff\xff\xff\x7f")

    @given(st.integers(0, 0x0FFFFFFF))
    def test_encode_roundtrip(self, value):
        enc = encode_varint(value)
        assert parse_varint(enc + b"\x00") == (value, len(enc))


class TestParse:
    def test_empty_track_defaults(self):
        seq = parse_smf(smf(EOT))
        assert seq.notes == () and seq.tempo_bpm == 120.0 and seq.time_sig == (4, 4)

    def test_single_note(self):
        body = b"\x00\x90\x3c\x40" + b"\x83\x60\x80\x3c\x00" + EOT  # off at delta 480
        (note,) = parse_smf(smf(body)).notes
        assert (note.pitch, note.velocity, note.onset_tick, note.duration_tick) == (60, 64, 0, 480)

    def test_velocity_zero_is_note_off_with_running_status(self):
        body = b"\x00\x90\x3c\x40" + b"\x81\x70\x3c\x00" + EOT  # running status, delta 240
        (note,) = parse_smf(smf(body)).notes
        assert note.duration_tick == 240

    def test_meta_events(self):
        tempo = b"\x00\xff\x51\x03" + (500000).to_bytes(3, "big")
        sig = b"\x00\xff\x58\x04\x06\x03\x18\x08"
        seq = parse_smf(smf(tempo + sig + EOT))
        assert seq.tempo_bpm == 120.0 and seq.time_sig == (6, 8)

    def test_unclosed_note_closed_at_end_of_track(self, caplog):
        body = b"\x00\x90\x3c\x40" + b"\x60\xff\x2f\x00"
        (note,) = parse_smf(smf(body)).notes
        assert note.duration_tick == 0x60
        assert "closed 1 unterminated" in caplog.text

    def test_format1_merges_tracks(self):
        conductor = b"\x00\xff\x51\x03" + (600000).to_bytes(3, "big") + EOT
        notes = b"\x00\xc0\x21\x00\x90\x28\x50\x60\x80\x28\x00" + EOT
        seq = parse_smf(smf(conductor, fmt=1, extra_tracks=[notes]))
        assert seq.tempo_bpm == 100.0 and seq.program == 33 and len(seq.notes) == 1

    def test_multiple_programs_rejected(self):
        body = b"\x00\xc0\x01\x00\x90\x3c\x40\x10\x80\x3c\x00\x00\xc0\x02\x00\x90\x3e\x40\x10\x80\x3e\x00" + EOT
        with pytest.raises(MidiError, match="programs"):
            parse_smf(smf(body))

    @pytest.mark.parametrize("data", [b"", b"RIFF0000", b"MThd\x00\x00\x00\x06\x00\x00", smf(EOT)[:-2]])
    def test_malformed(self, data):
        with pytest.raises(MidiError):
            parse_smf(data)

    @settings(max_examples=300)
    @given(st.binary(max_size=64))
    def test_fuzz_body_never_crashes(self, body):
        try:
            seq = parse_smf(smf(body))
        except MidiError:
            return
        keys = [(n.onset_tick, n.pitch) for n in seq.notes]
        assert keys == sorted(keys)
        assert all(0 <= n.pitch <= 127 and 1 <= n.velocity <= 127 and n.duration_tick >= 1 for n in seq.notes)


class TestWrite:
    def test_empty_sequence(self):
        seq = Sequence(())
        assert parse_smf(write_smf(seq)) == seq

    def test_overlapping_same_pitch_fifo(self):
        notes = (Note(0, 60, 480, 90), Note(240, 60, 480, 70))
        seq = Sequence(notes)
        assert parse_smf(write_smf(seq)).notes == notes

    def test_back_to_back_same_pitch(self):
        notes = (Note(0, 60, 240, 90), Note(240, 60, 240, 70))
        assert parse_smf(write_smf(Sequence(notes))).notes == notes

    def test_roundtrip_100_seeded(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            seq = random_sequence(rng)
            assert parse_smf(write_smf(seq)) == seq

    def test_deterministic_bytes(self):
        seq = random_sequence(np.random.default_rng(5))
        assert write_smf(seq) == write_smf(seq)


class TestLabeledDataset:
    def _write(self, tmp_path, rows):
        seq = Sequence((Note(0, 40, 480, 100, 33),))
        (tmp_path / "a.mid").write_bytes(write_smf(seq))
        (tmp_path / "meta.csv").write_text("file,track_role\n" + "".join(f"{r}\n" for r in rows))
        return tmp_path / "meta.csv"

    def test_direct_mapping(self, tmp_path):
        meta = self._write(tmp_path, ["a.mid,bass"])
        ((seq, role),) = load_labeled_dataset(tmp_path, meta)
        assert role is TrackRole.BASS and seq.program == 33

    def test_unknown_role_names_row(self, tmp_path):
        meta = self._write(tmp_path, ["a.mid,lead"])
        with pytest.raises(MidiError, match="row 1"):
            load_labeled_dataset(tmp_path, meta)

    def test_all_roles_and_missing_files(self, tmp_path, caplog):
        rows = [f"a.mid,{r.key}" for r in TrackRole] + ["missing.mid,pad"]
        pairs = load_labeled_dataset(tmp_path, self._write(tmp_path, rows))
        assert sorted(int(r) for _, r in pairs) == list(range(6))
        assert "skipped 1 metadata row" in caplog.text

    def test_role_order_and_abbreviations(self):
        assert [r.key for r in TrackRole] == ["accompaniment", "bass", "main_melody", "pad", "riff",
                                              "sub_melody"]
        assert [r.abbrev for r in TrackRole] == ["Ac", "Bs", "MM", "Pad", "Riff", "SM"]


def test_note_validation():
    with pytest.raises(ValueError):
        Note(0, 128, 10, 64)
    with pytest.raises(ValueError):
        Note(0, 60, 0, 64)
    with pytest.raises(ValueError):
        Note(0, 60, 10, 0)
