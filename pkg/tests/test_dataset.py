from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackrole.dataset import (BAR, AugmentationPolicy, DatasetError, LabeledExample, SplitManifest,
                               augment_set, balance, corpus_hash, derive_seed, load_corpus, scale_tempo,
                               select, split, synthesize_corpus, synthesize_example, transpose, write_corpus)
from trackrole.midi_io import Note, Sequence, TrackRole


def stub(role, i):
    return LabeledExample(Sequence(notes=(Note(0, 60, 120, 80),), role=role), role, f"{role.key}-{i:05d}")


def stub_corpus(sizes):
    return [stub(role, i) for role, n in zip(TrackRole, sizes) for i in range(n)]


@pytest.fixture(scope="module")
def corpus():
    return synthesize_corpus(6, seed=3)


class TestSplit:
    def test_3000_balanced(self):
        data = stub_corpus([500] * 6)
        m = split(data, seed=0)
        assert (len(m.test_ids), len(m.val_ids), len(m.train_ids)) == (600, 240, 2160)
        roles = {ex.id: ex.role for ex in data}
        for ids, per in ((m.test_ids, 100), (m.val_ids, 40), (m.train_ids, 360)):
            counts = Counter(roles[i] for i in ids)
            assert all(abs(counts[r] - per) <= 1 for r in TrackRole)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(10, 60), min_size=6, max_size=6), st.integers(0, 1000))
    def test_partition_and_stratification(self, sizes, seed):
        data = stub_corpus(sizes)
        m = split(data, seed)
        all_ids = m.train_ids + m.val_ids + m.test_ids
        assert sorted(all_ids) == sorted(ex.id for ex in data)
        n = len(data)
        assert len(m.test_ids) == (2 * n) // 10
        assert len(m.val_ids) == (n - len(m.test_ids)) // 10
        roles = {ex.id: ex.role for ex in data}
        counts = Counter(roles[i] for i in m.test_ids)
        for role, size in zip(TrackRole, sizes):
            assert abs(counts[role] - len(m.test_ids) * size / n) < 1

    def test_seed_determinism(self):
        data = stub_corpus([20] * 6)
        assert split(data, 5) == split(list(reversed(data)), 5)
        assert split(data, 5).test_ids != split(data, 6).test_ids

    def test_manifest_roundtrip(self):
        m = split(stub_corpus([12] * 6), seed=9)
        text = m.to_text()
        assert text.startswith("# seed=9\n# counts train=")
        assert SplitManifest.from_text(text) == m
        assert m.split_of()[m.val_ids[0]] == "val"

    def test_small_class_and_duplicates(self):
        with pytest.raises(DatasetError, match="fewer than 10"):
            split(stub_corpus([20, 20, 9, 20, 20, 20]))
        data = stub_corpus([10] * 6)
        with pytest.raises(DatasetError, match="duplicate"):
            split(data + data[:1])


class TestBalance:
    def test_per_class(self):
        out = balance(stub_corpus([30, 12, 40, 15, 20, 50]), seed=1)
        assert Counter(ex.role for ex in out) == {r: 12 for r in TrackRole}
        assert len({ex.id for ex in out}) == len(out)

    def test_errors(self):
        with pytest.raises(DatasetError, match="absent"):
            balance(stub_corpus([5, 5, 5, 5, 5, 0]))
        with pytest.raises(DatasetError, match="exceeds"):
            balance(stub_corpus([5] * 6), per_class=6)


class TestAugment:
    seq = Sequence(notes=(Note(0, 60, 240, 90), Note(240, 64, 240, 90)), tempo_bpm=120.0)

    def test_transpose(self):
        assert [n.pitch for n in transpose(self.seq, 3).notes] == [63, 67]
        assert transpose(Sequence(notes=(Note(0, 126, 10, 90),)), 2) is None
        with pytest.raises(ValueError):
            transpose(self.seq, 13)

    def test_scale_tempo(self):
        out = scale_tempo(self.seq, 1.1)
        assert out.tempo_bpm == 132.0
        assert [n.onset_tick for n in out.notes] == [0, 240]
        with pytest.raises(ValueError):
            scale_tempo(self.seq, 2.5)

    def test_provenance(self, corpus):
        out = augment_set(corpus[:6], AugmentationPolicy(), seed=4)
        extra = out[6:]
        assert len(extra) == 12
        parents = {ex.id: ex for ex in corpus[:6]}
        for ex in extra:
            parent = parents[ex.parent_id]
            assert ex.origin == "augmented" and ex.role == parent.role
            shift = ex.sequence.notes[0].pitch - parent.sequence.notes[0].pitch
            assert f"transpose({shift:+d})" in ex.transform
        assert augment_set(corpus[:6], seed=4) == out

    def test_augmented_needs_provenance(self):
        with pytest.raises(ValueError):
            LabeledExample(self.seq, TrackRole.BASS, "x", origin="augmented")


class TestGenerators:
    def test_deterministic_and_seed_sensitive(self):
        a = synthesize_example(TrackRole.RIFF, 7, "r")
        assert a == synthesize_example(TrackRole.RIFF, 7, "r")
        assert a.sequence != synthesize_example(TrackRole.RIFF, 8, "r").sequence

    def test_derive_seed_stable(self):
        assert derive_seed(0, "abc") == derive_seed(0, "abc") != derive_seed(1, "abc")

    def test_role_invariants(self):
        for ex in synthesize_corpus(10, seed=2):
            notes = ex.sequence.notes
            pitches = [n.pitch for n in notes]
            assert ex.sequence.time_sig == (4, 4) and 70 <= ex.sequence.tempo_bpm <= 160
            if ex.role == TrackRole.BASS:
                assert max(pitches) <= 52
            elif ex.role == TrackRole.MAIN_MELODY:
                onsets = [n.onset_tick for n in notes]
                assert len(set(onsets)) == len(onsets) and min(pitches) >= 60
            elif ex.role == TrackRole.PAD:
                assert max(Counter(n.onset_tick for n in notes).values()) >= 3
            elif ex.role == TrackRole.RIFF:
                bars = [[(n.onset_tick - b * BAR, n.pitch, n.duration_tick) for n in notes
                         if b * BAR <= n.onset_tick < (b + 1) * BAR] for b in range(8)]
                assert all(bar == bars[0] for bar in bars)


def test_corpus_files_roundtrip(tmp_path, corpus):
    write_corpus(corpus, tmp_path)
    loaded = load_corpus(tmp_path)
    assert [ex.id for ex in loaded] == [ex.id for ex in corpus]
    assert [ex.role for ex in loaded] == [ex.role for ex in corpus]
    assert corpus_hash(loaded) == corpus_hash(corpus)
    assert select(loaded, [corpus[3].id])[0].sequence == corpus[3].sequence


def test_load_corpus_missing_metadata(tmp_path):
    with pytest.raises(DatasetError):
        load_corpus(tmp_path)
