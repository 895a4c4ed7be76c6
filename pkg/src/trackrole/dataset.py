"""Corpus construction: synthetic generation, balancing, stratified splits, augmentation."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .midi_io import (TEMPO_DECIMALS, MidiError, Note, Sequence, TrackRole, load_labeled_dataset,
                      write_smf)

PPQ = 480
BAR = 4 * PPQ
N_BARS = 8
TEST_FRACTION = 0.2
VAL_FRACTION = 0.1
MIN_PER_CLASS_FOR_SPLIT = 10
MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)

# General MIDI programs typically playing each role
ROLE_PROGRAMS = {
    TrackRole.MAIN_MELODY: (0, 40, 56, 73, 80, 81),
    TrackRole.SUB_MELODY: (11, 41, 65, 68, 71, 24),
    TrackRole.PAD: (48, 49, 19, 88, 89, 91),
    TrackRole.RIFF: (27, 29, 30, 4, 62, 84),
    TrackRole.ACCOMPANIMENT: (0, 4, 24, 25, 46, 5),
    TrackRole.BASS: (32, 33, 34, 35, 38, 39),
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    sequence: Sequence
    role: TrackRole
    id: str
    origin: str = "ingested"  # ingested | synthetic | augmented
    parent_id: str | None = None
    transform: str | None = None

    def __post_init__(self):
        if self.origin == "augmented" and not (self.parent_id and self.transform):
            raise ValueError("augmented examples must record parent_id and transform")


@dataclass
class AugmentationPolicy:
    semitone_choices: tuple = (-3, -2, -1, 1, 2, 3)
    tempo_factors: tuple = (0.9, 1.1)
    variants_per_example: int = 2


@dataclass
class SplitManifest:
    train_ids: list
    val_ids: list
    test_ids: list
    seed: int
    ratios: tuple = (1 - TEST_FRACTION, TEST_FRACTION, VAL_FRACTION)

    def split_of(self) -> dict:
        out = {i: "train" for i in self.train_ids}
        out.update({i: "val" for i in self.val_ids})
        out.update({i: "test" for i in self.test_ids})
        return out

    def to_text(self) -> str:
        lines = [f"# seed={self.seed}",
                 f"# counts train={len(self.train_ids)} val={len(self.val_ids)} test={len(self.test_ids)}"]
        for name, ids in (("train", self.train_ids), ("val", self.val_ids), ("test", self.test_ids)):
            lines += [f"{i}\t{name}" for i in ids]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SplitManifest":
        seed = 0
        parts = {"train": [], "val": [], "test": []}
        for line in text.splitlines():
            if line.startswith("# seed="):
                seed = int(line.split("=", 1)[1])
            elif line and not line.startswith("#"):
                ident, name = line.split("\t")
                parts[name].append(ident)
        return cls(parts["train"], parts["val"], parts["test"], seed)


def derive_seed(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _by_role(examples):
    groups = {role: [] for role in TrackRole}
    for ex in examples:
        groups[ex.role].append(ex)
    return groups


def balance(examples, per_class: int | None = None, seed: int = 0) -> list:
    """Uniformly sample ``per_class`` examples of every role (default: smallest class size)."""
    groups = _by_role(examples)
    absent = [r.key for r, g in groups.items() if not g]
    if absent:
        raise DatasetError(f"roles absent from corpus: {absent}")
    smallest = min(len(g) for g in groups.values())
    per_class = smallest if per_class is None else per_class
    if per_class > smallest:
        raise DatasetError(f"per_class={per_class} exceeds smallest class size {smallest}")
    rng = np.random.default_rng(seed)
    out = []
    for role in TrackRole:
        group = sorted(groups[role], key=lambda e: e.id)
        chosen = np.sort(rng.choice(len(group), size=per_class, replace=False))
        out.extend(group[i] for i in chosen)
    return out


def _allocate(target: int, sizes: list) -> list:
    """Split ``target`` across classes proportionally to ``sizes``: floors first,
    remainder to the largest fractional parts (ties by class order)."""
    total = sum(sizes)
    exact = [target * s / total for s in sizes]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:target - sum(counts)]:
        counts[i] += 1
    return counts


def split(examples, seed: int = 0) -> SplitManifest:
    """Stratified split: test = floor(20% of all), val = floor(10% of the rest), train = remainder."""
    groups = _by_role(examples)
    present = [r for r in TrackRole if groups[r]]
    small = [r.key for r in present if len(groups[r]) < MIN_PER_CLASS_FOR_SPLIT]
    if small:
        raise DatasetError(f"classes with fewer than {MIN_PER_CLASS_FOR_SPLIT} examples: {small}")
    ids = [ex.id for ex in examples]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate example ids")
    n = len(examples)
    n_test = math.floor(TEST_FRACTION * n)
    n_val = math.floor(VAL_FRACTION * (n - n_test))
    sizes = [len(groups[r]) for r in present]
    test_counts = _allocate(n_test, sizes)
    val_counts = _allocate(n_val, [s - t for s, t in zip(sizes, test_counts)])

    rng = np.random.default_rng(seed)
    train_ids, val_ids, test_ids = [], [], []
    for role, n_t, n_v in zip(present, test_counts, val_counts):
        members = sorted(ex.id for ex in groups[role])
        order = [members[i] for i in rng.permutation(len(members))]
        test_ids += order[:n_t]
        val_ids += order[n_t:n_t + n_v]
        train_ids += order[n_t + n_v:]
    return SplitManifest(train_ids, val_ids, test_ids, seed)


def select(examples, ids) -> list:
    index = {ex.id: ex for ex in examples}
    return [index[i] for i in ids]


def transpose(seq: Sequence, semitones: int) -> Sequence | None:
    if abs(semitones) > 12:
        raise ValueError(f"transposition {semitones} exceeds an octave")
    if any(not 0 <= n.pitch + semitones <= 127 for n in seq.notes):
        return None
    notes = tuple(replace(n, pitch=n.pitch + semitones) for n in seq.notes)
    return replace(seq, notes=notes)


def scale_tempo(seq: Sequence, factor: float) -> Sequence:
    """Multiply the tempo (ticks unchanged); the result is rounded to 0.01 bpm."""
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"tempo factor {factor} outside [0.5, 2.0]")
    return replace(seq, tempo_bpm=round(seq.tempo_bpm * factor, TEMPO_DECIMALS))


def augment_set(train, policy: AugmentationPolicy | None = None, seed: int = 0) -> list:
    """Return ``train`` followed by key/tempo variants of each example.

    Each variant applies one transposition and one tempo factor drawn with a
    per-example seed; variants whose transposition leaves [0, 127] are skipped.
    """
    policy = policy or AugmentationPolicy()
    out = list(train)
    for ex in train:
        rng = np.random.default_rng(derive_seed(seed, ex.id))
        for v in range(policy.variants_per_example):
            shift = int(rng.choice(policy.semitone_choices))
            factor = float(rng.choice(policy.tempo_factors))
            moved = transpose(ex.sequence, shift)
            if moved is None:
                continue
            out.append(LabeledExample(
                sequence=scale_tempo(moved, factor), role=ex.role, id=f"{ex.id}~aug{v}",
                origin="augmented", parent_id=ex.id,
                transform=f"transpose({shift:+d}),tempo(x{factor:g})"))
    return out


# --------------------------------------------------------------- synthetic corpus

def _scale_pitches(key: int, lo: int, hi: int) -> list:
    return [p for p in range(lo, hi + 1) if (p - key) % 12 in MAJOR_SCALE]


def _walk(rng, pitches, n, start=None):
    """Mostly-stepwise walk over a pitch list, reflecting at the ends."""
    i = int(rng.integers(len(pitches) // 4, 3 * len(pitches) // 4)) if start is None else start
    out = []
    for _ in range(n):
        out.append(pitches[i])
        r = rng.random()
        step = 1 if r < 0.7 else (2 if r < 0.9 else int(rng.integers(3, 5)))
        step *= 1 if rng.random() < 0.5 else -1
        i += step
        if i < 0 or i >= len(pitches):
            i -= 2 * step
        i = min(max(i, 0), len(pitches) - 1)
    return out


def _fill_bar(rng, choices, weights):
    durs, left = [], BAR
    while left > 0:
        d = int(rng.choice(choices, p=weights))
        d = min(d, left)
        durs.append(d)
        left -= d
    return durs


def _triad(key, degree, lo, hi, voices=3):
    scale = [key + s for s in MAJOR_SCALE]
    notes = [scale[(degree + 2 * k) % 7] + 12 * ((degree + 2 * k) // 7) for k in range(voices)]
    while min(notes) < lo:
        notes = [p + 12 for p in notes]
    while max(notes) > hi:
        notes = [p - 12 for p in notes]
    return notes


def _gen_main_melody(rng, key):
    pitches = _scale_pitches(key, 60, 84)
    durs = [d for _ in range(N_BARS) for d in _fill_bar(rng, (240, 120), (0.5, 0.5))]
    base = int(rng.integers(80, 111))
    notes, t = [], 0
    for p, d in zip(_walk(rng, pitches, len(durs)), durs):
        vel = int(np.clip(base + rng.integers(-8, 9), 1, 127))
        notes.append((t, p, d, vel))
        t += d
    return notes


def _gen_sub_melody(rng, key):
    pitches = _scale_pitches(key, 55, 79)
    durs = [d for _ in range(N_BARS) for d in _fill_bar(rng, (960, 480, 240), (0.4, 0.5, 0.1))]
    base = int(rng.integers(80, 111)) - 20
    notes, t = [], 0
    for p, d in zip(_walk(rng, pitches, len(durs)), durs):
        vel = int(np.clip(base + rng.integers(-8, 9), 1, 127))
        notes.append((t, p, d, vel))
        t += d
    return notes


def _gen_pad(rng, key):
    notes, t = [], 0
    while t < N_BARS * BAR:
        d = int(rng.choice((960, 1920)))
        voices = int(rng.integers(3, 5))
        vel = int(rng.integers(50, 76))
        for p in _triad(key, int(rng.integers(0, 7)), 48, 79, voices):
            notes.append((t, p, d, vel))
        t += d
    return notes


def _gen_riff(rng, key):
    pitches = _scale_pitches(key, 45, 69)
    slots = _fill_bar(rng, (240, 120), (0.5, 0.5))
    walk = _walk(rng, pitches, len(slots))
    pattern, t = [], 0
    for p, d in zip(walk, slots):
        if rng.random() >= 0.2 or not pattern:
            pattern.append((t, p, max(d // 2, 60), int(rng.integers(90, 121))))
        t += d
    return [(bar * BAR + o, p, d, v) for bar in range(N_BARS) for o, p, d, v in pattern]


def _gen_accompaniment(rng, key):
    shapes = ((0, 1, 2, 1, 0, 1, 2, 1), (0, 1, 2, 3, 2, 1, 0, 1), (0, 2, 1, 2, 0, 2, 1, 2))
    shape = shapes[int(rng.integers(len(shapes)))]
    notes = []
    for bar in range(N_BARS):
        triad = _triad(key, int(rng.integers(0, 7)), 48, 72)
        chord = triad + [triad[0] + 12 if triad[0] + 12 <= 72 else triad[1]]
        vel = int(rng.integers(55, 81))
        for k, idx in enumerate(shape):
            notes.append((bar * BAR + 240 * k, chord[idx], 240, vel))
    return notes


def _gen_bass(rng, key):
    notes = []
    vel = int(rng.integers(80, 111))
    for bar in range(N_BARS):
        root = _triad(key, int(rng.integers(0, 7)), 28, 52)[0]
        onsets = [b * 480 for b in range(4)] + [b * 480 + 240 for b in range(4) if rng.random() < 0.4]
        onsets.sort()
        for i, o in enumerate(onsets):
            end = onsets[i + 1] if i + 1 < len(onsets) else BAR
            choice = rng.random()
            p = root + (7 if choice < 0.2 else (12 if choice < 0.3 else 0))
            if p > 52:
                p -= 12
            notes.append((bar * BAR + o, p, end - o, vel))
    return notes


_GENERATORS = {
    TrackRole.MAIN_MELODY: _gen_main_melody,
    TrackRole.SUB_MELODY: _gen_sub_melody,
    TrackRole.PAD: _gen_pad,
    TrackRole.RIFF: _gen_riff,
    TrackRole.ACCOMPANIMENT: _gen_accompaniment,
    TrackRole.BASS: _gen_bass,
}


def synthesize_example(role: TrackRole, seed: int, ident: str | None = None) -> LabeledExample:
    ident = ident or f"syn-{role.key}-{seed}"
    rng = np.random.default_rng(derive_seed(seed, ident))
    key = int(rng.integers(0, 12))
    program = int(rng.choice(ROLE_PROGRAMS[role]))
    tempo = round(float(rng.uniform(70.0, 160.0)), TEMPO_DECIMALS)
    notes = tuple(Note(onset_tick=t, pitch=p, duration_tick=d, velocity=v, program=program)
                  for t, p, d, v in _GENERATORS[role](rng, key))
    seq = Sequence(notes=notes, ppq=PPQ, tempo_bpm=tempo, time_sig=(4, 4), role=role)
    return LabeledExample(seq, role, ident, origin="synthetic")


def synthesize_corpus(n_per_class: int, seed: int = 0) -> list:
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    return [synthesize_example(role, seed, f"syn-{role.key}-{i:04d}")
            for role in TrackRole for i in range(n_per_class)]


# --------------------------------------------------------------- corpus files

METADATA_NAME = "metadata.csv"


def write_corpus(examples, out_dir) -> Path:
    """Write ``<id>.mid`` files plus ``metadata.csv`` (file,track_role)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["file,track_role"]
    for ex in examples:
        name = f"{ex.id}.mid"
        (out_dir / name).write_bytes(write_smf(ex.sequence))
        lines.append(f"{name},{ex.role.key}")
    meta = out_dir / METADATA_NAME
    meta.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return meta


def load_corpus(data_dir, column_map=None) -> list:
    data_dir = Path(data_dir)
    meta = data_dir / METADATA_NAME
    if not meta.is_file():
        raise DatasetError(f"no {METADATA_NAME} in {data_dir}")
    import csv
    with open(meta, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    file_col = (column_map or {}).get("file", "file")
    present = [r for r in rows if (data_dir / r[file_col]).is_file()]
    pairs = load_labeled_dataset(data_dir, meta, column_map)
    return [LabeledExample(seq, role, Path(row[file_col]).stem)
            for (seq, role), row in zip(pairs, present)]


def corpus_hash(examples) -> str:
    h = hashlib.sha256()
    for ex in sorted(examples, key=lambda e: e.id):
        h.update(ex.id.encode())
        h.update(str(int(ex.role)).encode())
        h.update(write_smf(ex.sequence))
    return h.hexdigest()


__all__ = [
    "AugmentationPolicy", "DatasetError", "LabeledExample", "MidiError", "SplitManifest",
    "augment_set", "balance", "corpus_hash", "derive_seed", "load_corpus", "scale_tempo",
    "select", "split", "synthesize_corpus", "synthesize_example", "transpose", "write_corpus",
]
