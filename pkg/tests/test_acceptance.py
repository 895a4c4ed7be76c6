"""Acceptance criteria 1-9, one verdict line each (see the terminal summary).

The learning runs are shared through session fixtures: the 120-per-class audio
run of criterion 5 is also seed 0 of the no-fusion arm in criterion 7.
"""
import math
import shutil
import time
import xml.etree.ElementTree as ET
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from grad_cases import CASES, TOLERANCE, TRIALS
from test_midi_io import random_sequence as random_smf_sequence
from test_tokenizer import random_sequence as random_token_sequence
from trackrole import tokenizer as tok
from trackrole.cli import EXIT_OK, main, pretraining_corpus
from trackrole.config import RunConfig
from trackrole.dataset import select, split, synthesize_corpus
from trackrole.dsp import log_mel, mel_center_frequencies
from trackrole.evaluation import ConfusionMatrix, metrics, render_confusion_svg
from trackrole.features import audio_inputs, symbolic_inputs
from trackrole.midi_io import TrackRole, parse_smf, write_smf
from trackrole.models import AudioClassifier, SymbolicClassifier
from trackrole.models.audio import AttentionFeatureFusion, aff_fuse
from trackrole.models.training import evaluate_model, initial_loss, pretrain_masked, train
from trackrole.nn import Tensor, checkpoint, default_dtype
from trackrole.nn.gradcheck import check_gradients
from trackrole.synth import SAMPLE_RATE, AudioClip, read_wav, render, write_wav

pytestmark = pytest.mark.slow

# desk-scale settings shared by the learning criteria
DESK = RunConfig(max_len=256, peak_lr=1e-3, batch_size=8)
CORPUS_SEED = 0
SEEDS = (0, 1, 2)


def timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def split_parts(corpus, seed=0):
    m = split(corpus, seed)
    return {name: select(corpus, ids) for name, ids in
            (("train", m.train_ids), ("val", m.val_ids), ("test", m.test_ids))}


@pytest.fixture(scope="session")
def corpus120():
    return split_parts(synthesize_corpus(120, CORPUS_SEED))


@pytest.fixture(scope="session")
def desk_root(tmp_path_factory):
    """The 120-per-class corpus written by the CLI, as used by the audio runs."""
    root = tmp_path_factory.mktemp("desk")
    assert main(["synth-data", "--out", str(root / "data"), "--per-class", "120",
                 "--seed", str(CORPUS_SEED)]) == EXIT_OK
    return root


_audio_runs: dict = {}


def audio_run(root: Path, use_aff: bool, seed: int):
    """CLI train (10 epochs, from scratch) + evaluate on the test split.

    Returns (test accuracy, train seconds, checkpoint path); memoized so
    criteria share runs.
    """
    key = (use_aff, seed)
    if key not in _audio_runs:
        tag = f"audio-{'aff' if use_aff else 'plain'}-s{seed}"
        cfg = RunConfig(**{**DESK.to_dict(), "channels": DESK.channels, "data_dir": str(root / "data"),
                           "use_aff": use_aff, "seed": seed, "epochs": 10})
        (root / f"{tag}.cfg").write_text(cfg.to_text())
        ckpt = root / f"{tag}.ckpt"
        start = time.perf_counter()
        assert main(["train", "--domain", "audio", "--mode", "from-scratch", "--config", str(root / f"{tag}.cfg"),
                     "--out", str(ckpt)]) == EXIT_OK
        secs = time.perf_counter() - start
        assert main(["evaluate", "--ckpt", str(ckpt), "--split", "test",
                     "--report", str(root / f"{tag}-report")]) == EXIT_OK
        row = (root / f"{tag}-report" / "metrics.csv").read_text().splitlines()[1].split(",")
        _audio_runs[key] = (float(row[2]), secs, ckpt)
    return _audio_runs[key]


# ------------------------------------------------------------------ 1. numerics

def test_criterion_1_gradient_checks(verdict):
    def run():
        rng = np.random.default_rng(2024)
        return {name: max(check_gradients(*CASES[name](rng), rng) for _ in range(TRIALS)) for name in CASES}
    worst, secs = timed(run)
    name = max(worst, key=worst.get)
    ok = worst[name] <= TOLERANCE and secs < 60
    assert verdict(1, ok, f"{len(worst)} ops x {TRIALS} trials, worst rel err {worst[name]:.2e} ({name}), "
                          f"{secs:.1f}s"), worst


# ------------------------------------------------------------------ 2. round-trips

def test_criterion_2_roundtrips(verdict):
    def run():
        rng = np.random.default_rng(7)
        smf_ok = sum(parse_smf(write_smf(s)) == s for s in (random_smf_sequence(rng) for _ in range(100)))
        wav_err = 0.0
        for ex in synthesize_corpus(2, seed=5):
            clip = render(ex.sequence, 0)
            back = read_wav(write_wav(clip))
            wav_err = max(wav_err, float(np.abs(back.samples - clip.samples).max()))
        rng = np.random.default_rng(99)
        tok_ok = 0
        for _ in range(100):
            enc = tok.encode(random_token_sequence(rng))
            tok_ok += tok.encode(tok.decode(enc)) == enc
        return smf_ok, wav_err, tok_ok
    (smf_ok, wav_err, tok_ok), secs = timed(run)
    ok = smf_ok == 100 and wav_err <= 1 / 32767 and tok_ok == 100 and secs < 60
    assert verdict(2, ok, f"SMF {smf_ok}/100 exact, WAV max err {wav_err * 32767:.3f}/32767, "
                          f"tokenizer idempotent {tok_ok}/100, {secs:.1f}s")


# ------------------------------------------------------------------ 3. DSP

def test_criterion_3_dsp(verdict):
    def run():
        t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
        silence = log_mel(AudioClip(np.zeros(SAMPLE_RATE))).values
        tone = log_mel(AudioClip(0.5 * np.sin(2 * np.pi * 440.0 * t))).values
        band = int(np.abs(mel_center_frequencies() - 440.0).argmin())
        x = 0.05 * np.sin(2 * np.pi * 1000.0 * t) + 0.02 * np.sin(2 * np.pi * 3000.0 * t)
        lo, hi = log_mel(AudioClip(x)).values, log_mel(AudioClip(10 * x)).values
        live = lo > -100.0 + 1e-9
        shift_err = float(np.abs(hi[live] - lo[live] - 20.0).max())
        return silence, tone, band, shift_err
    (silence, tone, band, shift_err), secs = timed(run)
    ok = ((silence == -100.0).all() and (tone.argmax(axis=1) == band).all() and len(silence) == 96
          and shift_err <= 1e-6 and secs < 60)
    assert verdict(3, ok, f"silence floor exact={bool((silence == -100.0).all())}, 440 Hz band {band} in "
                          f"{int((tone.argmax(axis=1) == band).sum())}/{len(tone)} frames, 1 s -> "
                          f"{len(silence)} frames, +20 dB err {shift_err:.1e}, {secs:.1f}s")


# ------------------------------------------------------------------ 4. metric identities

def test_criterion_4_metric_identities(verdict):
    rng = np.random.default_rng(11)
    worst_recall, worst_trace = 0.0, 0.0
    for _ in range(100):
        counts = rng.integers(0, 20, size=(6, 6)) * (rng.random((6, 6)) < 0.7)
        counts[int(rng.integers(6)), int(rng.integers(6))] += 1
        cm = ConfusionMatrix(counts)
        rep = metrics(cm)
        support = counts.sum(axis=1)
        per_recall = np.divide(np.diag(counts), support, out=np.zeros(6), where=support > 0)
        worst_recall = max(worst_recall, abs(float(support @ per_recall) / counts.sum() - rep.accuracy))
        worst_trace = max(worst_trace, abs(np.trace(counts) / counts.sum() - rep.accuracy))
    svg = render_confusion_svg(cm, normalize_rows=True, title="random")
    cells = [r for r in ET.fromstring(svg).iter("{http://www.w3.org/2000/svg}rect") if "data-value" in r.attrib]
    ok = worst_recall < 1e-12 and worst_trace < 1e-12 and len(cells) == 36
    assert verdict(4, ok, f"100 matrices: |weighted recall - acc| <= {worst_recall:.1e}, "
                          f"|trace/total - acc| <= {worst_trace:.1e}, SVG parsed with {len(cells)} cells")


# ------------------------------------------------------------------ 5. learning sanity

def test_criterion_5_learning(verdict, corpus120, desk_root):
    sym_data = {name: symbolic_inputs(part, DESK.max_len) for name, part in corpus120.items()}
    sym = SymbolicClassifier(DESK.symbolic_model(), seed=0)
    aud_init = AudioClassifier(DESK.audio_model(), seed=0)
    loss_sym = initial_loss(sym, *sym_data["train"])
    loss_aud = initial_loss(aud_init, *audio_inputs(corpus120["train"], DESK.dataset_seed, DESK.max_frames))

    cfg = RunConfig(**{**DESK.to_dict(), "channels": DESK.channels, "epochs": 20})
    _, sym_secs = timed(lambda: train(sym, {"train": sym_data["train"], "val": sym_data["val"]},
                                      cfg.train_config("from_scratch")))
    sym_acc = evaluate_model(sym, *sym_data["test"])[1]
    aud_acc, aud_secs, _ = audio_run(desk_root, False, 0)

    ln6 = math.log(6)
    ok = (abs(loss_sym - ln6) <= 0.15 and abs(loss_aud - ln6) <= 0.15 and sym_acc >= 0.85
          and aud_acc >= 0.75 and sym_secs < 900 and aud_secs < 900)
    assert verdict(5, ok, f"initial loss sym {loss_sym:.3f} / audio {loss_aud:.3f} (ln 6 = {ln6:.3f}); "
                          f"symbolic 20 ep test acc {sym_acc:.3f} in {sym_secs:.0f}s; "
                          f"audio 10 ep test acc {aud_acc:.3f} in {aud_secs:.0f}s")


# ------------------------------------------------------------------ 6. fine-tune vs scratch

def test_criterion_6_finetune_beats_scratch(verdict, tmp_path):
    start = time.perf_counter()
    pre_cfg = RunConfig(**{**DESK.to_dict(), "channels": DESK.channels})
    corpus = pretraining_corpus(pre_cfg)
    tokens = [tok.encode(ex.sequence, DESK.max_len) for ex in corpus]
    encoder, losses = pretrain_masked(SymbolicClassifier(DESK.symbolic_model(), seed=0), tokens,
                                      pre_cfg.pretrain_steps, pre_cfg.pretrain_seed,
                                      pre_cfg.pretrain_batch_size, pre_cfg.pretrain_peak_lr)
    ckpt = tmp_path / "pretrained.ckpt"
    checkpoint.save(ckpt, encoder, {"domain": "symbolic", "kind": "pretrain"})

    parts = split_parts(synthesize_corpus(30, CORPUS_SEED))
    data = {name: symbolic_inputs(part, DESK.max_len) for name, part in parts.items()}
    rows = []
    for seed in SEEDS:
        cfg = RunConfig(**{**DESK.to_dict(), "channels": DESK.channels, "epochs": 4, "seed": seed})
        accs, steps = {}, {}
        for mode in ("fine_tune", "from_scratch"):
            model = SymbolicClassifier(DESK.symbolic_model(), seed=seed)
            res = train(model, {"train": data["train"], "val": data["val"]},
                        cfg.train_config(mode, str(ckpt) if mode == "fine_tune" else None))
            accs[mode], steps[mode] = evaluate_model(model, *data["test"])[1], res.steps
        assert steps["fine_tune"] == steps["from_scratch"]
        rows.append((seed, accs["fine_tune"], accs["from_scratch"]))
    secs = time.perf_counter() - start
    wins = sum(ft >= sc for _, ft, sc in rows)
    ok = len(corpus) == 2000 and wins >= 2 and secs < 1200
    table = "; ".join(f"seed {s}: ft {ft:.3f} vs scratch {sc:.3f}" for s, ft, sc in rows)
    assert verdict(6, ok, f"pretrain on {len(corpus)} seqs (loss {losses[0]:.2f} -> {losses[-1]:.2f}); "
                          f"{table}; fine-tune >= scratch in {wins}/3, {secs:.0f}s")


# ------------------------------------------------------------------ 7. attention feature fusion

def test_criterion_7_aff(verdict, desk_root):
    with default_dtype(np.float64):
        rng = np.random.default_rng(3)
        aff = AttentionFeatureFusion(8, 8, rng)
        x, y = rng.standard_normal((2, 4, 4, 8)), rng.standard_normal((2, 4, 4, 8))
        w = aff.attention(Tensor(x + y)).data
        same_err = float(np.abs(aff_fuse(aff, Tensor(x), Tensor(x.copy())).data - x).max())
        for conv in (aff.local_conv2, aff.global_conv2):
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = 0.0
        mean_exact = bool(np.array_equal(aff_fuse(aff, Tensor(x), Tensor(y)).data, 0.5 * x + 0.5 * y))
    identities = mean_exact and same_err <= 1e-12 and bool(((w > 0) & (w < 1)).all())

    plain = [audio_run(desk_root, False, s)[0] for s in SEEDS]
    fused = [audio_run(desk_root, True, s)[0] for s in SEEDS]
    ok = identities and np.mean(fused) >= np.mean(plain) - 0.05
    assert verdict(7, ok, f"zero-attention mean exact={mean_exact}, X==Y err {same_err:.1e}, w in (0,1); "
                          f"test acc AFF {np.round(fused, 3).tolist()} (mean {np.mean(fused):.3f}) vs no-AFF "
                          f"{np.round(plain, 3).tolist()} (mean {np.mean(plain):.3f})")


# ------------------------------------------------------------------ 8. determinism

DET_CONFIG = """\
d_model = 16
n_layers = 1
n_heads = 2
ff_dim = 32
max_len = 64
n_conv_blocks = 2
channels = 8,16
hidden_dim = 16
max_frames = 64
use_aff = true
epochs = 2
peak_lr = 0.001
pretrain_steps = 5
pretrain_batch_size = 4
pretrain_corpus_size = 24
"""


def cli_pipeline(root: Path) -> dict:
    """Run every subcommand once; return {relative path: bytes} of every artifact."""
    def run(*argv):
        assert main([str(a) for a in argv]) == EXIT_OK, argv
    run("synth-data", "--out", root / "data", "--per-class", 10, "--seed", 4)
    run("render-audio", "--in", root / "data", "--out", root / "wav", "--seed", 0)
    (root / "run.cfg").write_text(DET_CONFIG + f"data_dir = {root / 'data'}\naudio_dir = {root / 'wav'}\n")
    for domain in ("symbolic", "audio"):
        run("pretrain", "--domain", domain, "--config", root / "run.cfg", "--out", root / f"{domain}-pre.ckpt")
        run("train", "--domain", domain, "--mode", "fine-tune", "--init", root / f"{domain}-pre.ckpt",
            "--config", root / "run.cfg", "--out", root / f"{domain}.ckpt")
        run("evaluate", "--ckpt", root / f"{domain}.ckpt", "--report", root / f"{domain}-report")
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(verdict, tmp_path):
    # the config records absolute data paths, so the rerun happens in the same directory
    a = cli_pipeline(tmp_path)
    shutil.rmtree(tmp_path)
    b = cli_pipeline(tmp_path)
    differing = sorted(k for k in a if a[k] != b.get(k))
    kinds = Counter(Path(k).suffix for k in a)
    ok = a.keys() == b.keys() and not differing and kinds[".ckpt"] == 4
    assert verdict(8, ok, f"{len(a)} artifacts ({kinds['.ckpt']} checkpoints, {kinds['.csv']} csv, "
                          f"{kinds['.txt']} manifests/splits) byte-identical across reruns; "
                          f"differing: {differing or 'none'}")


# ------------------------------------------------------------------ 9. splits

def test_criterion_9_splits(verdict):
    corpus = synthesize_corpus(500, seed=9)
    m = split(corpus, seed=0)
    roles = {ex.id: ex.role for ex in corpus}
    dev = 0.0
    for ids, per in ((m.test_ids, 100), (m.val_ids, 40), (m.train_ids, 360)):
        counts = Counter(roles[i] for i in ids)
        dev = max(dev, max(abs(counts[r] - per) for r in TrackRole))
    sizes = (len(m.test_ids), len(m.val_ids), len(m.train_ids))
    disjoint = len(set(m.test_ids) | set(m.val_ids) | set(m.train_ids)) == 3000
    ok = sizes == (600, 240, 2160) and dev <= 1 and disjoint
    assert verdict(9, ok, f"3000 -> test/val/train {sizes[0]}/{sizes[1]}/{sizes[2]}, "
                          f"max per-class deviation {dev:.0f}, disjoint={disjoint}")


# ------------------------------------------------------------------ CLI example

def test_cli_predicts_rendered_bass(desk_root, corpus120, tmp_path, capsys):
    """The desk audio checkpoint labels a rendered test-split bass clip as bass."""
    ckpt = audio_run(desk_root, False, 0)[2]
    bass = next(ex for ex in corpus120["test"] if ex.role == TrackRole.BASS)
    (tmp_path / "bass.wav").write_bytes(write_wav(render(bass.sequence, DESK.dataset_seed)))
    capsys.readouterr()
    assert main(["predict", "--ckpt", str(ckpt), "--input", str(tmp_path / "bass.wav")]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    probs = [float(v) for v in line.split("p=[")[1].rstrip("]").split(",")]
    assert line.startswith("bass p=[") and len(probs) == 6 and abs(sum(probs) - 1) < 1e-5
