import re

import numpy as np
import pytest

from trackrole.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, format_prediction, main
from trackrole.midi_io import TrackRole

TINY = """\
d_model = 16
n_layers = 1
n_heads = 2
ff_dim = 32
max_len = 64
n_conv_blocks = 2
channels = 4,8
hidden_dim = 16
max_frames = 32
epochs = 1
batch_size = 8
peak_lr = 0.001
pretrain_steps = 3
pretrain_batch_size = 4
pretrain_corpus_size = 12
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth-data", "--out", root / "data", "--per-class", 10, "--seed", 0) == EXIT_OK
    (root / "run.cfg").write_text(TINY + f"data_dir = {root / 'data'}\n")
    return root


def pipeline(root, tag, domain="symbolic"):
    cfg = root / "run.cfg"
    out = root / tag
    out.mkdir()
    assert run("pretrain", "--domain", domain, "--config", cfg, "--out", out / "pre.ckpt") == EXIT_OK
    assert run("train", "--domain", domain, "--mode", "fine-tune", "--init", out / "pre.ckpt",
               "--config", cfg, "--out", out / "clf.ckpt") == EXIT_OK
    assert run("evaluate", "--ckpt", out / "clf.ckpt", "--split", "test", "--report", out / "report") == EXIT_OK
    return out


ARTIFACTS = ["pre.ckpt", "pre.ckpt.manifest.txt", "clf.ckpt", "clf.ckpt.manifest.txt", "clf.ckpt.history.csv",
             "clf.ckpt.split.txt", "report/metrics.csv", "report/per_class.csv", "report/manifest.txt",
             "report/confusion.svg"]


@pytest.mark.parametrize("domain", ["symbolic", "audio"])
def test_rerun_is_byte_identical(workspace, domain):
    a, b = pipeline(workspace, f"{domain}-a", domain), pipeline(workspace, f"{domain}-b", domain)
    for name in ARTIFACTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    header = (a / "report/metrics.csv").read_text().splitlines()
    assert header[0] == "model,mode,accuracy,precision,recall,f1"
    assert header[1].startswith(("symbolic-L1,fine_tune,", "audio,fine_tune,"))


def test_synth_data_is_deterministic(workspace, tmp_path):
    assert run("synth-data", "--out", tmp_path, "--per-class", 10, "--seed", 0) == EXIT_OK
    for name in ("metadata.csv", "build_manifest.txt", "syn-bass-0003.mid"):
        assert (tmp_path / name).read_bytes() == (workspace / "data" / name).read_bytes()


def test_predict_line(workspace, capsys):
    out = workspace / "predict"
    out.mkdir()
    assert run("train", "--domain", "symbolic", "--mode", "from-scratch", "--config", workspace / "run.cfg",
               "--out", out / "clf.ckpt") == EXIT_OK
    capsys.readouterr()
    assert run("predict", "--ckpt", out / "clf.ckpt", "--input", workspace / "data/syn-bass-0000.mid") == EXIT_OK
    line = capsys.readouterr().out.strip()
    m = re.fullmatch(r"([a-z_]+) p=\[([0-9.,]+)\]", line)
    assert m and m.group(1) in {r.key for r in TrackRole}
    probs = [float(v) for v in m.group(2).split(",")]
    assert len(probs) == 6 and abs(sum(probs) - 1.0) < 1e-5


def test_render_audio_and_wav_predict(workspace, tmp_path, capsys):
    assert run("render-audio", "--in", workspace / "data", "--out", tmp_path / "wav", "--seed", 0) == EXIT_OK
    rows = (tmp_path / "wav/manifest.csv").read_text().splitlines()
    assert rows[0] == "file,role,program,seed" and len(rows) == 61
    cfg = tmp_path / "audio.cfg"
    cfg.write_text(TINY + f"data_dir = {workspace / 'data'}\naudio_dir = {tmp_path / 'wav'}\n")
    assert run("train", "--domain", "audio", "--mode", "from-scratch", "--config", cfg,
               "--out", tmp_path / "a.ckpt") == EXIT_OK
    capsys.readouterr()
    assert run("predict", "--ckpt", tmp_path / "a.ckpt", "--input", tmp_path / "wav/syn-pad-0001.wav") == EXIT_OK
    assert " p=[" in capsys.readouterr().out


def test_format_prediction():
    assert format_prediction(TrackRole.BASS, np.full(6, 1 / 6)) == \
        "bass p=[0.166667,0.166667,0.166667,0.166667,0.166667,0.166667]"


class TestExitCodes:
    def test_usage(self, workspace):
        assert run("train", "--domain", "symbolic", "--mode", "fine-tune", "--config", workspace / "run.cfg",
                   "--out", workspace / "x.ckpt") == EXIT_USAGE
        assert run("bogus") == EXIT_USAGE
        assert run("train", "--domain", "video", "--mode", "from-scratch", "--config", "c", "--out", "o") == EXIT_USAGE

    def test_bad_config_key(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("colour = blue\n")
        assert run("pretrain", "--domain", "symbolic", "--config", tmp_path / "bad.cfg",
                   "--out", tmp_path / "p.ckpt") == EXIT_USAGE

    def test_data_errors(self, workspace, tmp_path):
        assert run("predict", "--ckpt", tmp_path / "missing.ckpt", "--input", "x.mid") == EXIT_DATA
        (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
        assert run("evaluate", "--ckpt", tmp_path / "junk.ckpt", "--report", tmp_path / "r") == EXIT_DATA
        assert run("render-audio", "--in", tmp_path, "--out", tmp_path / "w") == EXIT_DATA

    def test_pretrain_checkpoint_rejected_for_predict(self, workspace):
        assert run("predict", "--ckpt", workspace / "symbolic-a/pre.ckpt",
                   "--input", workspace / "data/syn-bass-0000.mid") == EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure(self, workspace, tmp_path):
        cfg = tmp_path / "hot.cfg"
        cfg.write_text(TINY + f"data_dir = {workspace / 'data'}\npeak_lr = 1e38\nwarmup_fraction = 0\nepochs = 3\n")
        assert run("train", "--domain", "symbolic", "--mode", "from-scratch", "--config", cfg,
                   "--out", tmp_path / "h.ckpt") == EXIT_NUMERIC
