import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackrole.dsp import (dump_spectrogram, frame_count, hann_window, hz_to_mel, load_spectrogram,
                           log_mel, mel_center_frequencies, mel_filterbank, power_stft)
from trackrole.synth import SAMPLE_RATE, AudioClip


def sine(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return amp * np.sin(2 * np.pi * freq * t)


class TestWindow:
    def test_n2(self):
        assert hann_window(2).tolist() == [0.0, 1.0]

    @given(st.integers(2, 4096))
    def test_starts_at_zero(self, n):
        assert hann_window(n)[0] == 0.0

    def test_sum(self):
        assert abs(hann_window(1024).sum() - 512) <= 1e-9


class TestStft:
    def test_zeros(self):
        assert not power_stft(np.zeros(5000)).any()

    def test_bin8_sine(self):
        n_fft = 2048
        x = np.sin(2 * np.pi * 8 * np.arange(8192) / n_fft)
        assert (power_stft(x, n_fft, 480).argmax(axis=1) == 8).all()

    def test_parseval(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(6000)
        n_fft, hop = 1024, 300
        power = power_stft(x, n_fft, hop)
        w = hann_window(n_fft)
        for f in range(power.shape[0]):
            frame = x[f * hop:f * hop + n_fft] * w
            p = power[f]
            full = p[0] + p[-1] + 2 * p[1:-1].sum()
            assert full / n_fft == pytest.approx((frame ** 2).sum(), rel=1e-6)

    def test_short_input(self):
        assert power_stft(np.ones(100)).shape == (0, 1025)

    @given(st.integers(0, 20000))
    def test_frame_law(self, n):
        assert frame_count(n, 2048, 480) == (0 if n < 2048 else 1 + (n - 2048) // 480)


class TestMel:
    def test_formula(self):
        assert hz_to_mel(440.0) == pytest.approx(549.64, abs=0.01)

    def test_rows_peak_one(self):
        fb = mel_filterbank()
        assert np.allclose(fb.max(axis=1), 1.0) and (fb.min(axis=1) == 0).all()

    def test_no_spectral_holes(self):
        fb = mel_filterbank()
        centers = np.rint(mel_center_frequencies() * 2048 / SAMPLE_RATE).astype(int)
        assert (fb[:, centers[0]:centers[-1] + 1].sum(axis=0) > 0).all()

    def test_degenerate_spacing(self):
        with pytest.raises(ValueError, match="n_fft"):
            mel_filterbank(128, 256, SAMPLE_RATE, 20.0, 24000.0)


class TestLogMel:
    def test_silence(self):
        spec = log_mel(AudioClip(np.zeros(SAMPLE_RATE)))
        assert spec.values.shape == (96, 64)
        assert (spec.values == -100.0).all()

    def test_a440_band(self):
        spec = log_mel(AudioClip(sine(440.0)))
        nearest = np.abs(mel_center_frequencies() - 440.0).argmin()
        assert (spec.values.argmax(axis=1) == nearest).all()

    def test_plus_20_db(self):
        x = sine(1000.0, 0.3, amp=0.05) + sine(3000.0, 0.3, amp=0.02)
        lo = log_mel(AudioClip(x)).values
        hi = log_mel(AudioClip(10 * x)).values
        live = lo > -100.0 + 1e-9
        assert np.abs(hi[live] - lo[live] - 20.0).max() <= 1e-6
        assert (hi[~live & (hi <= -100.0)] == -100.0).all()

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 30000))
    def test_shape_and_floor(self, n):
        x = np.random.default_rng(n).uniform(-1, 1, n)
        spec = log_mel(AudioClip(x))
        assert spec.values.shape == (frame_count(n, 2048, 480), 64)
        assert (spec.values >= -100.0).all()

    def test_wrong_rate(self):
        clip = AudioClip(np.zeros(10))
        object.__setattr__(clip, "sample_rate", 44100)
        with pytest.raises(ValueError):
            log_mel(clip)

    def test_dump_roundtrip(self):
        spec = log_mel(AudioClip(sine(220.0, 0.2)))
        back = load_spectrogram(dump_spectrogram(spec))
        assert np.array_equal(back.values, spec.values.astype(np.float32))
