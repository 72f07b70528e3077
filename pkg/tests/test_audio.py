"""WAV loading, the log-mel pipeline, and the spectrogram dump format."""

import struct

import numpy as np
import pytest

from avmae import audio
from avmae.audio import (HOP_LENGTH, SAMPLE_RATE, WIN_LENGTH, Spectrogram,
                         Waveform, fit_length, hz_to_mel, load_wav, log_mel,
                         mel_filterbank, mel_to_hz, read_hspc, write_hspc,
                         write_wav)
from avmae.errors import FormatError


def sine(freq, seconds, rate=SAMPLE_RATE, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


class TestWav:
    def test_roundtrip_mono(self, tmp_path):
        wave = Waveform(samples=sine(440, 0.5))
        path = tmp_path / "a.wav"
        write_wav(path, wave)
        back = load_wav(path)
        assert back.sample_rate == SAMPLE_RATE
        # 16-bit quantization bounds the round-trip error
        np.testing.assert_allclose(back.samples, wave.samples, atol=1.0 / 32767)

    def test_duration_arithmetic(self, tmp_path):
        wave = Waveform(samples=np.zeros(40960))
        path = tmp_path / "a.wav"
        write_wav(path, wave)
        back = load_wav(path)
        assert len(back.samples) == 40960
        assert abs(back.duration - 2.56) < 1e-9

    def test_stereo_identical_channels_matches_mono(self, tmp_path):
        mono = sine(220, 0.2)
        mono_path = tmp_path / "m.wav"
        write_wav(mono_path, Waveform(samples=mono))
        stereo_path = tmp_path / "s.wav"
        write_wav(stereo_path, np.stack([mono, mono], axis=1))
        a = load_wav(mono_path).samples
        b = load_wav(stereo_path).samples
        np.testing.assert_allclose(b, a, atol=1e-9)

    def test_stereo_averages_channels(self, tmp_path):
        left = sine(220, 0.1)
        right = sine(330, 0.1)
        path = tmp_path / "s.wav"
        write_wav(path, np.stack([left, right], axis=1))
        got = load_wav(path).samples
        np.testing.assert_allclose(got, (left + right) / 2, atol=1.0 / 32767)

    def test_truncated_file_is_format_error(self, tmp_path):
        path = tmp_path / "t.wav"
        write_wav(path, Waveform(samples=sine(440, 0.1)))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FormatError):
            load_wav(path)

    def test_garbage_header_is_format_error(self, tmp_path):
        path = tmp_path / "g.wav"
        path.write_bytes(b"not a wave file at all........")
        with pytest.raises(FormatError):
            load_wav(path)

    def test_unsupported_encoding_is_format_error(self, tmp_path):
        # hand-build a float-format (code 3) WAV header
        path = tmp_path / "f.wav"
        data = np.zeros(100, dtype="<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        body = (b"fmt " + struct.pack("<I", len(fmt)) + fmt
                + b"data" + struct.pack("<I", len(data)) + data)
        path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
        with pytest.raises(FormatError):
            load_wav(path)


class TestMelScale:
    def test_hz_mel_roundtrip(self):
        freqs = np.array([0.0, 440.0, 1000.0, 4000.0, 8000.0])
        for htk in (True, False):
            np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs, htk=htk), htk=htk),
                                       freqs, rtol=1e-10, atol=1e-8)

    def test_htk_1000hz_anchor(self):
        # 1 kHz sits at 1000 mel by construction of the HTK formula
        assert abs(hz_to_mel(np.array([1000.0]), htk=True)[0] - 999.98553) < 1e-4

    def test_filterbank_shape_and_coverage(self):
        fb = mel_filterbank(128, 1024, SAMPLE_RATE, htk=True)
        assert fb.shape == (128, 513)
        assert (fb >= 0).all()
        # every filter has some support
        assert (fb.sum(axis=1) > 0).all()

    def test_variants_differ(self):
        a = mel_filterbank(64, 1024, SAMPLE_RATE, htk=True)
        b = mel_filterbank(64, 1024, SAMPLE_RATE, htk=False)
        assert np.abs(a - b).max() > 1e-3


class TestLogMel:
    def test_frame_count_for_2_56s(self):
        wave = Waveform(samples=sine(440, 2.56))
        spec = log_mel(wave)
        assert spec.values.shape == (256, 128)

    def test_frame_count_formula(self):
        # centered pad of (win-hop)/2 per side makes frames = samples/hop
        for n in (16000, 40960, 10240):
            wave = Waveform(samples=np.random.default_rng(0).uniform(-0.1, 0.1, n))
            spec = log_mel(wave)
            padded = n + (WIN_LENGTH - HOP_LENGTH)
            assert spec.values.shape[0] == (padded - WIN_LENGTH) // HOP_LENGTH + 1
            assert spec.values.shape[0] == n // HOP_LENGTH

    def test_zero_waveform_standardizes_to_zeros(self):
        spec = log_mel(Waveform(samples=np.zeros(16000)))
        np.testing.assert_allclose(spec.values, 0.0, atol=1e-12)

    def test_pure_tone_peaks_in_expected_mel_bin(self):
        # locate 440 Hz among independently computed mel bin centers
        wave = Waveform(samples=sine(440, 2.56))
        spec = log_mel(wave, standardize=False)
        lo = hz_to_mel(np.array([0.0]), htk=True)[0]
        hi = hz_to_mel(np.array([SAMPLE_RATE / 2.0]), htk=True)[0]
        centers = mel_to_hz(np.linspace(lo, hi, 128 + 2)[1:-1], htk=True)
        expect_bin = int(np.argmin(np.abs(centers - 440.0)))
        peak_bins = np.argmax(spec.values, axis=1)
        assert (np.abs(peak_bins - expect_bin) <= 1).all()

    def test_amplitude_scaling_invariance_after_standardization(self):
        # The noise floor keeps every mel band well above the log epsilon,
        # where the epsilon would otherwise break exact scale invariance.
        base = sine(440, 1.0) + 0.2 * np.random.default_rng(1).standard_normal(16000)
        a = log_mel(Waveform(samples=base))
        b = log_mel(Waveform(samples=base * 7.3))
        np.testing.assert_allclose(b.values, a.values, atol=1e-5)

    def test_determinism(self):
        wave = Waveform(samples=sine(300, 0.64))
        a = log_mel(wave)
        b = log_mel(wave)
        assert np.array_equal(a.values, b.values)

    def test_empty_waveform_rejected(self):
        with pytest.raises(ValueError):
            log_mel(Waveform(samples=np.zeros(0)))

    def test_wrong_sample_rate_rejected(self):
        with pytest.raises(ValueError):
            log_mel(Waveform(samples=np.zeros(8000), sample_rate=8000))

    def test_target_frames_crops_and_pads(self):
        long = log_mel(Waveform(samples=sine(440, 4.0)), target_frames=256)
        short = log_mel(Waveform(samples=sine(440, 1.0)), target_frames=256)
        assert long.values.shape == (256, 128)
        assert short.values.shape == (256, 128)


class TestFitLength:
    def test_center_crop(self):
        x = np.arange(10.0)
        np.testing.assert_allclose(fit_length(x, 6), np.arange(2.0, 8.0))

    def test_zero_pad_centers(self):
        x = np.ones(4)
        out = fit_length(x, 8)
        np.testing.assert_allclose(out, [0, 0, 1, 1, 1, 1, 0, 0])

    def test_identity(self):
        x = np.arange(5.0)
        assert fit_length(x, 5) is x


class TestHspc:
    def test_roundtrip(self, tmp_path):
        values = np.random.default_rng(2).standard_normal((64, 32)).astype(np.float32)
        path = tmp_path / "s.hspc"
        write_hspc(path, Spectrogram(values=values))
        back = read_hspc(path)
        np.testing.assert_array_equal(back.values, values)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "s.hspc"
        write_hspc(path, Spectrogram(values=np.zeros((3, 5), dtype=np.float32)))
        raw = path.read_bytes()
        assert raw[:4] == b"HSPC"
        t, f, reserved = struct.unpack("<III", raw[4:16])
        assert (t, f, reserved) == (3, 5, 0)
        assert len(raw) == 16 + 4 * 3 * 5

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.hspc"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError):
            read_hspc(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.hspc"
        write_hspc(path, Spectrogram(values=np.ones((4, 4), dtype=np.float32)))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError):
            read_hspc(path)


def test_window_is_periodic_hann():
    # periodic Hann of length 400: w[k] = 0.5 - 0.5 cos(2 pi k / 400)
    w = audio.hann_window(WIN_LENGTH)
    k = np.arange(WIN_LENGTH)
    np.testing.assert_allclose(w, 0.5 - 0.5 * np.cos(2 * np.pi * k / WIN_LENGTH),
                               atol=1e-12)
