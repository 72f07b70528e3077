"""Waveform loading and log-mel spectrogram extraction.

Pipeline: 16 kHz mono PCM -> centered framing with a periodic Hann window
(25 ms window, 10 ms hop, n_fft 1024) -> magnitude spectrum -> mel
filterbank (128 bands, 0 Hz to Nyquist, HTK mel scale by default) ->
log(x + 1e-6) -> per-instance standardization to zero mean, unit variance.

The framing pads (window - hop) / 2 samples of zeros on each side, so a
clip whose length is a whole number of hops yields exactly length/hop
frames (2.56 s at 16 kHz -> 256 frames). The FFT length is 1024 rather
than the customary next power of two (512) so that even the narrowest
low-frequency mel triangle covers at least one FFT bin; empty filters
would pin their band to the log floor and break the invariance of the
standardized output under amplitude scaling.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 1024
N_MELS = 128
LOG_FLOOR = 1e-6

_HSPC_MAGIC = b"HSPC"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """Log-mel features, shape (T_a, F) with time on the first axis."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {self.values.shape}")

    @property
    def num_frames(self):
        return self.values.shape[0]

    @property
    def num_bands(self):
        return self.values.shape[1]


def load_wav(path):
    """Strict RIFF/WAVE reader for 16-bit PCM, mono or stereo.

    Stereo is averaged to mono. Anything else (wrong container,
    compression, bit depth, more than two channels, truncation) raises
    FormatError; the sample rate is preserved and checked downstream.
    Unknown chunks are skipped; a missing fmt or data chunk is an error.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise FormatError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise FormatError(f"{path}: fmt chunk too short")
    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise FormatError(f"{path}: compressed WAVE (format tag {audio_format}) not supported")
    if channels not in (1, 2):
        raise FormatError(f"{path}: expected mono or stereo, got {channels} channels")
    if bits != 16:
        raise FormatError(f"{path}: expected 16-bit PCM, got {bits}-bit")
    if len(data) % (2 * channels) != 0:
        raise FormatError(f"{path}: data chunk length not a whole number of frames")
    pcm = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return Waveform(samples=pcm, sample_rate=rate)


def write_wav(path, waveform):
    """16-bit PCM writer, the inverse of load_wav for synth data.

    Accepts a Waveform (mono) or a raw (n,) / (n, 2) array; two columns
    are written as a stereo file.
    """
    if isinstance(waveform, Waveform):
        samples, rate = waveform.samples, waveform.sample_rate
    else:
        samples, rate = np.asarray(waveform, dtype=np.float64), SAMPLE_RATE
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[1] not in (1, 2):
        raise ValueError(f"expected mono or stereo samples, got shape {samples.shape}")
    channels = samples.shape[1]
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")
    data = np.ascontiguousarray(pcm).tobytes()
    block = 2 * channels
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * block, block, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def hz_to_mel(hz, htk=True):
    hz = np.asarray(hz, dtype=np.float64)
    if htk:
        return 2595.0 * np.log10(1.0 + hz / 700.0)
    # Slaney: linear below 1 kHz, logarithmic above.
    f_min, f_sp = 0.0, 200.0 / 3.0
    mel = (hz - f_min) / f_sp
    min_log_hz = 1000.0
    min_log_mel = (min_log_hz - f_min) / f_sp
    logstep = np.log(6.4) / 27.0
    above = hz >= min_log_hz
    mel = np.where(above, min_log_mel + np.log(np.maximum(hz, min_log_hz) / min_log_hz) / logstep, mel)
    return mel


def mel_to_hz(mel, htk=True):
    mel = np.asarray(mel, dtype=np.float64)
    if htk:
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)
    f_min, f_sp = 0.0, 200.0 / 3.0
    hz = f_min + f_sp * mel
    min_log_hz = 1000.0
    min_log_mel = (min_log_hz - f_min) / f_sp
    logstep = np.log(6.4) / 27.0
    above = mel >= min_log_mel
    hz = np.where(above, min_log_hz * np.exp(logstep * (mel - min_log_mel)), hz)
    return hz


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, htk=True):
    """Triangular filters on the mel scale, shape (n_mels, n_fft // 2 + 1).

    Band edges span 0 Hz to Nyquist with n_mels + 2 equally spaced mel
    points; each filter rises and falls linearly in mel space.
    """
    n_bins = n_fft // 2 + 1
    fft_hz = np.arange(n_bins) * (sample_rate / n_fft)
    mel_pts = np.linspace(hz_to_mel(0.0, htk), hz_to_mel(sample_rate / 2.0, htk), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts, htk)
    fb = np.zeros((n_mels, n_bins), dtype=np.float64)
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_hz - lo) / max(ctr - lo, 1e-12)
        down = (hi - fft_hz) / max(hi - ctr, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def hann_window(n):
    """Periodic Hann window: the cosine period equals the window length."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(samples, win_length=WIN_LENGTH, hop_length=HOP_LENGTH):
    """Centered overlapping frames, (win - hop) / 2 zeros padded each side."""
    pad = (win_length - hop_length) // 2
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(pad)])
    if len(padded) < win_length:
        raise DataError(f"signal too short: {len(samples)} samples")
    n_frames = 1 + (len(padded) - win_length) // hop_length
    idx = np.arange(win_length)[None, :] + hop_length * np.arange(n_frames)[:, None]
    return padded[idx]


def fit_length(samples, target_samples):
    """Center-crop long signals, zero-pad short ones, to an exact length."""
    n = len(samples)
    if n == target_samples:
        return samples
    if n > target_samples:
        start = (n - target_samples) // 2
        return samples[start:start + target_samples]
    lead = (target_samples - n) // 2
    out = np.zeros(target_samples, dtype=samples.dtype)
    out[lead:lead + n] = samples
    return out


def log_mel(waveform, n_mels=N_MELS, htk=True, standardize=True, target_frames=None):
    """Full front end: frames -> Hann -> magnitude FFT -> mel -> log -> z-score.

    With `target_frames` set, the signal is first center-cropped or
    zero-padded to exactly target_frames * hop samples so the output frame
    count is exact (256 frames for a 2.56 s clip).
    """
    if waveform.sample_rate != SAMPLE_RATE:
        raise ValueError(
            f"expected {SAMPLE_RATE} Hz input, got {waveform.sample_rate}; no resampling")
    samples = waveform.samples
    if samples.size == 0:
        raise ValueError("empty waveform")
    if target_frames is not None:
        samples = fit_length(samples, target_frames * HOP_LENGTH)
    frames = frame_signal(samples)
    window = hann_window(WIN_LENGTH)
    spectrum = np.fft.rfft(frames * window[None, :], n=N_FFT, axis=1)
    magnitude = np.abs(spectrum)
    fb = mel_filterbank(n_mels=n_mels, htk=htk)
    mel = magnitude @ fb.T
    logmel = np.log(mel + LOG_FLOOR)
    if standardize:
        mu = logmel.mean()
        sigma = logmel.std()
        logmel = (logmel - mu) / max(sigma, 1e-8)
    return Spectrogram(values=logmel)


def write_hspc(path, spec):
    """Spectrogram dump: magic, u32 frames, u32 bands, u32 reserved, f32 data."""
    vals = np.ascontiguousarray(spec.values, dtype="<f4")
    header = _HSPC_MAGIC + struct.pack("<III", vals.shape[0], vals.shape[1], 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(vals.tobytes())


def read_hspc(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != _HSPC_MAGIC:
        raise FormatError(f"{path}: bad spectrogram header")
    t, f, _ = struct.unpack_from("<III", raw, 4)
    need = 16 + 4 * t * f
    if len(raw) < need:
        raise FormatError(f"{path}: truncated spectrogram payload")
    vals = np.frombuffer(raw[16:need], dtype="<f4").reshape(t, f)
    return Spectrogram(values=vals.astype(np.float64))
