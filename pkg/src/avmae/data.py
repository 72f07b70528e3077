"""Dataset manifest, video containers, clip sampling, and synthetic data.

Manifests are CSV files with the exact header `id,audio,video,label,split`.
Audio paths point at PCM WAV files; video paths point either at a
directory of image frames (sorted by name) or at a packed raw-tensor file
(magic "HVID", u32 frame count, height, width, channels, float32 data in
[0, 1]).

The synthetic generator pairs a class-dependent tone in noise with a
class-dependent moving blob, sharing the latent class so that cross-modal
alignment is learnable. It is byte-deterministic per seed.
"""

import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, HOP_LENGTH, Waveform, load_wav, log_mel, write_wav
from .errors import DataError, FormatError

_HVID_MAGIC = b"HVID"
MANIFEST_HEADER = ["id", "audio", "video", "label", "split"]


@dataclass
class ManifestRow:
    id: str
    audio: str
    video: str
    label: str
    split: str

    def label_as_int(self):
        try:
            return int(self.label)
        except ValueError as exc:
            raise DataError(f"{self.id}: label {self.label!r} is not a class index") from exc

    def label_as_floats(self):
        try:
            return [float(v) for v in self.label.split(";")]
        except ValueError as exc:
            raise DataError(f"{self.id}: label {self.label!r} is not numeric") from exc


class DatasetManifest:
    """Validated list of manifest rows; ids unique, all paths present."""

    def __init__(self, rows):
        self.rows = list(rows)
        seen = set()
        for row in self.rows:
            if row.id in seen:
                raise DataError(f"duplicate clip id {row.id!r}")
            seen.add(row.id)

    @classmethod
    def load(cls, path):
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header != MANIFEST_HEADER:
                    raise DataError(
                        f"{path}: header must be {','.join(MANIFEST_HEADER)}")
                rows = []
                base = os.path.dirname(os.path.abspath(path))
                for line_no, fields in enumerate(reader, start=2):
                    if not fields:
                        continue
                    if len(fields) != 5:
                        raise DataError(f"{path}:{line_no}: expected 5 fields")
                    row = ManifestRow(*[f.strip() for f in fields])
                    # Relative paths resolve against the manifest location.
                    row.audio = os.path.join(base, row.audio)
                    row.video = os.path.join(base, row.video)
                    for p in (row.audio, row.video):
                        if not os.path.exists(p):
                            raise DataError(f"{path}:{line_no}: missing file {p}")
                    rows.append(row)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        return cls(rows)

    def split(self, name):
        return [r for r in self.rows if r.split == name]

    def splits(self):
        return sorted({r.split for r in self.rows})

    def __len__(self):
        return len(self.rows)


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow([row.id, row.audio, row.video, row.label, row.split])


def write_hvid(path, frames):
    """Pack float frames in [0, 1] as little-endian float32."""
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise ValueError(f"expected (T, H, W, C) frames, got shape {frames.shape}")
    t, h, w, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HVID_MAGIC)
        fh.write(struct.pack("<IIII", t, h, w, c))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_hvid(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 20 or raw[:4] != _HVID_MAGIC:
        raise FormatError(f"{path}: not a packed video file")
    t, h, w, c = struct.unpack_from("<IIII", raw, 4)
    need = 20 + 4 * t * h * w * c
    if len(raw) < need:
        raise FormatError(f"{path}: truncated video payload")
    frames = np.frombuffer(raw[20:need], dtype="<f4").reshape(t, h, w, c)
    return frames.astype(np.float64)


def load_video(path):
    """Frames in [0, 1], shape (T, H, W, 3), from a frame dir or packed file."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith((".png", ".jpg", ".jpeg", ".bmp")))
        if not names:
            raise DataError(f"{path}: no image frames found")
        from PIL import Image
        frames = []
        first_size = None
        for name in names:
            with Image.open(os.path.join(path, name)) as img:
                rgb = img.convert("RGB")
                if first_size is None:
                    first_size = rgb.size
                elif rgb.size != first_size:
                    raise DataError(f"{path}: frame {name} size differs")
                frames.append(np.asarray(rgb, dtype=np.float64) / 255.0)
        return np.stack(frames)
    frames = read_hvid(path)
    if frames.shape[-1] != 3:
        raise DataError(f"{path}: expected 3 channels, got {frames.shape[-1]}")
    return frames


def clip_indices(total_frames, n_frames, stride, start):
    """Frame indices of one clip; stride shrinks to fit short videos and the
    final index repeats when even stride 1 runs out of frames."""
    if total_frames < 1:
        raise DataError("video has no frames")
    if n_frames > 1:
        span = stride * (n_frames - 1) + 1
        if span > total_frames:
            stride = max(1, (total_frames - 1) // (n_frames - 1))
    idx = start + stride * np.arange(n_frames)
    return np.minimum(idx, total_frames - 1)


def max_clip_start(total_frames, n_frames, stride):
    if n_frames <= 1:
        return max(total_frames - 1, 0)
    span = stride * (n_frames - 1) + 1
    if span > total_frames:
        stride = max(1, (total_frames - 1) // (n_frames - 1))
        span = stride * (n_frames - 1) + 1
    return max(total_frames - span, 0)


def eval_clip_starts(total_frames, n_frames, stride, n_clips=2):
    """Uniformly spaced clip offsets; a too-short video duplicates offset 0."""
    last = max_clip_start(total_frames, n_frames, stride)
    if n_clips == 1 or last == 0:
        return [0] * n_clips
    return [int(round(i * last / (n_clips - 1))) for i in range(n_clips)]


@dataclass
class LoadedClip:
    """One training sample: video frames in [0,1] plus the log-mel matrix."""

    frames: np.ndarray
    spec: np.ndarray


def load_source(row, model_cfg, mel_htk=True):
    """Read one manifest row in full: every frame plus the log-mel matrix.

    The frame stack is not yet cut down to the model's clip length; callers
    pick temporal crops with `clip_indices`. Spatial geometry and the audio
    sample rate are validated here so bad rows fail once, loudly.
    """
    frames = load_video(row.video)
    if (frames.shape[1] != model_cfg.video_height
            or frames.shape[2] != model_cfg.video_width):
        raise DataError(
            f"{row.id}: frames are {frames.shape[1]}x{frames.shape[2]}, "
            f"model expects {model_cfg.video_height}x{model_cfg.video_width}")
    wave = load_wav(row.audio)
    if wave.sample_rate != SAMPLE_RATE:
        raise DataError(f"{row.id}: sample rate {wave.sample_rate}, expected {SAMPLE_RATE}")
    try:
        spec = log_mel(wave, n_mels=model_cfg.audio_bands, htk=mel_htk,
                       target_frames=model_cfg.audio_frames)
    except ValueError as exc:
        raise DataError(f"{row.id}: {exc}") from exc
    return LoadedClip(frames=frames, spec=spec.values)


def load_sample(row, model_cfg, mel_htk=True, start=0, stride=4):
    """Read one manifest row and cut it to the model's input geometry."""
    src = load_source(row, model_cfg, mel_htk=mel_htk)
    idx = clip_indices(src.frames.shape[0], model_cfg.video_frames, stride, start)
    return LoadedClip(frames=src.frames[idx], spec=src.spec)


def eval_samples(row, model_cfg, mel_htk=True, stride=4, n_clips=2):
    """The uniformly sampled clips used at evaluation time."""
    src = load_source(row, model_cfg, mel_htk=mel_htk)
    starts = eval_clip_starts(src.frames.shape[0], model_cfg.video_frames,
                              stride, n_clips)
    out = []
    for start in starts:
        idx = clip_indices(src.frames.shape[0], model_cfg.video_frames, stride, start)
        out.append(LoadedClip(frames=src.frames[idx], spec=src.spec))
    return out


# ---------------------------------------------------------------------------
# synthetic paired data
# ---------------------------------------------------------------------------

def _blob_frames(rng, label, n_classes, n_frames, height, width):
    """A bright Gaussian blob moving along a class-dependent direction."""
    angle = 2.0 * np.pi * label / max(n_classes, 1)
    dx, dy = np.cos(angle), np.sin(angle)
    cx = width / 2.0 + rng.uniform(-width / 8.0, width / 8.0)
    cy = height / 2.0 + rng.uniform(-height / 8.0, height / 8.0)
    travel = min(height, width) / 3.0
    yy, xx = np.mgrid[0:height, 0:width]
    sigma = min(height, width) / 8.0
    color = 0.5 + 0.5 * rng.random(3)
    frames = np.zeros((n_frames, height, width, 3))
    for t in range(n_frames):
        frac = t / max(n_frames - 1, 1) - 0.5
        px = cx + dx * travel * frac
        py = cy + dy * travel * frac
        blob = np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2.0 * sigma ** 2))
        frames[t] = blob[:, :, None] * color[None, None, :]
    frames += 0.02 * rng.random(frames.shape)
    return np.clip(frames, 0.0, 1.0)


def _tone_wave(rng, label, n_samples):
    """Class tone plus a quieter second harmonic in white noise."""
    freq = 330.0 * (label + 1)
    t = np.arange(n_samples) / SAMPLE_RATE
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 * np.sin(2 * np.pi * freq * t + phase)
    wave += 0.15 * np.sin(2 * np.pi * 2 * freq * t + phase)
    wave += 0.02 * rng.standard_normal(n_samples)
    return np.clip(wave, -1.0, 1.0)


def synth_dataset(out_dir, n_clips, n_classes, seed, model_cfg, splits=None):
    """Write a paired synthetic dataset plus its manifest; returns the manifest.

    `splits` maps split name to clip count; the default puts everything in
    `train`. Labels cycle 0..n_classes-1 so classes stay balanced within 1.
    """
    if n_clips < n_classes:
        raise ValueError("need at least one clip per class")
    os.makedirs(out_dir, exist_ok=True)
    if splits is None:
        splits = {"train": n_clips}
    if sum(splits.values()) != n_clips:
        raise ValueError("split sizes must sum to the clip count")
    split_of = []
    for name, count in splits.items():
        split_of.extend([name] * count)
    n_samples = model_cfg.audio_frames * HOP_LENGTH
    rows = []
    for i in range(n_clips):
        label = i % n_classes
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        frames = _blob_frames(rng, label, n_classes, model_cfg.video_frames,
                              model_cfg.video_height, model_cfg.video_width)
        wave = _tone_wave(rng, label, n_samples)
        vid_path = os.path.join(out_dir, f"clip{i:04d}.hvid")
        wav_path = os.path.join(out_dir, f"clip{i:04d}.wav")
        write_hvid(vid_path, frames)
        write_wav(wav_path, Waveform(samples=wave))
        rows.append(ManifestRow(
            id=f"clip{i:04d}", audio=os.path.basename(wav_path),
            video=os.path.basename(vid_path), label=str(label),
            split=split_of[i]))
    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest_path, rows)
    return manifest_path
