"""Manifest parsing, packed video files, clip sampling, synthetic data."""

import os

import numpy as np
import pytest

from avmae.audio import SAMPLE_RATE, Waveform, write_wav
from avmae.data import (
    DatasetManifest,
    ManifestRow,
    clip_indices,
    eval_clip_starts,
    eval_samples,
    load_sample,
    load_source,
    load_video,
    max_clip_start,
    read_hvid,
    synth_dataset,
    write_hvid,
    write_manifest,
)
from avmae.errors import DataError, FormatError
from avmae.models import get_config


def write_pair(tmp_path, stem="c0", n_frames=16, height=32, width=32,
               n_samples=64 * 160):
    rng = np.random.default_rng(0)
    vid = tmp_path / f"{stem}.hvid"
    wav = tmp_path / f"{stem}.wav"
    write_hvid(vid, rng.random((n_frames, height, width, 3)))
    write_wav(wav, Waveform(samples=0.1 * rng.standard_normal(n_samples)))
    return vid, wav


class TestManifest:
    def test_round_trip(self, tmp_path):
        vid, wav = write_pair(tmp_path)
        rows = [ManifestRow("c0", wav.name, vid.name, "1", "train")]
        path = tmp_path / "manifest.csv"
        write_manifest(path, rows)
        manifest = DatasetManifest.load(path)
        assert len(manifest) == 1
        row = manifest.rows[0]
        assert row.id == "c0" and row.split == "train"
        # relative paths resolve against the manifest directory
        assert os.path.isabs(row.audio) and os.path.exists(row.audio)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("clip,audio,video,label,split\n")
        with pytest.raises(DataError):
            DatasetManifest.load(path)

    def test_wrong_field_count_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("id,audio,video,label,split\nc0,a.wav,v.hvid,1\n")
        with pytest.raises(DataError):
            DatasetManifest.load(path)

    def test_missing_file_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("id,audio,video,label,split\nc0,a.wav,v.hvid,1,train\n")
        with pytest.raises(DataError):
            DatasetManifest.load(path)

    def test_duplicate_id_rejected(self, tmp_path):
        vid, wav = write_pair(tmp_path)
        rows = [ManifestRow("c0", wav.name, vid.name, "1", "train"),
                ManifestRow("c0", wav.name, vid.name, "0", "test")]
        path = tmp_path / "manifest.csv"
        write_manifest(path, rows)
        with pytest.raises(DataError):
            DatasetManifest.load(path)

    def test_split_selection(self, tmp_path):
        vid, wav = write_pair(tmp_path)
        rows = [ManifestRow(f"c{i}", wav.name, vid.name, "0",
                            "train" if i < 2 else "test") for i in range(3)]
        path = tmp_path / "manifest.csv"
        write_manifest(path, rows)
        manifest = DatasetManifest.load(path)
        assert len(manifest.split("train")) == 2
        assert len(manifest.split("test")) == 1
        assert manifest.splits() == ["test", "train"]

    def test_label_coercion(self):
        row = ManifestRow("c", "a", "v", "3", "train")
        assert row.label_as_int() == 3
        row2 = ManifestRow("c", "a", "v", "0.5;-0.25", "train")
        assert row2.label_as_floats() == [0.5, -0.25]
        with pytest.raises(DataError):
            ManifestRow("c", "a", "v", "happy", "train").label_as_int()


class TestHvid:
    def test_round_trip(self, tmp_path, rng):
        frames = rng.random((4, 16, 16, 3))
        path = tmp_path / "v.hvid"
        write_hvid(path, frames)
        back = read_hvid(path)
        np.testing.assert_allclose(back, frames, atol=1e-7)
        assert back.dtype == np.float64

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "v.hvid"
        path.write_bytes(b"JUNKjunkjunkjunkjunkjunk")
        with pytest.raises(FormatError):
            read_hvid(path)

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "v.hvid"
        write_hvid(path, rng.random((4, 16, 16, 3)))
        path.write_bytes(path.read_bytes()[:-40])
        with pytest.raises(FormatError):
            read_hvid(path)

    def test_wrong_rank_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_hvid(tmp_path / "v.hvid", np.zeros((16, 16, 3)))

    def test_load_video_requires_three_channels(self, tmp_path, rng):
        path = tmp_path / "v.hvid"
        write_hvid(path, rng.random((2, 16, 16, 1)))
        with pytest.raises(DataError):
            load_video(path)


class TestFrameDir:
    def test_frames_sorted_by_name(self, tmp_path):
        from PIL import Image
        d = tmp_path / "frames"
        d.mkdir()
        for i, value in [(1, 100), (0, 0), (2, 200)]:
            arr = np.full((16, 16, 3), value, dtype=np.uint8)
            Image.fromarray(arr).save(d / f"f{i}.png")
        frames = load_video(d)
        assert frames.shape == (3, 16, 16, 3)
        np.testing.assert_allclose(frames[:, 0, 0, 0], [0.0, 100 / 255, 200 / 255],
                                   atol=1e-9)

    def test_empty_dir_rejected(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        with pytest.raises(DataError):
            load_video(d)

    def test_mixed_sizes_rejected(self, tmp_path):
        from PIL import Image
        d = tmp_path / "frames"
        d.mkdir()
        Image.fromarray(np.zeros((16, 16, 3), dtype=np.uint8)).save(d / "a.png")
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / "b.png")
        with pytest.raises(DataError):
            load_video(d)


class TestClipSampling:
    def test_plain_strided_window(self):
        idx = clip_indices(total_frames=100, n_frames=16, stride=4, start=10)
        np.testing.assert_array_equal(idx, 10 + 4 * np.arange(16))

    def test_short_video_shrinks_stride(self):
        idx = clip_indices(total_frames=20, n_frames=16, stride=4, start=0)
        assert len(idx) == 16
        assert idx.max() <= 19
        np.testing.assert_array_equal(idx, np.arange(16))

    def test_very_short_video_repeats_last_frame(self):
        idx = clip_indices(total_frames=5, n_frames=16, stride=4, start=0)
        assert len(idx) == 16
        np.testing.assert_array_equal(idx[4:], 4)

    def test_no_frames_rejected(self):
        with pytest.raises(DataError):
            clip_indices(total_frames=0, n_frames=16, stride=4, start=0)

    def test_max_start_covers_span(self):
        assert max_clip_start(100, 16, 4) == 100 - (4 * 15 + 1)
        assert max_clip_start(61, 16, 4) == 0
        assert max_clip_start(5, 1, 4) == 4

    def test_eval_starts_uniform(self):
        starts = eval_clip_starts(100, 16, 4, n_clips=2)
        assert starts == [0, 39]
        assert eval_clip_starts(100, 16, 4, n_clips=3) == [0, 20, 39]

    def test_eval_starts_duplicate_for_short_video(self):
        # 20 frames: stride shrinks to 1, leaving room for two distinct starts.
        assert eval_clip_starts(20, 16, 4, n_clips=2) == [0, 4]
        # 10 frames: even stride 1 overruns, so every start clamps to zero.
        assert eval_clip_starts(10, 16, 4, n_clips=2) == [0, 0]


class TestLoaders:
    def test_load_sample_geometry(self, tmp_path):
        cfg = get_config("micro")
        vid, wav = write_pair(tmp_path)
        row = ManifestRow("c0", str(wav), str(vid), "0", "train")
        clip = load_sample(row, cfg)
        assert clip.frames.shape == (16, 32, 32, 3)
        assert clip.spec.shape == (64, 32)

    def test_wrong_video_size_rejected(self, tmp_path):
        cfg = get_config("micro")
        vid, wav = write_pair(tmp_path, height=16, width=16)
        row = ManifestRow("c0", str(wav), str(vid), "0", "train")
        with pytest.raises(DataError):
            load_source(row, cfg)

    def test_wrong_sample_rate_rejected(self, tmp_path):
        cfg = get_config("micro")
        vid, _ = write_pair(tmp_path)
        wav = tmp_path / "bad.wav"
        write_wav(wav, Waveform(samples=np.zeros(8000), sample_rate=8000))
        row = ManifestRow("c0", str(wav), str(vid), "0", "train")
        with pytest.raises(DataError):
            load_source(row, cfg)

    def test_eval_samples_share_audio(self, tmp_path):
        cfg = get_config("micro")
        vid, wav = write_pair(tmp_path, n_frames=100)
        row = ManifestRow("c0", str(wav), str(vid), "0", "train")
        clips = eval_samples(row, cfg, n_clips=2)
        assert len(clips) == 2
        np.testing.assert_array_equal(clips[0].spec, clips[1].spec)
        assert not np.array_equal(clips[0].frames, clips[1].frames)


class TestSynthDataset:
    def test_deterministic_bytes(self, tmp_path):
        cfg = get_config("micro")
        d1, d2 = tmp_path / "a", tmp_path / "b"
        synth_dataset(d1, n_clips=4, n_classes=2, seed=7, model_cfg=cfg)
        synth_dataset(d2, n_clips=4, n_classes=2, seed=7, model_cfg=cfg)
        for name in sorted(os.listdir(d1)):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_seed_changes_bytes(self, tmp_path):
        cfg = get_config("micro")
        d1, d2 = tmp_path / "a", tmp_path / "b"
        synth_dataset(d1, n_clips=2, n_classes=2, seed=7, model_cfg=cfg)
        synth_dataset(d2, n_clips=2, n_classes=2, seed=8, model_cfg=cfg)
        assert (d1 / "clip0000.wav").read_bytes() != (d2 / "clip0000.wav").read_bytes()

    def test_labels_balanced(self, tmp_path):
        cfg = get_config("micro")
        path = synth_dataset(tmp_path / "d", n_clips=7, n_classes=3, seed=1,
                             model_cfg=cfg)
        manifest = DatasetManifest.load(path)
        counts = np.bincount([r.label_as_int() for r in manifest.rows])
        assert counts.max() - counts.min() <= 1

    def test_classes_separate_in_spectrogram_space(self, tmp_path):
        cfg = get_config("micro")
        path = synth_dataset(tmp_path / "d", n_clips=8, n_classes=2, seed=3,
                             model_cfg=cfg)
        manifest = DatasetManifest.load(path)
        means = {}
        spread = []
        for label in (0, 1):
            rows = [r for r in manifest.rows if r.label_as_int() == label]
            specs = [load_source(r, cfg).spec for r in rows]
            means[label] = np.mean(specs, axis=0)
            spread.append(np.mean([np.abs(s - means[label]).mean() for s in specs]))
        between = np.abs(means[0] - means[1]).mean()
        assert between > 4 * max(spread)

    def test_split_assignment(self, tmp_path):
        cfg = get_config("micro")
        path = synth_dataset(tmp_path / "d", n_clips=6, n_classes=2, seed=1,
                             model_cfg=cfg, splits={"train": 4, "test": 2})
        manifest = DatasetManifest.load(path)
        assert len(manifest.split("train")) == 4
        assert len(manifest.split("test")) == 2

    def test_bad_split_sum_rejected(self, tmp_path):
        cfg = get_config("micro")
        with pytest.raises(ValueError):
            synth_dataset(tmp_path / "d", n_clips=6, n_classes=2, seed=1,
                          model_cfg=cfg, splits={"train": 5})

    def test_fewer_clips_than_classes_rejected(self, tmp_path):
        cfg = get_config("micro")
        with pytest.raises(ValueError):
            synth_dataset(tmp_path / "d", n_clips=1, n_classes=2, seed=1,
                          model_cfg=cfg)
