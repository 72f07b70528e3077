"""Token embedding: cube/patch flattening, token counts, positional table."""

import numpy as np
import pytest

from avmae.embedding import (
    AUDIO_PATCH_DIM,
    CUBE_DIM,
    CubeEmbed,
    PatchEmbed,
    TokenGrid,
    VideoClip,
    add_positional,
    normalize_clip,
    sinusoid_table,
    spectrogram_to_patches,
    video_to_cubes,
)
from avmae.layers import ParamFactory
from avmae.tensor import Tensor


class TestVideoClip:
    def test_default_scale_clip_shape(self):
        clip = VideoClip(frames=np.zeros((16, 160, 160, 3)))
        assert clip.shape == (16, 160, 160, 3)

    def test_odd_frame_count_rejected(self):
        with pytest.raises(ValueError):
            VideoClip(frames=np.zeros((15, 32, 32, 3)))

    def test_non_divisible_extent_rejected(self):
        with pytest.raises(ValueError):
            VideoClip(frames=np.zeros((16, 33, 32, 3)))

    def test_wrong_rank_rejected(self):
        with pytest.raises(ValueError):
            VideoClip(frames=np.zeros((16, 32, 32)))


class TestFlattening:
    def test_cube_count_default_scale(self):
        cubes = video_to_cubes(np.zeros((16, 160, 160, 3)))
        assert cubes.shape == (800, CUBE_DIM)

    def test_cube_count_toy_scale(self):
        cubes = video_to_cubes(np.zeros((16, 32, 32, 3)))
        assert cubes.shape == (32, CUBE_DIM)

    def test_cube_layout_is_frame_row_col_channel(self):
        # one cube of distinct values round-trips through a plain reshape
        frames = np.arange(2 * 16 * 16 * 3, dtype=np.float64).reshape(2, 16, 16, 3)
        cubes = video_to_cubes(frames)
        assert cubes.shape == (1, CUBE_DIM)
        np.testing.assert_array_equal(cubes[0], frames.reshape(-1))

    def test_cube_order_is_time_major_then_row_then_col(self):
        # mark each cube with a constant and check the flattening order
        gt, gh, gw = 2, 2, 3
        frames = np.zeros((gt * 2, gh * 16, gw * 16, 3))
        for t in range(gt):
            for r in range(gh):
                for c in range(gw):
                    frames[2 * t:2 * t + 2, 16 * r:16 * r + 16, 16 * c:16 * c + 16, :] = (
                        t * gh * gw + r * gw + c)
        cubes = video_to_cubes(frames)
        np.testing.assert_array_equal(cubes.mean(axis=1), np.arange(gt * gh * gw))

    def test_patch_count_default_scale(self):
        patches = spectrogram_to_patches(np.zeros((256, 128)))
        assert patches.shape == (128, AUDIO_PATCH_DIM)

    def test_patch_count_toy_scale(self):
        patches = spectrogram_to_patches(np.zeros((64, 32)))
        assert patches.shape == (8, AUDIO_PATCH_DIM)

    def test_patch_layout_row_major_within_patch(self):
        spec = np.arange(16 * 16, dtype=np.float64).reshape(16, 16)
        patches = spectrogram_to_patches(spec)
        np.testing.assert_array_equal(patches[0], spec.reshape(-1))


class TestNormalize:
    def test_default_maps_unit_interval_to_symmetric(self):
        clip = VideoClip(frames=np.stack([np.zeros((16, 16, 3)), np.ones((16, 16, 3))]))
        out = normalize_clip(clip)
        assert out.min() == -1.0 and out.max() == 1.0

    def test_per_channel_constants(self):
        clip = VideoClip(frames=np.full((2, 16, 16, 3), 0.5))
        out = normalize_clip(clip, mean=[0.5, 0.25, 0.0], std=[1.0, 0.5, 0.25])
        np.testing.assert_allclose(out[0, 0, 0], [0.0, 0.5, 2.0])


class TestEmbeds:
    def test_video_token_count_default_scale(self, factory):
        emb = CubeEmbed(factory, "v", width=8)
        grid = emb(np.zeros((16, 160, 160, 3)))
        assert grid.num_tokens == 800
        assert grid.grid == (8, 10, 10)
        assert grid.tokens.shape == (800, 8)

    def test_video_token_count_toy_scale(self, factory):
        emb = CubeEmbed(factory, "v", width=8)
        grid = emb(np.zeros((16, 32, 32, 3)))
        assert grid.num_tokens == 32
        assert grid.grid == (8, 2, 2)

    def test_audio_token_count_default_scale(self, factory):
        emb = PatchEmbed(factory, "a", width=8)
        grid = emb(np.zeros((256, 128)))
        assert grid.num_tokens == 128
        assert grid.grid == (16, 8)

    def test_audio_token_count_toy_scale(self, factory):
        emb = PatchEmbed(factory, "a", width=8)
        grid = emb(np.zeros((64, 32)))
        assert grid.num_tokens == 8
        assert grid.grid == (4, 2)

    def test_zero_input_zero_bias_gives_zero_tokens(self, factory):
        emb = CubeEmbed(factory, "v", width=8)
        emb.proj.b.values[:] = 0.0
        grid = emb(np.zeros((4, 16, 16, 3)))
        np.testing.assert_array_equal(grid.tokens.values, 0.0)

    def test_embedding_is_affine(self, factory, rng):
        # embed(a*x) == a*(embed(x) - bias) + bias
        emb = PatchEmbed(factory, "a", width=8)
        x = rng.standard_normal((16, 16))
        bias = emb.proj.b.values
        one = emb(x).tokens.values
        three = emb(3.0 * x).tokens.values
        np.testing.assert_allclose(three, 3.0 * (one - bias) + bias, atol=1e-12)

    def test_non_divisible_video_rejected(self, factory):
        emb = CubeEmbed(factory, "v", width=8)
        with pytest.raises(ValueError):
            emb(np.zeros((16, 24, 32, 3)))

    def test_non_divisible_audio_rejected(self, factory):
        emb = PatchEmbed(factory, "a", width=8)
        with pytest.raises(ValueError):
            emb(np.zeros((60, 32)))


class TestSinusoidTable:
    def test_position_zero_even_channels_are_zero(self):
        table = sinusoid_table(4, 8)
        np.testing.assert_array_equal(table[0, 0::2], 0.0)
        np.testing.assert_array_equal(table[0, 1::2], 1.0)

    def test_closed_form(self):
        table = sinusoid_table(6, 4)
        for p in range(6):
            for i in range(2):
                freq = 10000.0 ** (-2.0 * i / 4.0)
                assert abs(table[p, 2 * i] - np.sin(p * freq)) < 1e-12
                assert abs(table[p, 2 * i + 1] - np.cos(p * freq)) < 1e-12

    def test_identical_across_calls(self):
        a = sinusoid_table(32, 16)
        b = sinusoid_table(32, 16)
        np.testing.assert_array_equal(a, b)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            sinusoid_table(4, 7)


class TestAddPositional:
    def test_is_affine_shift(self, rng):
        tokens = Tensor(rng.standard_normal((8, 6)))
        grid = TokenGrid(tokens=tokens, grid=(4, 2), modality="audio")
        once = add_positional(grid).tokens.values
        twice = add_positional(add_positional(grid)).tokens.values
        table = sinusoid_table(8, 6)
        np.testing.assert_allclose(twice - once, table, atol=1e-12)

    def test_grid_and_modality_preserved(self, rng):
        grid = TokenGrid(tokens=Tensor(rng.standard_normal((8, 6))),
                         grid=(2, 2, 2), modality="video")
        out = add_positional(grid)
        assert out.grid == (2, 2, 2) and out.modality == "video"

    def test_token_grid_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            TokenGrid(tokens=Tensor(np.zeros((7, 4))), grid=(4, 2), modality="audio")
