"""Token embedding for video clips and audio spectrograms.

Video is split into 2x16x16 space-time cubes, audio spectrograms into 16x16
patches; each flattens to a vector and passes through a learnable linear map.
Token order is time-major, then row, then column, and the same order indexes
the fixed sinusoidal position table.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear
from .tensor import Tensor

CUBE_FRAMES = 2
PATCH = 16
CUBE_DIM = CUBE_FRAMES * PATCH * PATCH * 3  # 1536
AUDIO_PATCH_DIM = PATCH * PATCH  # 256


@dataclass
class VideoClip:
    """Frames in [0, 1], shape (T, H, W, 3); T even, H and W multiples of 16."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3:
            raise ValueError(f"expected (T, H, W, 3) frames, got {f.shape}")
        t, h, w, _ = f.shape
        if t % CUBE_FRAMES != 0 or h % PATCH != 0 or w % PATCH != 0:
            raise ValueError(
                f"clip extents ({t}, {h}, {w}) must be divisible by ({CUBE_FRAMES}, {PATCH}, {PATCH})")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape


@dataclass
class TokenGrid:
    """Embedded tokens plus spatiotemporal geometry for one modality."""

    tokens: Tensor
    grid: tuple
    modality: str

    def __post_init__(self):
        n = int(np.prod(self.grid))
        if self.tokens.shape[0] != n:
            raise ValueError(f"{self.tokens.shape[0]} tokens but grid {self.grid} implies {n}")

    @property
    def num_tokens(self):
        return self.tokens.shape[0]


def normalize_clip(clip, mean=0.5, std=0.5):
    """Channel standardization of [0,1] pixel values."""
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (3,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (3,))
    return (np.asarray(clip.frames, dtype=np.float64) - mean) / std


def video_to_cubes(frames):
    """Flatten (T, H, W, 3) frames into ((T/2)*(H/16)*(W/16), 1536) cube rows.

    Within a cube values are laid out (frame, row, col, channel), C-order.
    """
    t, h, w, c = frames.shape
    gt, gh, gw = t // CUBE_FRAMES, h // PATCH, w // PATCH
    x = frames.reshape(gt, CUBE_FRAMES, gh, PATCH, gw, PATCH, c)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(x.reshape(gt * gh * gw, CUBE_DIM))


def spectrogram_to_patches(frames):
    """Flatten a (T_a, F) spectrogram into ((T_a/16)*(F/16), 256) patch rows."""
    t, f = frames.shape
    gt, gf = t // PATCH, f // PATCH
    x = frames.reshape(gt, PATCH, gf, PATCH)
    x = x.transpose(0, 2, 1, 3)
    return np.ascontiguousarray(x.reshape(gt * gf, AUDIO_PATCH_DIM))


def sinusoid_table(n_positions, dim, dtype=np.float64):
    """Fixed sin/cos positional table, identical across runs."""
    if dim % 2 != 0:
        raise ValueError("positional dimension must be even")
    positions = np.arange(n_positions, dtype=np.float64)[:, None]
    freqs = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)[None, :]
    table = np.empty((n_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs)
    return table.astype(dtype)


class CubeEmbed:
    """Learnable linear map from 2x16x16x3 video cubes to C-vectors."""

    def __init__(self, pf, name, width):
        self.width = width
        self.proj = Linear(pf, name, CUBE_DIM, width)

    def __call__(self, frames_norm):
        t, h, w, _ = frames_norm.shape
        if t % CUBE_FRAMES != 0 or h % PATCH != 0 or w % PATCH != 0:
            raise ValueError(
                f"clip extents ({t}, {h}, {w}) must be divisible by ({CUBE_FRAMES}, {PATCH}, {PATCH})")
        cubes = video_to_cubes(frames_norm)
        tokens = self.proj(Tensor(cubes.astype(self.proj.w.dtype)))
        grid = (t // CUBE_FRAMES, h // PATCH, w // PATCH)
        return TokenGrid(tokens=tokens, grid=grid, modality="video")


class PatchEmbed:
    """Learnable linear map from 16x16 spectrogram patches to C-vectors."""

    def __init__(self, pf, name, width):
        self.width = width
        self.proj = Linear(pf, name, AUDIO_PATCH_DIM, width)

    def __call__(self, spec_frames):
        t, f = spec_frames.shape
        if t % PATCH != 0 or f % PATCH != 0:
            raise ValueError(f"spectrogram extents ({t}, {f}) must be divisible by {PATCH}")
        patches = spectrogram_to_patches(np.asarray(spec_frames, dtype=np.float64))
        tokens = self.proj(Tensor(patches.astype(self.proj.w.dtype)))
        grid = (t // PATCH, f // PATCH)
        return TokenGrid(tokens=tokens, grid=grid, modality="audio")


def add_positional(grid):
    """Add the fixed sinusoidal table, indexed by flattened grid position."""
    table = sinusoid_table(grid.num_tokens, grid.tokens.shape[1], dtype=grid.tokens.dtype)
    return TokenGrid(tokens=T.add(grid.tokens, table), grid=grid.grid, modality=grid.modality)
