"""Deterministic token masking: tube masking for video, random for audio.

Masked counts follow a floor rule, floor(ratio * N) for random masking and
(T' * floor(ratio * S)) for tube masking over S spatial cells. Per-sample
seeds are derived from (global_seed, epoch, sample_index) so masks do not
depend on data order.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .embedding import TokenGrid


@dataclass
class MaskPlan:
    """Disjoint visible/masked index partition of one token grid."""

    visible_idx: np.ndarray
    masked_idx: np.ndarray
    ratio: float
    seed: int
    grid: tuple

    def __post_init__(self):
        self.visible_idx = np.asarray(self.visible_idx, dtype=np.int64)
        self.masked_idx = np.asarray(self.masked_idx, dtype=np.int64)

    @property
    def num_tokens(self):
        return int(np.prod(self.grid))

    def to_dict(self):
        return {
            "visible_idx": self.visible_idx.tolist(),
            "masked_idx": self.masked_idx.tolist(),
            "ratio": self.ratio,
            "seed": self.seed,
            "grid": list(self.grid),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            visible_idx=np.asarray(d["visible_idx"], dtype=np.int64),
            masked_idx=np.asarray(d["masked_idx"], dtype=np.int64),
            ratio=float(d["ratio"]),
            seed=int(d["seed"]),
            grid=tuple(d["grid"]),
        )


def _check_ratio(ratio):
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")


def tube_mask(grid, ratio=0.9, seed=0):
    """One spatial mask pattern replicated across every temporal slice.

    `grid` is (T', S_h, S_w); floor(ratio * S_h*S_w) spatial cells are drawn
    uniformly without replacement and masked in all T' slices.
    """
    _check_ratio(ratio)
    if len(grid) != 3:
        raise ValueError(f"tube masking needs a (T', S_h, S_w) grid, got {grid}")
    t_slices, s_h, s_w = grid
    spatial = s_h * s_w
    n_masked_spatial = int(np.floor(ratio * spatial))
    rng = np.random.default_rng(seed)
    pattern = rng.choice(spatial, size=n_masked_spatial, replace=False)
    masked = (np.arange(t_slices)[:, None] * spatial + pattern[None, :]).reshape(-1)
    masked = np.sort(masked)
    keep = np.ones(t_slices * spatial, dtype=bool)
    keep[masked] = False
    return MaskPlan(
        visible_idx=np.flatnonzero(keep),
        masked_idx=masked,
        ratio=ratio,
        seed=seed,
        grid=tuple(grid),
    )


def random_mask(grid, ratio=0.8, seed=0):
    """floor(ratio * N) indices drawn uniformly without replacement."""
    _check_ratio(ratio)
    n = int(np.prod(grid))
    n_masked = int(np.floor(ratio * n))
    rng = np.random.default_rng(seed)
    masked = np.sort(rng.choice(n, size=n_masked, replace=False))
    keep = np.ones(n, dtype=bool)
    keep[masked] = False
    return MaskPlan(
        visible_idx=np.flatnonzero(keep),
        masked_idx=masked,
        ratio=ratio,
        seed=seed,
        grid=tuple(grid),
    )


def gather_visible(token_grid, plan):
    """Rows of the token grid at visible indices, in ascending index order."""
    if tuple(plan.grid) != tuple(token_grid.grid):
        raise ValueError(f"plan grid {plan.grid} does not match token grid {token_grid.grid}")
    tokens = T.gather_rows(token_grid.tokens, plan.visible_idx)
    return TokenGrid(tokens=tokens, grid=(len(plan.visible_idx),), modality=token_grid.modality)


def sample_seed(global_seed, epoch, sample_index, domain=2):
    """Deterministic per-sample seed; mixing via numpy SeedSequence."""
    ss = np.random.SeedSequence([int(global_seed), int(domain), int(epoch), int(sample_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)
