import numpy as np
import pytest

from avmae.layers import ParamFactory


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def factory():
    # double precision so gradient checks are meaningful
    return ParamFactory(rng=np.random.default_rng(0), dtype=np.float64)


@pytest.fixture
def micro_cfg():
    from avmae.models import get_config
    return get_config("micro")


def make_micro_batch(cfg, n=2, seed=1):
    """Random frames/spectrograms plus per-sample mask plans."""
    from avmae.masking import random_mask, tube_mask
    data = np.random.default_rng(seed)
    batch = []
    for i in range(n):
        frames = data.random((cfg.video_frames, cfg.video_height,
                              cfg.video_width, 3))
        spec = data.standard_normal((cfg.audio_frames, cfg.audio_bands))
        plan_v = tube_mask(cfg.video_grid, cfg.mask_ratio_video, seed=seed + 7 * i)
        plan_a = random_mask(cfg.audio_grid, cfg.mask_ratio_audio, seed=seed + 11 * i)
        batch.append((frames, spec, plan_v, plan_a))
    return batch
