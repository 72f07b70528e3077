"""Pre-training objectives: masked reconstruction and cross-modal alignment.

Reconstruction is a per-element mean squared error evaluated only at masked
token positions. Video targets stack two halves per token: appearance (the
raw cube pixels) and motion (the within-cube frame difference, replicated
across the cube's two temporal slots so both halves have equal width).

Alignment is a symmetric InfoNCE over sample-level features (tokens pooled
by global average), with cosine similarity and a fixed temperature,
evaluated at a set of selected encoder depths and summed over them. The
combined objective is reconstruction plus a small multiple of alignment.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embedding import video_to_cubes
from .errors import ConfigError

TEMPERATURE = 0.07
LAMBDA = 0.0025
NORM_FLOOR = 1e-8


@dataclass
class Reconstruction:
    """Full-grid predictions and targets plus the masked index set."""

    predicted: object
    target: np.ndarray
    masked_idx: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target)
        self.masked_idx = np.asarray(self.masked_idx, dtype=np.int64)
        if tuple(self.predicted.shape) != self.target.shape:
            raise ValueError(
                f"prediction shape {self.predicted.shape} does not match "
                f"target shape {self.target.shape}")


def masked_mse(rec):
    """Mean squared error per element, masked rows only."""
    if len(rec.masked_idx) == 0:
        raise ValueError("masked index set is empty")
    pred = T.gather_rows(rec.predicted, rec.masked_idx)
    diff = pred - rec.target[rec.masked_idx]
    return T.tmean(diff * diff)


def mae_loss(rec_audio, rec_video):
    """Returns (combined, audio term, video term)."""
    la = masked_mse(rec_audio)
    lv = masked_mse(rec_video)
    return la + lv, la, lv


def _per_patch_normalize(patches):
    mu = patches.mean(axis=1, keepdims=True)
    sd = patches.std(axis=1, keepdims=True)
    return (patches - mu) / np.maximum(sd, 1e-6)


def audio_target(spec_patches, patch_normalize=False):
    """Target rows for the audio head; optionally z-scored per patch."""
    out = np.asarray(spec_patches, dtype=np.float64)
    if patch_normalize:
        out = _per_patch_normalize(out)
    return out


def frame_diff_target(frames_norm):
    """Motion half of the video target.

    For each two-frame cube the difference (second minus first frame) is
    copied into both temporal slots, then patchified exactly like the
    appearance target, giving the same per-token width.
    """
    t = frames_norm.shape[0]
    if t % 2 != 0:
        raise ValueError(f"need an even frame count, got {t}")
    diff = frames_norm[1::2] - frames_norm[0::2]
    diff_clip = np.repeat(diff, 2, axis=0)
    return video_to_cubes(diff_clip)


def video_target(frames_norm, patch_normalize=False):
    """Appearance and motion halves concatenated per token."""
    appearance = video_to_cubes(frames_norm)
    motion = frame_diff_target(frames_norm)
    if patch_normalize:
        appearance = _per_patch_normalize(appearance)
        motion = _per_patch_normalize(motion)
    return np.concatenate([appearance, motion], axis=1)


def pool_tokens(x):
    """Sample-level feature: global average over token rows, kept 2-D."""
    return T.tmean(x, axis=0, keepdims=True)


def _normalize_rows(x):
    sumsq = T.tsum(x * x, axis=1, keepdims=True)
    # Smooth floor: the norm never drops below NORM_FLOOR, so zero vectors
    # stay finite in both the forward and backward pass.
    return x / T.sqrt(sumsq + NORM_FLOOR * NORM_FLOOR)


def infonce(audio_feats, video_feats, temperature=TEMPERATURE):
    """Symmetric cross-modal InfoNCE on cosine similarities.

    Row i of each side must come from the same clip. Averages the two
    directional cross-entropies; each direction averages over the batch.
    """
    n = audio_feats.shape[0]
    if video_feats.shape[0] != n:
        raise ValueError(
            f"batch sizes differ: {n} audio vs {video_feats.shape[0]} video rows")
    if n < 1:
        raise ValueError("need at least one sample")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    a = _normalize_rows(audio_feats)
    v = _normalize_rows(video_feats)
    logits = (a @ v.transpose(1, 0)) * (1.0 / temperature)
    diag_idx = np.arange(n) * (n + 1)
    ls_rows = T.log_softmax(logits, axis=1).reshape(n * n, 1)
    ls_cols = T.log_softmax(logits, axis=0).reshape(n * n, 1)
    loss_rows = -T.tmean(T.gather_rows(ls_rows, diag_idx))
    loss_cols = -T.tmean(T.gather_rows(ls_cols, diag_idx))
    return (loss_rows + loss_cols) * 0.5


def layer_features(traces, layer):
    """Stack per-sample pooled features of one encoder depth into N rows."""
    pooled = [pool_tokens(tr.layer(layer)) for tr in traces]
    return T.concat(pooled, axis=0)


def hcmcl(audio_traces, video_traces, selected_layers, temperature=TEMPERATURE):
    """Sum of per-depth InfoNCE terms; also returns each term's value.

    `selected_layers` are 1-based encoder depths; an empty selection gives
    a zero loss (the alignment-off ablation).
    """
    if len(audio_traces) != len(video_traces):
        raise ValueError("need the same number of audio and video traces")
    per_layer = {}
    total = None
    for layer in selected_layers:
        for tr in list(audio_traces) + list(video_traces):
            if layer > len(tr):
                raise ConfigError(
                    f"alignment depth {layer} missing from a {len(tr)}-layer trace")
        term = infonce(layer_features(audio_traces, layer),
                       layer_features(video_traces, layer),
                       temperature=temperature)
        per_layer[layer] = term
        total = term if total is None else total + term
    if total is None:
        total = T.Tensor(np.zeros(()))
    return total, per_layer


def total_loss(l_mae, l_hcmcl, weight=LAMBDA):
    if weight < 0:
        raise ValueError(f"contrastive weight must be >= 0, got {weight}")
    return l_mae + l_hcmcl * weight


@dataclass
class PretrainLossReport:
    """Scalar loss tensor plus logged float components."""

    loss: object
    mae_audio: float
    mae_video: float
    contrastive: float
    per_layer: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.loss.item()
