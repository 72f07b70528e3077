"""Fine-tuning stage: layer-weighted feature fusion, task heads, losses,
and two-clip inference.

The downstream feature concatenates four pooled pieces: the two final
fusion-stream states and, per modality, a simplex-weighted sum of every
encoder layer's pooled output. The weights come from a softmax over
learnable logits, so they stay on the simplex at every step; with the
layer-weighting switch off they collapse to a fixed one-hot on the last
layer. Classification uses cross-entropy, regression a per-dimension mean
squared error. At evaluation time two clips are sampled per video and
their post-softmax scores (raw values for regression) are averaged.
"""

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError
from .layers import Linear
from .objectives import pool_tokens


class Head(Linear):
    """Linear projection from the fused feature to task outputs."""

    def __init__(self, pf, feature_dim, num_outputs):
        super().__init__(pf, "head", feature_dim, num_outputs)


def simplex_weights(logits):
    """Row of layer weights summing to one, shape (1, N_s)."""
    return T.softmax(logits.reshape(1, logits.shape[0]), axis=1)


def fixed_last_layer_weights(depth):
    """One-hot weights on the final layer (layer-weighting ablation)."""
    w = np.zeros((1, depth))
    w[0, depth - 1] = 1.0
    return T.Tensor(w)


def weighted_layer_feature(trace, alpha):
    """Sum over layers of alpha_j times the pooled layer output, (1 x C)."""
    if len(trace) == 0:
        raise ConfigError("encoder trace is empty; depth must be >= 1 to pool features")
    if alpha.shape[1] != len(trace):
        raise ConfigError(
            f"{alpha.shape[1]} layer weights for a {len(trace)}-layer trace")
    pooled = T.concat([pool_tokens(entry) for entry in trace.per_layer], axis=0)
    return alpha @ pooled


def hierarchical_fuse(audio_trace, video_trace, fusion_trace, alpha_audio, alpha_video):
    """Concatenate fused-stream pools with per-modality layer-weighted pools.

    Output is (1 x 4C): audio-reinforced video stream, video-reinforced
    audio stream, weighted audio layers, weighted video layers.
    """
    if len(fusion_trace) == 0:
        raise ConfigError("fusion depth must be >= 1 for audio+video fusion")
    parts = [
        pool_tokens(fusion_trace.a2v[-1]),
        pool_tokens(fusion_trace.v2a[-1]),
        weighted_layer_feature(audio_trace, alpha_audio),
        weighted_layer_feature(video_trace, alpha_video),
    ]
    return T.concat(parts, axis=1)


def classify_loss(logits, target):
    """Cross-entropy of one sample; `target` is a class index."""
    k = logits.size
    target = int(target)
    if not 0 <= target < k:
        raise ValueError(f"class index {target} outside 0..{k - 1}")
    ls = T.log_softmax(logits.reshape(1, k), axis=1)
    picked = T.gather_rows(ls.reshape(k, 1), np.array([target]))
    return -T.tsum(picked)


def regress_loss(pred, target):
    """Mean over dimensions of squared error."""
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.size != target.size:
        raise ValueError(
            f"prediction has {pred.size} dims, target has {target.size}")
    diff = pred.reshape(1, pred.size) - target[None, :]
    return T.tmean(diff * diff)


def batch_task_loss(model, batch, task):
    """Mean per-sample loss; returns (loss tensor, predicted labels/values).

    `batch` rows are (frames01, spec_values, target).
    """
    losses = []
    predictions = []
    for frames01, spec_values, target in batch:
        out = model.predict(frames01, spec_values)
        if task == "classify":
            losses.append(classify_loss(out, target))
            predictions.append(int(np.argmax(out.values)))
        elif task == "regress":
            losses.append(regress_loss(out, target))
            predictions.append(out.values.reshape(-1).copy())
        else:
            raise ConfigError(f"unknown task {task!r}")
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total * (1.0 / len(losses)), predictions


def softmax_scores(values):
    row = np.asarray(values, dtype=np.float64).reshape(1, -1)
    return kernels.softmax_fwd(np.ascontiguousarray(row)).reshape(-1)


def predict_clips(model, clip_pairs, task):
    """Average the scores of several sampled clips (normally two).

    Classification averages post-softmax probabilities; regression averages
    raw outputs. Returns the averaged score vector.
    """
    if not clip_pairs:
        raise ValueError("need at least one sampled clip")
    scores = []
    for frames01, spec_values in clip_pairs:
        out = model.predict(frames01, spec_values).values.reshape(-1)
        scores.append(softmax_scores(out) if task == "classify" else out.copy())
    return np.mean(scores, axis=0)
