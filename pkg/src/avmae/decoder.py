"""Lightweight modality decoders with skip attention from encoder layers.

The decoder is narrower and shallower than the encoder. Visible tokens are
projected to decoder width, scattered back to their pre-masking positions,
padded with a learnable mask token, and given fixed sinusoidal positions.
Decoder layer 1 is a plain transformer layer; deeper layers may first
cross-attend into selected encoder layer outputs (one attention block per
configured connection, applied in configuration order), then run
self-attention and a feed-forward block, all pre-norm residual.

Connections are given as (encoder_layer, decoder_layer) pairs with 1-based
indices; decoder targets must be 2 or deeper. Each connection owns its own
width projection of the encoder source.
"""

from dataclasses import dataclass

from . import tensor as T
from .embedding import sinusoid_table
from .errors import ConfigError
from .layers import FeedForward, LayerNorm, Linear, MultiHeadAttention

DEFAULT_SKIP_MAP = ((4, 2), (7, 3), (10, 4))
AUDIO_TARGET_DIM = 256
VIDEO_TARGET_DIM = 3072  # appearance half then frame-difference half


def parse_skip_map(text):
    """Parse "4:2,7:3,10:4" into ((4, 2), (7, 3), (10, 4))."""
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            enc, dec = part.split(":")
            pairs.append((int(enc), int(dec)))
        except ValueError as exc:
            raise ConfigError(f"bad skip connection {part!r}; expected enc:dec") from exc
    return tuple(pairs)


@dataclass
class DecoderState:
    """Full-length token matrix ready for decoding."""

    tokens: object
    num_tokens: int


class _SkipAttend:
    """One cross-attention block reading a projected encoder layer."""

    def __init__(self, factory, enc_dim, width, heads, name):
        with factory.scope(name):
            self.proj = Linear(factory, "proj", enc_dim, width)
            self.ln_q = LayerNorm(factory, "ln_q", width)
            self.ln_kv = LayerNorm(factory, "ln_kv", width)
            self.cross = MultiHeadAttention(factory, "cross", width, heads)

    def __call__(self, x, source):
        return x + self.cross(self.ln_q(x), self.ln_kv(self.proj(source)))


class _DecoderLayer:
    def __init__(self, factory, enc_dim, width, heads, n_skips, name):
        with factory.scope(name):
            self.skips = [
                _SkipAttend(factory, enc_dim, width, heads, name=f"skip{i + 1}")
                for i in range(n_skips)
            ]
            self.ln_attn = LayerNorm(factory, "ln_attn", width)
            self.self_attn = MultiHeadAttention(factory, "self_attn", width, heads)
            self.ln_ffn = LayerNorm(factory, "ln_ffn", width)
            self.ffn = FeedForward(factory, "ffn", width)

    def __call__(self, x, sources):
        for skip, src in zip(self.skips, sources):
            x = skip(x, src)
        x = x + self.self_attn(self.ln_attn(x))
        x = x + self.ffn(self.ln_ffn(x))
        return x


class Decoder:
    """Mask-token padding, skip-connected decoding, and the output head."""

    def __init__(self, factory, enc_dim, width, depth, heads, modality,
                 skip_map=DEFAULT_SKIP_MAP, name=None):
        if modality == "audio":
            target_dim = AUDIO_TARGET_DIM
        elif modality == "video":
            target_dim = VIDEO_TARGET_DIM
        else:
            raise ValueError(f"unknown modality {modality!r}")
        skip_map = tuple((int(e), int(d)) for e, d in skip_map)
        for enc_layer, dec_layer in skip_map:
            if not 2 <= dec_layer <= depth:
                raise ConfigError(
                    f"skip target layer {dec_layer} must lie in 2..{depth}")
            if enc_layer < 1:
                raise ConfigError(f"skip source layer {enc_layer} must be >= 1")
        self.modality = modality
        self.width = width
        self.depth = depth
        self.skip_map = skip_map
        self.name = name or f"dec_{modality}"
        # Connection order within a layer follows skip_map order.
        per_layer = {k: [] for k in range(1, depth + 1)}
        for enc_layer, dec_layer in skip_map:
            per_layer[dec_layer].append(enc_layer)
        self._sources_by_layer = per_layer
        with factory.scope(self.name):
            self.input_proj = Linear(factory, "input_proj", enc_dim, width)
            self.mask_token = factory.make("mask_token", (width,), init="normal")
            self.layers = [
                _DecoderLayer(factory, enc_dim, width, heads,
                              n_skips=len(per_layer[k]), name=f"layer{k}")
                for k in range(1, depth + 1)
            ]
            self.final_ln = LayerNorm(factory, "final_ln", width)
            self.head = Linear(factory, "head", width, target_dim)

    def pad_and_position(self, fused_visible, plan):
        """Project visible tokens to decoder width, scatter to original slots,
        fill the rest with the mask token, add fixed positions everywhere."""
        n_total = plan.num_tokens
        n_visible = len(plan.visible_idx)
        if fused_visible.shape[0] != n_visible:
            raise ValueError(
                f"got {fused_visible.shape[0]} visible rows, plan expects {n_visible}")
        projected = self.input_proj(fused_visible)
        full = T.scatter_rows(projected, plan.visible_idx, self.mask_token, n_total)
        pos = sinusoid_table(n_total, self.width, dtype=full.values.dtype)
        return DecoderState(tokens=full + pos, num_tokens=n_total)

    def decode(self, state, encoder_trace):
        """Run all decoder layers; skip blocks read the traced encoder layers."""
        for enc_layer, _ in self.skip_map:
            if enc_layer > len(encoder_trace):
                raise ConfigError(
                    f"skip source layer {enc_layer} missing from a "
                    f"{len(encoder_trace)}-layer encoder trace")
        x = state.tokens
        for k, layer in enumerate(self.layers, start=1):
            sources = [encoder_trace.layer(q) for q in self._sources_by_layer[k]]
            x = layer(x, sources)
        return self.final_ln(x)

    def reconstruct(self, decoded):
        """Linear head into target-patch space, one row per token."""
        return self.head(decoded)

    def __call__(self, fused_visible, plan, encoder_trace):
        state = self.pad_and_position(fused_visible, plan)
        return self.reconstruct(self.decode(state, encoder_trace))
