"""Modality-specific transformer encoders and the bidirectional fusion encoder.

Each modality encoder is a stack of pre-norm transformer layers whose
per-layer outputs are all retained, so later stages (decoder skips,
layer-wise contrastive terms, weighted feature fusion) can tap any depth.
A final layer norm is applied to the last entry before features leave the
encoder; intermediate trace entries stay raw.

The fusion encoder runs two parallel token streams, one per modality,
each layer doing cross-attention into the other stream, then
self-attention, then a feed-forward block. The two streams never share
parameters. `flow` picks how the streams read each other:

  default      both streams attend to the other stream's previous-layer state
  raw-input    both streams attend to the other modality's initial tokens
               at every layer
  video-first  within a layer, update the video stream first, then let the
               audio stream attend to the fresh video state
  audio-first  the mirror image
"""

from dataclasses import dataclass

from .layers import CrossModalLayer, LayerNorm, TransformerLayer

FLOW_VARIANTS = ("default", "raw-input", "video-first", "audio-first")


@dataclass
class LayerTrace:
    """Outputs of every encoder layer, index 0 being the first layer."""

    per_layer: list
    modality: str

    def __len__(self):
        return len(self.per_layer)

    def layer(self, j):
        """1-based access: layer(1) is the first layer's output."""
        if not 1 <= j <= len(self.per_layer):
            raise ValueError(f"layer index {j} outside 1..{len(self.per_layer)}")
        return self.per_layer[j - 1]


@dataclass
class FusionTrace:
    """Per-layer states of both fusion streams.

    a2v entries carry video-token rows reinforced from audio; v2a entries
    carry audio-token rows reinforced from video.
    """

    a2v: list
    v2a: list
    flow: str

    def __len__(self):
        return len(self.a2v)


class ModalityEncoder:
    """Transformer stack for one modality, tracing all layer outputs."""

    def __init__(self, factory, dim, depth, heads, modality, name=None):
        self.dim = dim
        self.depth = depth
        self.modality = modality
        self.name = name or f"enc_{modality}"
        with factory.scope(self.name):
            self.layers = [
                TransformerLayer(factory, f"layer{j + 1}", dim, heads)
                for j in range(depth)
            ]
            self.final_ln = LayerNorm(factory, "final_ln", dim)

    def __call__(self, x):
        """Returns (final output, LayerTrace).

        The final output is layer-normalized; with depth 0 the input passes
        through untouched and the trace is empty.
        """
        entries = []
        for layer in self.layers:
            x = layer(x)
            entries.append(x)
        trace = LayerTrace(per_layer=entries, modality=self.modality)
        if not self.layers:
            return x, trace
        return self.final_ln(x), trace


class FusionEncoder:
    """Bidirectional cross-modal stack over the two encoder outputs."""

    def __init__(self, factory, dim, depth, heads, name="fusion"):
        self.dim = dim
        self.depth = depth
        self.name = name
        with factory.scope(name):
            self.a2v_layers = [
                CrossModalLayer(factory, f"a2v{j + 1}", dim, heads)
                for j in range(depth)
            ]
            self.v2a_layers = [
                CrossModalLayer(factory, f"v2a{j + 1}", dim, heads)
                for j in range(depth)
            ]

    def __call__(self, audio_out, video_out, flow="default"):
        if flow not in FLOW_VARIANTS:
            raise ValueError(f"unknown fusion flow {flow!r}; pick one of {FLOW_VARIANTS}")
        a2v = video_out
        v2a = audio_out
        a2v_entries, v2a_entries = [], []
        for j in range(self.depth):
            if flow == "default":
                nxt_a2v = self.a2v_layers[j](a2v, v2a)
                nxt_v2a = self.v2a_layers[j](v2a, a2v)
                a2v, v2a = nxt_a2v, nxt_v2a
            elif flow == "raw-input":
                a2v = self.a2v_layers[j](a2v, audio_out)
                v2a = self.v2a_layers[j](v2a, video_out)
            elif flow == "video-first":
                a2v = self.a2v_layers[j](a2v, v2a)
                v2a = self.v2a_layers[j](v2a, a2v)
            else:
                v2a = self.v2a_layers[j](v2a, a2v)
                a2v = self.a2v_layers[j](a2v, v2a)
            a2v_entries.append(a2v)
            v2a_entries.append(v2a)
        return FusionTrace(a2v=a2v_entries, v2a=v2a_entries, flow=flow)
