"""Model assembly: architecture presets, the pre-training model, and the
fine-tuning model.

Sizes map width to 256 (tiny), 384 (small), and 512 (base); `micro` is a
test-scale preset small enough for CI and gradient checking. Encoder heads
are width/64; the decoder runs at half width. The skip map wires encoder
layers into decoder layers, and the same encoder depths (`align_layers`)
feed the layer-wise contrastive loss. The architecture switches mirror the
three ablations: `use_skips` (decoder skip attention), `use_hff` (learnable
layer weighting at fine-tune time), and the loss-side switch lives in
`align_layers` being empty.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .decoder import DEFAULT_SKIP_MAP, Decoder
from .embedding import (CubeEmbed, PatchEmbed, VideoClip, add_positional,
                        normalize_clip, spectrogram_to_patches)
from .encoders import FLOW_VARIANTS, FusionEncoder, ModalityEncoder
from .errors import ConfigError
from .layers import ParamFactory
from .masking import gather_visible
from .objectives import (LAMBDA, TEMPERATURE, PretrainLossReport,
                         Reconstruction, audio_target, hcmcl, mae_loss,
                         video_target)

MODALITY_SETS = ("audio+video", "audio", "video")


@dataclass
class ModelConfig:
    """Architecture plus objective knobs; geometry is per-clip."""

    name: str = "micro"
    dim: int = 64
    enc_depth: int = 4
    fusion_depth: int = 1
    dec_depth: int = 2
    skip_map: tuple = ((2, 2), (4, 2))
    align_layers: tuple = (2, 4)
    video_frames: int = 16
    video_height: int = 32
    video_width: int = 32
    audio_frames: int = 64
    audio_bands: int = 32
    mask_ratio_video: float = 0.9
    mask_ratio_audio: float = 0.8
    temperature: float = TEMPERATURE
    loss_weight: float = LAMBDA
    fusion_flow: str = "default"
    use_skips: bool = True
    use_hff: bool = True
    patch_normalize: bool = False
    pixel_mean: float = 0.5
    pixel_std: float = 0.5

    def __post_init__(self):
        self.skip_map = tuple((int(e), int(d)) for e, d in self.skip_map)
        self.align_layers = tuple(int(j) for j in self.align_layers)
        if self.dim % self.heads != 0:
            raise ConfigError(f"width {self.dim} not divisible by {self.heads} heads")
        sources = [e for e, _ in self.skip_map] + list(self.align_layers)
        if sources and max(sources) > self.enc_depth:
            raise ConfigError(
                f"encoder depth {self.enc_depth} shallower than selected layer {max(sources)}")
        for _, dec_layer in self.skip_map:
            if not 2 <= dec_layer <= self.dec_depth:
                raise ConfigError(
                    f"skip target layer {dec_layer} outside 2..{self.dec_depth}")
        if self.fusion_flow not in FLOW_VARIANTS:
            raise ConfigError(f"unknown fusion flow {self.fusion_flow!r}")
        if not 0.0 <= self.mask_ratio_video < 1.0 or not 0.0 <= self.mask_ratio_audio < 1.0:
            raise ConfigError("mask ratios must lie in [0, 1)")
        if self.loss_weight < 0:
            raise ConfigError("contrastive weight must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.video_frames % 2 or self.video_height % 16 or self.video_width % 16:
            raise ConfigError("video extents must be divisible by (2, 16, 16)")
        if self.audio_frames % 16 or self.audio_bands % 16:
            raise ConfigError("audio extents must be divisible by 16")

    @property
    def heads(self):
        return max(self.dim // 64, 1)

    @property
    def dec_width(self):
        return self.dim // 2

    @property
    def dec_heads(self):
        return max(self.dec_width // 64, 2)

    @property
    def video_grid(self):
        return (self.video_frames // 2, self.video_height // 16, self.video_width // 16)

    @property
    def audio_grid(self):
        return (self.audio_frames // 16, self.audio_bands // 16)

    @property
    def effective_skip_map(self):
        return self.skip_map if self.use_skips else ()

    def to_dict(self):
        return asdict(self)


_FULL_GEOMETRY = dict(
    enc_depth=10, fusion_depth=2, dec_depth=4,
    skip_map=DEFAULT_SKIP_MAP, align_layers=(4, 7, 10),
    video_frames=16, video_height=160, video_width=160,
    audio_frames=256, audio_bands=128,
)

PRESETS = {
    "micro": dict(name="micro", dim=64, enc_depth=4, fusion_depth=1, dec_depth=2,
                  skip_map=((2, 2), (4, 2)), align_layers=(2, 4),
                  video_frames=16, video_height=32, video_width=32,
                  audio_frames=64, audio_bands=32),
    "tiny": dict(name="tiny", dim=256, **_FULL_GEOMETRY),
    "small": dict(name="small", dim=384, **_FULL_GEOMETRY),
    "base": dict(name="base", dim=512, **_FULL_GEOMETRY),
}


def get_config(size="micro", **overrides):
    if size not in PRESETS:
        raise ConfigError(f"unknown model size {size!r}; pick one of {sorted(PRESETS)}")
    merged = dict(PRESETS[size])
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**merged)


def config_from_dict(d):
    return ModelConfig(**{k: tuple(map(tuple, v)) if k == "skip_map" else
                          tuple(v) if k == "align_layers" else v
                          for k, v in d.items()})


@dataclass
class SampleOutputs:
    """Everything one pre-training forward produces for one clip pair."""

    rec_video: Reconstruction
    rec_audio: Reconstruction
    trace_video: object
    trace_audio: object
    fusion: object


class PretrainModel:
    """Masked reconstruction model: embed, mask, encode, fuse, decode."""

    def __init__(self, cfg, rng=None, dtype=np.float64):
        self.cfg = cfg
        self.factory = ParamFactory(rng, dtype)
        pf = self.factory
        self.embed_video = CubeEmbed(pf, "embed_video", cfg.dim)
        self.embed_audio = PatchEmbed(pf, "embed_audio", cfg.dim)
        self.enc_video = ModalityEncoder(pf, cfg.dim, cfg.enc_depth, cfg.heads, "video")
        self.enc_audio = ModalityEncoder(pf, cfg.dim, cfg.enc_depth, cfg.heads, "audio")
        self.fusion = FusionEncoder(pf, cfg.dim, cfg.fusion_depth, cfg.heads)
        self.dec_video = Decoder(pf, cfg.dim, cfg.dec_width, cfg.dec_depth,
                                 cfg.dec_heads, "video", cfg.effective_skip_map)
        self.dec_audio = Decoder(pf, cfg.dim, cfg.dec_width, cfg.dec_depth,
                                 cfg.dec_heads, "audio", cfg.effective_skip_map)

    @property
    def params(self):
        return self.factory.params

    def param_count(self):
        return self.factory.count()

    def forward_sample(self, frames01, spec_values, plan_video, plan_audio):
        cfg = self.cfg
        frames_norm = normalize_clip(VideoClip(frames01), cfg.pixel_mean, cfg.pixel_std)
        vtok = add_positional(self.embed_video(frames_norm))
        atok = add_positional(self.embed_audio(spec_values))
        vis_v = gather_visible(vtok, plan_video)
        vis_a = gather_visible(atok, plan_audio)
        out_v, trace_v = self.enc_video(vis_v.tokens)
        out_a, trace_a = self.enc_audio(vis_a.tokens)
        if self.fusion.depth > 0:
            ftr = self.fusion(out_a, out_v, flow=cfg.fusion_flow)
            fused_v, fused_a = ftr.a2v[-1], ftr.v2a[-1]
        else:
            from .encoders import FusionTrace
            ftr = FusionTrace(a2v=[], v2a=[], flow=cfg.fusion_flow)
            fused_v, fused_a = out_v, out_a
        pred_v = self.dec_video(fused_v, plan_video, trace_v)
        pred_a = self.dec_audio(fused_a, plan_audio, trace_a)
        tgt_v = video_target(frames_norm, cfg.patch_normalize)
        tgt_a = audio_target(spectrogram_to_patches(np.asarray(spec_values, dtype=np.float64)),
                             cfg.patch_normalize)
        return SampleOutputs(
            rec_video=Reconstruction(pred_v, tgt_v, plan_video.masked_idx),
            rec_audio=Reconstruction(pred_a, tgt_a, plan_audio.masked_idx),
            trace_video=trace_v, trace_audio=trace_a, fusion=ftr)

    def loss_batch(self, samples, use_contrastive=True):
        """Combined loss over a batch of (frames01, spec, plan_v, plan_a).

        Reconstruction terms are batch means; the alignment term is one
        InfoNCE over the batch per selected depth, summed over depths, and
        always evaluated (and logged) even when its weight is zero, unless
        `use_contrastive` is off.
        """
        cfg = self.cfg
        outs = [self.forward_sample(*s) for s in samples]
        inv_b = 1.0 / len(outs)
        mae_a = mae_v = None
        for out in outs:
            _, la, lv = mae_loss(out.rec_audio, out.rec_video)
            mae_a = la if mae_a is None else mae_a + la
            mae_v = lv if mae_v is None else mae_v + lv
        mae_a = mae_a * inv_b
        mae_v = mae_v * inv_b
        layers = cfg.align_layers if use_contrastive else ()
        contrastive, per_layer = hcmcl(
            [o.trace_audio for o in outs], [o.trace_video for o in outs],
            layers, temperature=cfg.temperature)
        total = mae_a + mae_v + contrastive * cfg.loss_weight
        return PretrainLossReport(
            loss=total,
            mae_audio=mae_a.item(), mae_video=mae_v.item(),
            contrastive=contrastive.item(),
            per_layer={j: t.item() for j, t in per_layer.items()})


class FineTuneModel:
    """Encoders plus fusion, layer-weighted pooling, and a task head."""

    def __init__(self, cfg, num_outputs, modalities="audio+video",
                 rng=None, dtype=np.float64):
        if modalities not in MODALITY_SETS:
            raise ConfigError(
                f"unknown modality set {modalities!r}; pick one of {MODALITY_SETS}")
        if num_outputs < 1:
            raise ConfigError("need at least one output")
        self.cfg = cfg
        self.modalities = modalities
        self.num_outputs = num_outputs
        self.factory = ParamFactory(rng, dtype)
        pf = self.factory
        self.has_audio = modalities in ("audio+video", "audio")
        self.has_video = modalities in ("audio+video", "video")
        both = self.has_audio and self.has_video
        if self.has_video:
            self.embed_video = CubeEmbed(pf, "embed_video", cfg.dim)
            self.enc_video = ModalityEncoder(pf, cfg.dim, cfg.enc_depth, cfg.heads, "video")
        if self.has_audio:
            self.embed_audio = PatchEmbed(pf, "embed_audio", cfg.dim)
            self.enc_audio = ModalityEncoder(pf, cfg.dim, cfg.enc_depth, cfg.heads, "audio")
        self.fusion = FusionEncoder(pf, cfg.dim, cfg.fusion_depth, cfg.heads) if both else None
        if cfg.use_hff:
            # Zero logits start the layer weights uniform on the simplex.
            if self.has_audio:
                self.logits_audio = pf.make("hff.logits_audio", (cfg.enc_depth,), init="zeros")
            if self.has_video:
                self.logits_video = pf.make("hff.logits_video", (cfg.enc_depth,), init="zeros")
        from .finetune import Head
        self.feature_dim = 4 * cfg.dim if both else cfg.dim
        self.head = Head(pf, self.feature_dim, num_outputs)

    @property
    def params(self):
        return self.factory.params

    def param_count(self):
        return self.factory.count()

    def _alpha(self, modality):
        from .finetune import fixed_last_layer_weights, simplex_weights
        if self.cfg.use_hff:
            logits = self.logits_audio if modality == "audio" else self.logits_video
            return simplex_weights(logits)
        return fixed_last_layer_weights(self.cfg.enc_depth)

    def features(self, frames01=None, spec_values=None):
        """Sample-level feature row (1 x feature_dim); inputs run unmasked."""
        from .finetune import hierarchical_fuse, weighted_layer_feature
        cfg = self.cfg
        out_v = trace_v = out_a = trace_a = None
        if self.has_video:
            if frames01 is None:
                raise ValueError("video frames required for this modality set")
            frames_norm = normalize_clip(VideoClip(frames01), cfg.pixel_mean, cfg.pixel_std)
            vtok = add_positional(self.embed_video(frames_norm))
            out_v, trace_v = self.enc_video(vtok.tokens)
        if self.has_audio:
            if spec_values is None:
                raise ValueError("a spectrogram is required for this modality set")
            atok = add_positional(self.embed_audio(spec_values))
            out_a, trace_a = self.enc_audio(atok.tokens)
        if self.fusion is not None:
            ftr = self.fusion(out_a, out_v, flow=cfg.fusion_flow)
            return hierarchical_fuse(trace_a, trace_v, ftr,
                                     self._alpha("audio"), self._alpha("video"))
        trace = trace_a if self.has_audio else trace_v
        modality = "audio" if self.has_audio else "video"
        return weighted_layer_feature(trace, self._alpha(modality))

    def predict(self, frames01=None, spec_values=None):
        """Head outputs, shape (1, num_outputs)."""
        return self.head(self.features(frames01, spec_values))


def param_count(size, modalities="audio+video", num_outputs=1):
    """Trainable parameter total of the fine-tuning model; decoders excluded.

    Built with zero-filled weights, so the count is cheap even at full size.
    """
    cfg = get_config(size)
    model = FineTuneModel(cfg, num_outputs=num_outputs, modalities=modalities,
                          rng=None, dtype=np.float32)
    return model.param_count()
