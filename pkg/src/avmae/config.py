"""Run configuration: one flat dataclass, a key=value file format, and a
merge order of dataclass defaults, then file values, then explicit flags.

Every key in the file mirrors a CLI flag (dashes become underscores).
Unknown keys, malformed values, and out-of-range settings raise
ConfigError, which the CLI maps to exit code 2.
"""

import dataclasses
from dataclasses import dataclass

from .decoder import parse_skip_map
from .errors import ConfigError
from .models import MODALITY_SETS, PRESETS, get_config


@dataclass
class TrainConfig:
    seed: int = 0
    model_size: str = "micro"
    modalities: str = "audio+video"
    task: str = "classify"
    num_classes: int = 2
    num_dims: int = 1
    batch_size: int = 4
    base_lr: float = 3e-4
    epochs: int = 1
    max_steps: int = 0           # 0 means no cap
    warmup_epochs: int = 5
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    precision: str = "double"
    loss_weight: float = 0.0025
    temperature: float = 0.07
    mask_ratio_video: float = 0.9
    mask_ratio_audio: float = 0.8
    fusion_flow: str = "default"
    skip_map: str = ""           # "" means the preset's own map
    no_hsp: bool = False
    no_hcmcl: bool = False
    no_hff: bool = False
    patch_normalize: bool = False
    mel_variant: str = "htk"
    clip_stride: int = 4
    log_every: int = 1
    checkpoint_every: int = 0    # extra checkpoints every N steps; 0 = per-epoch only
    data_failure_limit: int = 5
    early_stop_acc: float = 0.0  # stop fine-tuning once train accuracy reaches this

    def validate(self):
        if self.model_size not in PRESETS:
            raise ConfigError(f"unknown model size {self.model_size!r}")
        if self.modalities not in MODALITY_SETS:
            raise ConfigError(f"unknown modality set {self.modalities!r}")
        if self.task not in ("classify", "regress"):
            raise ConfigError(f"task must be classify or regress, got {self.task!r}")
        if self.precision not in ("double", "single"):
            raise ConfigError(f"precision must be double or single, got {self.precision!r}")
        if self.mel_variant not in ("htk", "slaney"):
            raise ConfigError(f"mel variant must be htk or slaney, got {self.mel_variant!r}")
        if self.base_lr <= 0 or self.temperature <= 0:
            raise ConfigError("rates must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.num_classes < 2 and self.task == "classify":
            raise ConfigError("classification needs at least 2 classes")
        if self.num_dims < 1 and self.task == "regress":
            raise ConfigError("regression needs at least 1 dimension")
        if self.loss_weight < 0:
            raise ConfigError("loss weight must be >= 0")
        if self.warmup_epochs < 0 or self.max_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if not 0.0 <= self.mask_ratio_video < 1.0 or not 0.0 <= self.mask_ratio_audio < 1.0:
            raise ConfigError("mask ratios must lie in [0, 1)")
        return self

    def model_config(self):
        overrides = dict(
            mask_ratio_video=self.mask_ratio_video,
            mask_ratio_audio=self.mask_ratio_audio,
            temperature=self.temperature,
            loss_weight=self.loss_weight,
            fusion_flow=self.fusion_flow,
            use_skips=not self.no_hsp,
            use_hff=not self.no_hff,
            patch_normalize=self.patch_normalize,
        )
        if self.skip_map:
            overrides["skip_map"] = parse_skip_map(self.skip_map)
        return get_config(self.model_size, **overrides)

    @property
    def num_outputs(self):
        return self.num_classes if self.task == "classify" else self.num_dims

    @property
    def mel_htk(self):
        return self.mel_variant == "htk"

    @property
    def dtype_name(self):
        return "float64" if self.precision == "double" else "float32"

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name, raw):
    field = _FIELDS[name]
    raw = raw.strip()
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: bad value {raw!r}") from exc
    return raw


def read_config_file(path):
    """Parse `key=value` lines; '#' starts a comment, blank lines ignored."""
    values = {}
    try:
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value")
                key, raw = line.split("=", 1)
                key = key.strip().replace("-", "_")
                if key not in _FIELDS:
                    raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
                values[key] = _coerce(key, raw)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def build_config(file_path=None, overrides=None, defaults=None):
    """Defaults, then file values, then explicit (non-None) overrides.

    `defaults` lets a caller shift the dataclass baseline (the fine-tuning
    entry point raises the learning rate and second moment decay) while
    still losing to the file and to flags.
    """
    values = dict(defaults or {})
    if file_path:
        values.update(read_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = val
    try:
        cfg = TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
