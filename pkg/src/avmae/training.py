"""Training loops, resume, evaluation, and feature extraction.

Determinism contract: all randomness (weight init, per-epoch data order,
temporal crop offsets, per-sample masks) derives from the run seed through
numpy SeedSequence keys of the form [seed, domain, epoch, index]. Nothing
draws from a shared mutable RNG stream, so resuming from a checkpoint at
any step reproduces an uninterrupted double-precision run bit-for-bit
without storing generator state.
"""

import json
import logging
import math
import os

import numpy as np

from . import checkpoint
from .config import TrainConfig
from .data import (DatasetManifest, clip_indices, eval_samples, load_source,
                   max_clip_start)
from .errors import DataError
from .finetune import batch_task_loss, predict_clips
from .masking import random_mask, sample_seed, tube_mask
from .metrics import compute_metrics
from .models import FineTuneModel, PretrainModel, config_from_dict

log = logging.getLogger("avmae")

DOMAIN_INIT = 0
DOMAIN_ORDER = 1
DOMAIN_VIDEO_MASK = 2
DOMAIN_AUDIO_MASK = 3
DOMAIN_CROP = 4


def _seeded_rng(*key):
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _dtype(cfg):
    return np.float64 if cfg.precision == "double" else np.float32


def _fmt(x):
    return f"{x:.17g}"


def _train_rows(manifest):
    rows = manifest.split("train")
    return rows if rows else list(manifest.rows)


def _epoch_order(seed, epoch, n):
    return _seeded_rng(seed, DOMAIN_ORDER, epoch).permutation(n)


def _crop_start(cfg, seed, epoch, idx, total_frames, n_frames):
    last = max_clip_start(total_frames, n_frames, cfg.clip_stride)
    if last == 0:
        return 0
    return int(_seeded_rng(seed, DOMAIN_CROP, epoch, idx).integers(0, last + 1))


def _sample_plans(tcfg, mcfg, epoch, idx):
    plan_v = tube_mask(mcfg.video_grid, mcfg.mask_ratio_video,
                       seed=sample_seed(tcfg.seed, epoch, idx, DOMAIN_VIDEO_MASK))
    plan_a = random_mask(mcfg.audio_grid, mcfg.mask_ratio_audio,
                         seed=sample_seed(tcfg.seed, epoch, idx, DOMAIN_AUDIO_MASK))
    return plan_v, plan_a


class _FailureGate:
    """Skip bad samples but abort after too many consecutive failures."""

    def __init__(self, limit):
        self.limit = limit
        self.streak = 0

    def failed(self, row_id, exc):
        self.streak += 1
        log.warning("skipping sample %s: %s", row_id, exc)
        if self.streak > self.limit:
            raise DataError(
                f"{self.streak} consecutive sample failures; aborting") from exc

    def succeeded(self):
        self.streak = 0


def _plan_steps(cfg, n_rows):
    steps_per_epoch = math.ceil(n_rows / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    if cfg.max_steps:
        total = min(total, cfg.max_steps)
    warmup = min(cfg.warmup_epochs * steps_per_epoch, total)
    return steps_per_epoch, total, warmup


def _save_state(path, model, opt, meta):
    arrays = checkpoint.params_to_arrays(model.params)
    arrays.update(opt.state_arrays())
    checkpoint.save(path, arrays, meta)


def pretrain(cfg: TrainConfig, manifest_path, out_dir, resume=None):
    """Masked-reconstruction pre-training; returns the final checkpoint path."""
    from .optim import AdamW, WarmupCosine

    manifest = DatasetManifest.load(manifest_path)
    rows = _train_rows(manifest)
    if not rows:
        raise DataError("manifest has no usable rows")
    os.makedirs(out_dir, exist_ok=True)
    mcfg = cfg.model_config()
    model = PretrainModel(mcfg, rng=_seeded_rng(cfg.seed, DOMAIN_INIT), dtype=_dtype(cfg))
    steps_per_epoch, total_steps, warmup_steps = _plan_steps(cfg, len(rows))
    schedule = WarmupCosine(cfg.base_lr, warmup_steps, total_steps)
    opt = AdamW(model.params, lr=0.0, betas=(cfg.beta1, cfg.beta2),
                weight_decay=cfg.weight_decay)

    start_epoch = start_batch = global_step = 0
    if resume is not None:
        arrays, meta = checkpoint.load(resume)
        checkpoint.load_params(model.params, arrays, strict=True)
        opt.load_state(arrays, meta["opt_t"])
        global_step = int(meta["step"])
        start_epoch = int(meta["epoch"])
        start_batch = int(meta["batch_in_epoch"])

    align_cols = [f"infonce_{j}" for j in mcfg.align_layers]
    log_path = os.path.join(out_dir, "pretrain_log.csv")
    mode = "a" if resume is not None and os.path.exists(log_path) else "w"
    gate = _FailureGate(cfg.data_failure_limit)
    latest = os.path.join(out_dir, "latest.hckp")

    def meta_for(next_epoch, next_batch):
        return {"kind": "pretrain", "step": global_step, "epoch": next_epoch,
                "batch_in_epoch": next_batch, "opt_t": opt.t,
                "train_config": cfg.to_dict(), "model_config": mcfg.to_dict()}

    with open(log_path, mode, newline="") as fh:
        if mode == "w":
            fh.write(",".join(["step", "epoch", "lr", "mae_audio", "mae_video"]
                              + align_cols + ["contrastive", "total"]) + "\n")
        done = global_step >= total_steps
        for epoch in range(start_epoch, cfg.epochs):
            if done:
                break
            order = _epoch_order(cfg.seed, epoch, len(rows))
            first_batch = start_batch if epoch == start_epoch else 0
            for b in range(first_batch, steps_per_epoch):
                batch = []
                for idx in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]:
                    row = rows[idx]
                    try:
                        src = load_source(row, mcfg, mel_htk=cfg.mel_htk)
                    except DataError as exc:
                        gate.failed(row.id, exc)
                        continue
                    gate.succeeded()
                    start = _crop_start(cfg, cfg.seed, epoch, int(idx),
                                        src.frames.shape[0], mcfg.video_frames)
                    frame_sel = clip_indices(src.frames.shape[0], mcfg.video_frames,
                                             cfg.clip_stride, start)
                    plan_v, plan_a = _sample_plans(cfg, mcfg, epoch, int(idx))
                    batch.append((src.frames[frame_sel], src.spec, plan_v, plan_a))
                if not batch:
                    continue
                lr = schedule(global_step)
                report = model.loss_batch(batch, use_contrastive=not cfg.no_hcmcl)
                report.loss.backward()
                opt.step(lr=lr)
                opt.zero_grad()
                global_step += 1
                if global_step % cfg.log_every == 0 or global_step == total_steps:
                    vals = [str(global_step), str(epoch), _fmt(lr),
                            _fmt(report.mae_audio), _fmt(report.mae_video)]
                    vals += [_fmt(report.per_layer.get(j, 0.0)) for j in mcfg.align_layers]
                    vals += [_fmt(report.contrastive), _fmt(report.total)]
                    fh.write(",".join(vals) + "\n")
                    fh.flush()
                if cfg.checkpoint_every and global_step % cfg.checkpoint_every == 0:
                    nxt_e, nxt_b = (epoch, b + 1) if b + 1 < steps_per_epoch else (epoch + 1, 0)
                    step_path = os.path.join(out_dir, f"step{global_step:06d}.hckp")
                    _save_state(step_path, model, opt, meta_for(nxt_e, nxt_b))
                    _save_state(latest, model, opt, meta_for(nxt_e, nxt_b))
                if global_step >= total_steps:
                    done = True
                    break
            if not done:
                _save_state(latest, model, opt, meta_for(epoch + 1, 0))
        final = os.path.join(out_dir, "final.hckp")
        _save_state(final, model, opt, meta_for(cfg.epochs, 0))
        _save_state(latest, model, opt, meta_for(cfg.epochs, 0))
    return final


def _targets_for(rows, cfg):
    if cfg.task == "classify":
        targets = [r.label_as_int() for r in rows]
        for t in targets:
            if not 0 <= t < cfg.num_classes:
                raise DataError(f"label {t} outside 0..{cfg.num_classes - 1}")
        return targets
    return [r.label_as_floats() for r in rows]


def finetune(cfg: TrainConfig, manifest_path, out_dir, init_from=None):
    """Supervised fine-tuning; returns the final checkpoint path."""
    from .optim import AdamW, WarmupCosine

    manifest = DatasetManifest.load(manifest_path)
    rows = _train_rows(manifest)
    if not rows:
        raise DataError("manifest has no usable rows")
    os.makedirs(out_dir, exist_ok=True)
    mcfg = cfg.model_config()
    model = FineTuneModel(mcfg, num_outputs=cfg.num_outputs, modalities=cfg.modalities,
                          rng=_seeded_rng(cfg.seed, DOMAIN_INIT), dtype=_dtype(cfg))
    if init_from is not None:
        arrays, _ = checkpoint.load(init_from)
        missing, unexpected = checkpoint.load_params(model.params, arrays, strict=False)
        log.info("initialized from %s (%d fresh, %d unused stored tensors)",
                 init_from, len(missing), len(unexpected))

    targets = _targets_for(rows, cfg)
    steps_per_epoch, total_steps, warmup_steps = _plan_steps(cfg, len(rows))
    schedule = WarmupCosine(cfg.base_lr, warmup_steps, total_steps)
    opt = AdamW(model.params, lr=0.0, betas=(cfg.beta1, cfg.beta2),
                weight_decay=cfg.weight_decay)
    gate = _FailureGate(cfg.data_failure_limit)
    steps_path = os.path.join(out_dir, "finetune_log.csv")
    epochs_path = os.path.join(out_dir, "finetune_epochs.csv")
    global_step = 0
    with open(steps_path, "w", newline="") as fh, open(epochs_path, "w", newline="") as eh:
        fh.write("step,epoch,lr,loss\n")
        eh.write("epoch,mean_loss,train_war\n")
        for epoch in range(cfg.epochs):
            if global_step >= total_steps:
                break
            order = _epoch_order(cfg.seed, epoch, len(rows))
            epoch_losses = []
            hits = misses = 0
            for b in range(steps_per_epoch):
                batch = []
                batch_targets = []
                for idx in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]:
                    row = rows[idx]
                    try:
                        src = load_source(row, mcfg, mel_htk=cfg.mel_htk)
                    except DataError as exc:
                        gate.failed(row.id, exc)
                        continue
                    gate.succeeded()
                    start = _crop_start(cfg, cfg.seed, epoch, int(idx),
                                        src.frames.shape[0], mcfg.video_frames)
                    frame_sel = clip_indices(src.frames.shape[0], mcfg.video_frames,
                                             cfg.clip_stride, start)
                    batch.append((src.frames[frame_sel], src.spec, targets[idx]))
                    batch_targets.append(targets[idx])
                if not batch:
                    continue
                lr = schedule(global_step)
                loss, preds = batch_task_loss(model, batch, cfg.task)
                loss.backward()
                opt.step(lr=lr)
                opt.zero_grad()
                global_step += 1
                epoch_losses.append(loss.item())
                if cfg.task == "classify":
                    for pred, tgt in zip(preds, batch_targets):
                        hits += int(pred == tgt)
                        misses += int(pred != tgt)
                if global_step % cfg.log_every == 0 or global_step == total_steps:
                    fh.write(f"{global_step},{epoch},{_fmt(lr)},{_fmt(loss.item())}\n")
                    fh.flush()
                if global_step >= total_steps:
                    break
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            acc = hits / (hits + misses) if (hits + misses) else float("nan")
            eh.write(f"{epoch},{_fmt(mean_loss)},{_fmt(acc)}\n")
            eh.flush()
            if (cfg.early_stop_acc and cfg.task == "classify"
                    and acc >= cfg.early_stop_acc):
                log.info("early stop: train accuracy %.4f at epoch %d", acc, epoch)
                break
    final = os.path.join(out_dir, "final.hckp")
    meta = {"kind": "finetune", "step": global_step, "opt_t": opt.t,
            "train_config": cfg.to_dict(), "model_config": mcfg.to_dict(),
            "modalities": cfg.modalities, "num_outputs": cfg.num_outputs,
            "task": cfg.task}
    _save_state(final, model, opt, meta)
    return final


def load_finetuned(ckpt_path, cfg: TrainConfig = None):
    """Rebuild a fine-tuned model from its checkpoint."""
    arrays, meta = checkpoint.load(ckpt_path)
    if meta.get("kind") != "finetune":
        raise DataError(f"{ckpt_path} is not a fine-tune checkpoint")
    mcfg = config_from_dict(meta["model_config"])
    model = FineTuneModel(mcfg, num_outputs=int(meta["num_outputs"]),
                          modalities=meta["modalities"], rng=None,
                          dtype=np.float64 if cfg is None else _dtype(cfg))
    checkpoint.load_params(model.params, arrays, strict=True)
    return model, meta


def evaluate(cfg: TrainConfig, manifest_path, ckpt_path, split="test", out_path=None):
    """Two-clip inference over one split; returns the metric report."""
    manifest = DatasetManifest.load(manifest_path)
    rows = manifest.split(split)
    if not rows:
        raise DataError(f"split {split!r} has no rows")
    model, meta = load_finetuned(ckpt_path, cfg)
    task = meta.get("task", cfg.task)
    mcfg = model.cfg
    targets, predictions, scores = [], [], []
    for row in rows:
        clips = eval_samples(row, mcfg, mel_htk=cfg.mel_htk,
                             stride=cfg.clip_stride, n_clips=2)
        score = predict_clips(model, [(c.frames, c.spec) for c in clips], task)
        scores.append(score)
        if task == "classify":
            targets.append(row.label_as_int())
            predictions.append(int(np.argmax(score)))
        else:
            targets.append(row.label_as_floats())
            predictions.append(score)
    if task == "classify":
        report = compute_metrics(targets, predictions, "classify",
                                 scores=np.stack(scores),
                                 num_classes=model.num_outputs)
    else:
        report = compute_metrics(targets, predictions, "regress")
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def extract_features(cfg: TrainConfig, manifest_path, ckpt_path, out_path, split=None):
    """Fused features for every row (or one split), saved as an .npz bundle."""
    manifest = DatasetManifest.load(manifest_path)
    rows = manifest.split(split) if split else list(manifest.rows)
    if not rows:
        raise DataError("no rows to extract features for")
    model, _ = load_finetuned(ckpt_path, cfg)
    mcfg = model.cfg
    ids, feats, labels = [], [], []
    for row in rows:
        clips = eval_samples(row, mcfg, mel_htk=cfg.mel_htk,
                             stride=cfg.clip_stride, n_clips=1)
        feat = model.features(clips[0].frames, clips[0].spec)
        ids.append(row.id)
        feats.append(feat.values.reshape(-1).copy())
        labels.append(row.label)
    np.savez(out_path, ids=np.asarray(ids), features=np.stack(feats),
             labels=np.asarray(labels))
    return out_path


def synth_dataset_cli(out_dir, n_clips, n_classes, seed, model_cfg, splits=None,
                      dump_spectrograms=False, mel_htk=True):
    """Generate the synthetic dataset, optionally dumping .hspc spectrograms."""
    from .audio import load_wav, log_mel, write_hspc
    from .data import synth_dataset

    manifest = synth_dataset(out_dir, n_clips, n_classes, seed, model_cfg,
                             splits=splits)
    if dump_spectrograms:
        for i in range(n_clips):
            wav_path = os.path.join(out_dir, f"clip{i:04d}.wav")
            spec = log_mel(load_wav(wav_path), n_mels=model_cfg.audio_bands,
                           htk=mel_htk, target_frames=model_cfg.audio_frames)
            write_hspc(os.path.join(out_dir, f"clip{i:04d}.hspc"), spec)
    return manifest


def pretrain_grad_check(seed=0, batch_size=2, max_entries_per_param=4):
    """Central-difference check of the full combined loss at micro scale.

    The check runs at a generic point rather than at the tiny training
    init: weight matrices are scaled up and the contrastive term carries
    unit weight. At the 0.02-std init the attention and fusion gradients
    sit below the double-precision finite-difference noise floor
    (eps * |loss| / step), where no implementation could be told apart
    from a wrong one. Scaling exercises identical code on measurable
    derivatives.
    """
    from .models import get_config
    from .tensor import grad_check

    mcfg = get_config("micro", loss_weight=1.0)
    model = PretrainModel(mcfg, rng=_seeded_rng(seed, DOMAIN_INIT), dtype=np.float64)
    for p in model.params.values():
        if p.values.ndim >= 2:
            p.values *= 5.0
    data_rng = _seeded_rng(seed, 99)
    batch = []
    for i in range(batch_size):
        frames = data_rng.random((mcfg.video_frames, mcfg.video_height,
                                  mcfg.video_width, 3))
        spec = data_rng.standard_normal((mcfg.audio_frames, mcfg.audio_bands))
        plan_v = tube_mask(mcfg.video_grid, mcfg.mask_ratio_video, seed=seed + 7 * i)
        plan_a = random_mask(mcfg.audio_grid, mcfg.mask_ratio_audio, seed=seed + 11 * i)
        batch.append((frames, spec, plan_v, plan_a))

    def loss():
        return model.loss_batch(batch).loss

    return grad_check(loss, model.params, step=1e-5,
                      max_entries_per_param=max_entries_per_param, seed=seed)
