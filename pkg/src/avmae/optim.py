"""Decoupled-weight-decay Adam and the warmup-plus-cosine schedule.

Weight decay multiplies parameters directly (not through the gradient) and
is applied only to matrices and higher-rank tensors; vectors such as norm
gains, biases, mask tokens, and layer-weight logits decay-free. The
schedule rises linearly from zero over the warmup steps and then follows a
half cosine that reaches exactly zero on the final step.
"""

import math

import numpy as np

from . import kernels


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    `params` is a name-to-tensor mapping; step order follows it, and the
    update runs in place through the active kernel backend.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.95), eps=1e-8,
                 weight_decay=0.05):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {n: np.zeros_like(p.values) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.values) for n, p in self.params.items()}

    def step(self, lr=None):
        if lr is not None:
            self.lr = float(lr)
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            wd = self.weight_decay if p.values.ndim >= 2 else 0.0
            grad = np.ascontiguousarray(p.grad, dtype=p.values.dtype)
            kernels.adamw_update(
                p.values.reshape(-1), grad.reshape(-1),
                self.m[name].reshape(-1), self.v[name].reshape(-1),
                self.lr, self.beta1, self.beta2, self.eps, wd, self.t)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        """Moment estimates keyed for checkpointing."""
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays, t):
        for name in self.params:
            m = arrays.get(f"opt.m.{name}")
            v = arrays.get(f"opt.v.{name}")
            if m is None or v is None:
                raise KeyError(f"optimizer state missing for {name!r}")
            if m.shape != self.m[name].shape or v.shape != self.v[name].shape:
                raise ValueError(f"optimizer state shape mismatch for {name!r}")
            self.m[name] = np.ascontiguousarray(m, dtype=self.m[name].dtype)
            self.v[name] = np.ascontiguousarray(v, dtype=self.v[name].dtype)
        self.t = int(t)


class WarmupCosine:
    """lr(step) for 0-based steps; lr(0)=0 with warmup, lr(last)=0 exactly."""

    def __init__(self, base_lr, warmup_steps, total_steps):
        if total_steps < 1:
            raise ValueError("need at least one step")
        if warmup_steps < 0 or warmup_steps > total_steps:
            raise ValueError("warmup must lie within the run")
        self.base_lr = float(base_lr)
        self.warmup_steps = int(warmup_steps)
        self.total_steps = int(total_steps)

    def __call__(self, step):
        if step < 0 or step >= self.total_steps:
            raise ValueError(f"step {step} outside 0..{self.total_steps - 1}")
        last = self.total_steps - 1
        if step == last:
            # Holds even when warmup swallows the whole run.
            return 0.0
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        if last <= self.warmup_steps:
            return self.base_lr
        progress = (step - self.warmup_steps) / (last - self.warmup_steps)
        return 0.5 * self.base_lr * (1.0 + math.cos(math.pi * progress))
