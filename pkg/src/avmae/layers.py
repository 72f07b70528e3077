"""Transformer building blocks: attention, feed-forward, residual layers.

Parameters are created through a :class:`ParamFactory`, which owns the flat
name -> Tensor registry used by the optimizer and the checkpoint writer.
Building with ``rng=None`` zero-fills every array, which makes parameter
counting and checkpoint loading cheap even for the largest model size.
"""

import contextlib
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamFactory:
    """Creates named parameter tensors and tracks them in creation order."""

    def __init__(self, rng=None, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self.params = {}
        self._scopes = []

    @contextlib.contextmanager
    def scope(self, name):
        self._scopes.append(name)
        try:
            yield self
        finally:
            self._scopes.pop()

    def make(self, name, shape, init="normal", std=0.02):
        full = ".".join(self._scopes + [name])
        if full in self.params:
            raise ValueError(f"duplicate parameter name {full!r}")
        if init == "zeros":
            values = np.zeros(shape, dtype=self.dtype)
        elif init == "ones":
            values = np.ones(shape, dtype=self.dtype)
        elif init == "normal":
            if self.rng is None:
                values = np.zeros(shape, dtype=self.dtype)
            else:
                values = (self.rng.standard_normal(shape) * std).astype(self.dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(values, requires_grad=True)
        self.params[full] = t
        return t

    def count(self, prefix=""):
        """Total number of scalar parameters under a name prefix."""
        return sum(t.size for name, t in self.params.items() if name.startswith(prefix))

    def current_prefix(self):
        return ".".join(self._scopes)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


class Linear:
    def __init__(self, pf, name, d_in, d_out, bias=True):
        with pf.scope(name):
            self.w = pf.make("w", (d_in, d_out))
            self.b = pf.make("b", (d_out,), init="zeros") if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add(y, self.b)
        return y


class LayerNorm:
    def __init__(self, pf, name, dim, eps=1e-6):
        self.eps = eps
        with pf.scope(name):
            self.gamma = pf.make("gamma", (dim,), init="ones")
            self.beta = pf.make("beta", (dim,), init="zeros")

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MultiHeadAttention:
    """Scaled dot-product attention over row-token matrices.

    Covers both self-attention (source omitted) and cross-attention, where
    queries come from the target sequence and keys/values from the source.
    """

    def __init__(self, pf, name, dim, heads):
        if dim % heads != 0:
            raise ValueError(f"heads ({heads}) must divide width ({dim})")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        # Projections carry no biases: a key bias cancels inside the
        # row-wise softmax and the query/value/output biases fold into
        # neighbouring affine maps, so the extra parameters would be dead
        # weight that finite-difference checks cannot even observe.
        with pf.scope(name):
            self.q = Linear(pf, "q", dim, dim, bias=False)
            self.k = Linear(pf, "k", dim, dim, bias=False)
            self.v = Linear(pf, "v", dim, dim, bias=False)
            self.o = Linear(pf, "o", dim, dim, bias=False)

    def _split_heads(self, x, n):
        # (N, C) -> (H, N, d_h)
        return T.transpose(T.reshape(x, (n, self.heads, self.head_dim)), (1, 0, 2))

    def __call__(self, target, source=None):
        if source is None:
            source = target
        if target.shape[-1] != self.dim or source.shape[-1] != self.dim:
            raise ValueError(
                f"width mismatch: attention built for {self.dim}, "
                f"got {target.shape[-1]} / {source.shape[-1]}")
        n_t = target.shape[0]
        n_s = source.shape[0]
        q = self._split_heads(self.q(target), n_t)
        k = self._split_heads(self.k(source), n_s)
        v = self._split_heads(self.v(source), n_s)
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), scale)
        attn = T.softmax(scores, axis=-1)
        mixed = T.matmul(attn, v)  # (H, N_t, d_h)
        merged = T.reshape(T.transpose(mixed, (1, 0, 2)), (n_t, self.dim))
        return self.o(merged)

    def attention_weights(self, target, source=None):
        """Forward-only probe returning the (H, N_t, N_s) softmax weights."""
        if source is None:
            source = target
        target = target.values if isinstance(target, Tensor) else np.asarray(target)
        source = source.values if isinstance(source, Tensor) else np.asarray(source)
        q = target @ self.q.w.values
        k = source @ self.k.w.values
        n_t, n_s = target.shape[0], source.shape[0]
        q = q.reshape(n_t, self.heads, self.head_dim).transpose(1, 0, 2)
        k = k.reshape(n_s, self.heads, self.head_dim).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) / math.sqrt(self.head_dim)
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)


class FeedForward:
    """Two linear maps around an exact-erf GELU; hidden width is 4x."""

    def __init__(self, pf, name, dim):
        with pf.scope(name):
            self.fc1 = Linear(pf, "fc1", dim, 4 * dim)
            self.fc2 = Linear(pf, "fc2", 4 * dim, dim)

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerLayer:
    """Pre-LN residual block: x + MHSA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, pf, name, dim, heads):
        self.dim = dim
        with pf.scope(name):
            self._prefix = pf.current_prefix()
            self.ln1 = LayerNorm(pf, "ln1", dim)
            self.attn = MultiHeadAttention(pf, "attn", dim, heads)
            self.ln2 = LayerNorm(pf, "ln2", dim)
            self.ffn = FeedForward(pf, "ffn", dim)
        self._pf = pf

    def __call__(self, x):
        if x.shape[-1] != self.dim:
            raise ValueError(f"width mismatch: layer is {self.dim}-wide, input {x.shape[-1]}")
        x = T.add(x, self.attn(self.ln1(x)))
        x = T.add(x, self.ffn(self.ln2(x)))
        return x

    def param_count(self):
        return self._pf.count(self._prefix)


class CrossModalLayer:
    """Cross-attention into a source stream, then self-attention, then FFN.

    Each sub-block is pre-LN residual; the cross-attention normalizes the
    source sequence with its own LayerNorm before attending to it.
    """

    def __init__(self, pf, name, dim, heads):
        with pf.scope(name):
            self.ln_q = LayerNorm(pf, "ln_q", dim)
            self.ln_kv = LayerNorm(pf, "ln_kv", dim)
            self.cross = MultiHeadAttention(pf, "cross", dim, heads)
            self.ln_s = LayerNorm(pf, "ln_s", dim)
            self.self_attn = MultiHeadAttention(pf, "self", dim, heads)
            self.ln_f = LayerNorm(pf, "ln_f", dim)
            self.ffn = FeedForward(pf, "ffn", dim)

    def __call__(self, target, source):
        x = T.add(target, self.cross(self.ln_q(target), self.ln_kv(source)))
        x = T.add(x, self.self_attn(self.ln_s(x)))
        x = T.add(x, self.ffn(self.ln_f(x)))
        return x


def transformer_layer_param_count(dim):
    """Closed-form parameter count of one TransformerLayer.

    12C^2 + 5C from the four bias-free attention projections and the FFN,
    plus 4C of LayerNorm affine terms.
    """
    return 12 * dim * dim + 5 * dim + 4 * dim
