"""Fused numeric kernels with optional numba JIT compilation.

The rest of the package calls the public names (``gelu_fwd``, ``softmax_fwd``,
...). Each has a pure-numpy implementation and, when numba is importable, an
``@njit`` twin that fuses the per-row loops. The backend is chosen once at
import time from the ``AVMAE_KERNELS`` environment variable:

    AVMAE_KERNELS=numpy   force the numpy fallback
    AVMAE_KERNELS=numba   require numba (error if unavailable)
    unset                 numba when importable, else numpy

Both paths are serial and deterministic; they agree to ~1e-15 relative in
double precision (exercised by the test suite). ``benchmarks/kernel_bench.py``
times one against the other.
"""

import math
import os

import numpy as np
from scipy.special import erf as _erf

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_gelu_fwd(x):
    return x * (0.5 * (1.0 + _erf(x * INV_SQRT2)))


def _np_gelu_bwd(x, g):
    cdf = 0.5 * (1.0 + _erf(x * INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    return g * (cdf + x * pdf)


def _np_softmax_fwd(x):
    # x: (rows, cols); softmax over the last axis with max-subtraction
    shifted = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def _np_softmax_bwd(y, g):
    dot = np.sum(g * y, axis=1, keepdims=True)
    return y * (g - dot)


def _np_log_softmax_fwd(x):
    shifted = x - np.max(x, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return shifted - lse


def _np_log_softmax_bwd(ls, g):
    return g - np.exp(ls) * np.sum(g, axis=1, keepdims=True)


def _np_layernorm_fwd(x, gamma, beta, eps):
    mu = np.mean(x, axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0].copy()


def _np_layernorm_bwd(xhat, rstd, gamma, g):
    gg = g * gamma
    m1 = np.mean(gg, axis=1, keepdims=True)
    m2 = np.mean(gg * xhat, axis=1, keepdims=True)
    dx = rstd[:, None] * (gg - m1 - xhat * m2)
    dgamma = np.sum(g * xhat, axis=0)
    dbeta = np.sum(g, axis=0)
    return dx, dgamma, dbeta


def _np_adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, t):
    # In-place decoupled-weight-decay Adam step on flat arrays.
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    p -= lr * wd * p
    p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

_HAVE_NUMBA = False
try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_gelu_fwd(x):
        out = np.empty_like(x)
        flat_x = x.ravel()
        flat_o = out.ravel()
        for i in range(flat_x.size):
            xi = flat_x[i]
            flat_o[i] = xi * 0.5 * (1.0 + math.erf(xi * INV_SQRT2))
        return out

    @njit(cache=True)
    def _nb_gelu_bwd(x, g):
        out = np.empty_like(x)
        flat_x = x.ravel()
        flat_g = g.ravel()
        flat_o = out.ravel()
        for i in range(flat_x.size):
            xi = flat_x[i]
            cdf = 0.5 * (1.0 + math.erf(xi * INV_SQRT2))
            pdf = math.exp(-0.5 * xi * xi) * INV_SQRT_2PI
            flat_o[i] = flat_g[i] * (cdf + xi * pdf)
        return out

    @njit(cache=True)
    def _nb_softmax_fwd(x):
        rows, cols = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            hi = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > hi:
                    hi = x[r, c]
            total = 0.0
            for c in range(cols):
                e = math.exp(x[r, c] - hi)
                out[r, c] = e
                total += e
            inv = 1.0 / total
            for c in range(cols):
                out[r, c] *= inv
        return out

    @njit(cache=True)
    def _nb_softmax_bwd(y, g):
        rows, cols = y.shape
        out = np.empty_like(y)
        for r in range(rows):
            dot = 0.0
            for c in range(cols):
                dot += g[r, c] * y[r, c]
            for c in range(cols):
                out[r, c] = y[r, c] * (g[r, c] - dot)
        return out

    @njit(cache=True)
    def _nb_log_softmax_fwd(x):
        rows, cols = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            hi = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > hi:
                    hi = x[r, c]
            total = 0.0
            for c in range(cols):
                total += math.exp(x[r, c] - hi)
            lse = hi + math.log(total)
            for c in range(cols):
                out[r, c] = x[r, c] - lse
        return out

    @njit(cache=True)
    def _nb_log_softmax_bwd(ls, g):
        rows, cols = ls.shape
        out = np.empty_like(ls)
        for r in range(rows):
            gsum = 0.0
            for c in range(cols):
                gsum += g[r, c]
            for c in range(cols):
                out[r, c] = g[r, c] - math.exp(ls[r, c]) * gsum
        return out

    @njit(cache=True)
    def _nb_layernorm_fwd(x, gamma, beta, eps):
        rows, cols = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows, dtype=x.dtype)
        for r in range(rows):
            mu = 0.0
            for c in range(cols):
                mu += x[r, c]
            mu /= cols
            var = 0.0
            for c in range(cols):
                d = x[r, c] - mu
                var += d * d
            var /= cols
            rs = 1.0 / math.sqrt(var + eps)
            rstd[r] = rs
            for c in range(cols):
                xh = (x[r, c] - mu) * rs
                xhat[r, c] = xh
                y[r, c] = xh * gamma[c] + beta[c]
        return y, xhat, rstd

    @njit(cache=True)
    def _nb_layernorm_bwd(xhat, rstd, gamma, g):
        rows, cols = xhat.shape
        dx = np.empty_like(xhat)
        dgamma = np.zeros(cols, dtype=xhat.dtype)
        dbeta = np.zeros(cols, dtype=xhat.dtype)
        for r in range(rows):
            m1 = 0.0
            m2 = 0.0
            for c in range(cols):
                gg = g[r, c] * gamma[c]
                m1 += gg
                m2 += gg * xhat[r, c]
            m1 /= cols
            m2 /= cols
            for c in range(cols):
                gg = g[r, c] * gamma[c]
                dx[r, c] = rstd[r] * (gg - m1 - xhat[r, c] * m2)
                dgamma[c] += g[r, c] * xhat[r, c]
                dbeta[c] += g[r, c]
        return dx, dgamma, dbeta

    @njit(cache=True)
    def _nb_adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, t):
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for i in range(p.size):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            p[i] -= lr * wd * p[i]
            p[i] -= (lr / bc1) * m[i] / (math.sqrt(v[i] / bc2) + eps)


def _select_backend():
    requested = os.environ.get("AVMAE_KERNELS", "").strip().lower()
    if requested not in ("", "numpy", "numba"):
        raise RuntimeError(f"AVMAE_KERNELS must be 'numpy' or 'numba', got {requested!r}")
    if requested == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("AVMAE_KERNELS=numba but numba is not importable")
    if requested == "numpy":
        return "numpy"
    return "numba" if _HAVE_NUMBA else "numpy"


BACKEND = _select_backend()

if BACKEND == "numba":
    gelu_fwd = _nb_gelu_fwd
    gelu_bwd = _nb_gelu_bwd
    softmax_fwd = _nb_softmax_fwd
    softmax_bwd = _nb_softmax_bwd
    log_softmax_fwd = _nb_log_softmax_fwd
    log_softmax_bwd = _nb_log_softmax_bwd
    layernorm_fwd = _nb_layernorm_fwd
    layernorm_bwd = _nb_layernorm_bwd
    adamw_update = _nb_adamw_update
else:
    gelu_fwd = _np_gelu_fwd
    gelu_bwd = _np_gelu_bwd
    softmax_fwd = _np_softmax_fwd
    softmax_bwd = _np_softmax_bwd
    log_softmax_fwd = _np_log_softmax_fwd
    log_softmax_bwd = _np_log_softmax_bwd
    layernorm_fwd = _np_layernorm_fwd
    layernorm_bwd = _np_layernorm_bwd
    adamw_update = _np_adamw_update
