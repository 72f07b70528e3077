"""Reverse-mode autodiff over dense numpy arrays.

A :class:`Tensor` wraps one ndarray plus an optional gradient. Operations
build a tape of backward closures; ``Tensor.backward()`` walks it in reverse
topological order. Double precision is used throughout the test suite so
gradients can be validated against central differences (:func:`grad_check`);
training uses single precision.
"""

import numpy as np

from . import kernels
from .errors import NumericError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense array node of the computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(values)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.values)

    def backward(self, grad=None):
        """Accumulate gradients of this node into every reachable leaf."""
        if grad is None:
            if self.values.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.values)
        order = _toposort(self)
        self.grad = np.asarray(grad, dtype=self.values.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, like=None):
    """Wrap x as a constant Tensor, matching the dtype of `like` if given."""
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _accumulate(node, grad):
    if node.grad is None:
        node.grad = grad.astype(node.values.dtype, copy=True)
    else:
        node.grad = node.grad + grad


def _unbroadcast(grad, shape):
    # Reduce a broadcasted gradient back to `shape`.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _needs_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _make(values, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(values)


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops
# ---------------------------------------------------------------------------

def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out_values = a.values + b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_values, (a, b), backward)


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out_values = a.values - b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_values, (a, b), backward)


def neg(a):
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.values, (a,), backward)


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out_values = a.values * b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _make(out_values, (a, b), backward)


def div(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out_values = a.values / b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.values, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _make(out_values, (a, b), backward)


def sqrt(a):
    out_values = np.sqrt(a.values)

    def backward(g):
        _accumulate(a, g * (0.5 / out_values))

    return _make(out_values, (a,), backward)


def texp(a):
    out_values = np.exp(a.values)

    def backward(g):
        _accumulate(a, g * out_values)

    return _make(out_values, (a,), backward)


def tlog(a):
    out_values = np.log(a.values)

    def backward(g):
        _accumulate(a, g / a.values)

    return _make(out_values, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    old_shape = a.shape
    out_values = a.values.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return _make(out_values, (a,), backward)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_values = np.transpose(a.values, axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(out_values, (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(index)])

    return _make(out_values, tuple(tensors), backward)


def gather_rows(a, idx):
    """Select rows of a 2-D tensor; gradient scatters back with accumulation."""
    idx = np.asarray(idx, dtype=np.int64)
    out_values = a.values[idx]

    def backward(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, idx, g)
        _accumulate(a, ga)

    return _make(out_values, (a,), backward)


def scatter_rows(values, visible_idx, fill, n_rows):
    """Place `values` at `visible_idx` of an (n_rows, C) output; remaining rows
    are copies of the `fill` vector. Gradients route to both sources."""
    visible_idx = np.asarray(visible_idx, dtype=np.int64)
    values = as_tensor(values)
    fill = as_tensor(fill, like=values)
    if fill.values.ndim != 1:
        raise ValueError("fill must be a 1-D vector")
    out_values = np.tile(fill.values, (n_rows, 1))
    out_values[visible_idx] = values.values
    mask = np.ones(n_rows, dtype=bool)
    mask[visible_idx] = False

    def backward(g):
        if values.requires_grad:
            _accumulate(values, g[visible_idx])
        if fill.requires_grad:
            _accumulate(fill, g[mask].sum(axis=0))

    return _make(out_values, (values, fill), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out_values = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(out_values, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2-D or stacked 3-D matrix product; batch dims must match exactly."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim > 2 or b.ndim > 2:
        if a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"batch dims differ: {a.shape} vs {b.shape}")
    out_values = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.values, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a.values, -1, -2) @ g)

    return _make(out_values, (a, b), backward)


# ---------------------------------------------------------------------------
# kernel-backed ops
# ---------------------------------------------------------------------------

def _rows2d(arr):
    return np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))


def softmax(a, axis=-1):
    """Numerically stabilized softmax along `axis`; rows sum to one."""
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} invalid for shape {a.shape}")
    moved = np.moveaxis(a.values, axis, -1)
    flat = _rows2d(moved)
    y = kernels.softmax_fwd(flat)
    out_values = np.moveaxis(y.reshape(moved.shape), -1, axis)

    def backward(g):
        g_flat = _rows2d(np.moveaxis(g, axis, -1))
        dx = kernels.softmax_bwd(y, g_flat)
        _accumulate(a, np.moveaxis(dx.reshape(moved.shape), -1, axis))

    return _make(out_values, (a,), backward)


def log_softmax(a, axis=-1):
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} invalid for shape {a.shape}")
    moved = np.moveaxis(a.values, axis, -1)
    flat = _rows2d(moved)
    ls = kernels.log_softmax_fwd(flat)
    out_values = np.moveaxis(ls.reshape(moved.shape), -1, axis)

    def backward(g):
        g_flat = _rows2d(np.moveaxis(g, axis, -1))
        dx = kernels.log_softmax_bwd(ls, g_flat)
        _accumulate(a, np.moveaxis(dx.reshape(moved.shape), -1, axis))

    return _make(out_values, (a,), backward)


def gelu(a):
    """Exact Gaussian-CDF GELU, x * Phi(x)."""
    flat = np.ascontiguousarray(a.values)
    out_values = kernels.gelu_fwd(flat)

    def backward(g):
        _accumulate(a, kernels.gelu_bwd(flat, np.ascontiguousarray(g)))

    return _make(out_values, (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1] < 1:
        raise ValueError("layer_norm needs a non-empty last axis")
    gamma = as_tensor(gamma, like=x)
    beta = as_tensor(beta, like=x)
    shape = x.shape
    flat = _rows2d(x.values)
    y, xhat, rstd = kernels.layernorm_fwd(flat, gamma.values, beta.values, eps)
    out_values = y.reshape(shape)

    def backward(g):
        g_flat = _rows2d(g)
        dx, dgamma, dbeta = kernels.layernorm_bwd(xhat, rstd, gamma.values, g_flat)
        if x.requires_grad:
            _accumulate(x, dx.reshape(shape))
        if gamma.requires_grad:
            _accumulate(gamma, dgamma)
        if beta.requires_grad:
            _accumulate(beta, dbeta)

    return _make(out_values, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(f, params, step=1e-5, max_entries_per_param=None, seed=0):
    """Compare analytic gradients of f() against central differences.

    Parameters
    ----------
    f : callable returning a scalar Tensor built from `params`
    params : dict name -> leaf Tensor with requires_grad=True
    step : central-difference step (double precision assumed)
    max_entries_per_param : probe at most this many coordinates per tensor;
        None checks every coordinate
    seed : RNG seed, used only when the analytic gradient gives no signal
        to rank coordinates by

    Returns the max over probed coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    When subsampling, coordinates are probed in decreasing order of
    analytic-gradient magnitude. A finite difference of a double-precision
    scalar has absolute noise around eps*|f|/step, so coordinates whose
    true derivative sits below that floor measure nothing but roundoff;
    the large-magnitude coordinates are the ones where a wrong backward
    rule is actually observable.
    """
    if isinstance(params, (list, tuple)):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    out = f()
    if out.values.size != 1:
        raise ValueError("grad_check expects a scalar-valued computation")
    if not np.isfinite(out.values).all():
        raise NumericError("non-finite value in forward pass")
    out.backward()
    analytic = {name: (np.zeros_like(p.values) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.values.reshape(-1)
        n = flat.size
        a_flat = analytic[name].reshape(-1)
        if max_entries_per_param is None or n <= max_entries_per_param:
            indices = np.arange(n)
        elif np.any(a_flat != 0.0):
            order = np.argsort(np.abs(a_flat))
            indices = order[-max_entries_per_param:]
        else:
            indices = rng.choice(n, size=max_entries_per_param, replace=False)
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            f_plus = float(f().values)
            flat[i] = original - step
            f_minus = float(f().values)
            flat[i] = original
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite value while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
