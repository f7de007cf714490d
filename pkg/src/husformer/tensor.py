"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record themselves when a :class:`Tape` is active on the
current thread and at least one input requires a gradient, so evaluation runs
without any bookkeeping::

    with Tape() as tape:
        loss = sum_(relu(matmul(x, w)))
    tape.backward(loss)
    w.grad

Leading batch axes are carried through every op; the last two axes are the
matrix axes (rows = sequence positions, columns = features).
"""

import threading

import numpy as np

from . import kernels
from .errors import ConfigurationError, DimensionError, EvaluationError

_state = threading.local()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data, dtype=np.float64)
        self.data = data if data.flags.c_contiguous else data.copy()
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed ops, replayed in reverse by :meth:`backward`."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, grad=None):
        """Populate ``.grad`` of every tensor on the tape that feeds ``loss``.

        Gradients accumulate: a tensor consumed twice receives the sum, and
        leaf parameters keep whatever they held before the call.
        """
        seed = np.ones(loss.shape) if grad is None else np.asarray(grad, dtype=np.float64)
        _accumulate(loss, seed)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for t, gt in zip(node.inputs, grads):
                if gt is not None and t.requires_grad:
                    _accumulate(t, gt)

    def clear(self):
        self.nodes = []


def _accumulate(t, g):
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    t.grad = g if t.grad is None else t.grad + g


def active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _record(out, inputs, backward):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, inputs, backward))
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- linear algebra ---------------------------------------------------------


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` is either a plain matrix shared across ``a``'s batch axes, or has
    exactly ``a``'s batch axes.
    """
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    if b.data.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} differ")
    shared = b.data.ndim == 2 and a.data.ndim > 2
    k, n = b.shape[-2], b.shape[-1]
    if shared:
        # one GEMM over all rows instead of a batched loop
        out = Tensor((a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,)))
    else:
        out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        ga = gb = None
        if shared:
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                ga = (g2 @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                gb = a.data.reshape(-1, k).T @ g2
        else:
            if a.requires_grad:
                ga = np.matmul(g, _swap(b.data))
            if b.requires_grad:
                gb = np.matmul(_swap(a.data), g)
        return ga, gb

    return _record(out, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``bias`` added along the last axis."""
    y = matmul(x, weight)
    if bias is None:
        return y
    if bias.shape != (weight.shape[-1],):
        raise DimensionError(f"linear: bias shape {bias.shape} vs weight {weight.shape}")
    out = Tensor(y.data + bias.data)

    def backward(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias.requires_grad else None
        return g, gb

    return _record(out, (y, bias), backward)


def transpose(x):
    """Swap the last two axes."""
    out = Tensor(_swap(x.data))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(_swap(g)),))


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x):
    """Collapse everything after the first (batch) axis, row-major."""
    return reshape(x, (x.shape[0], -1))


# -- elementwise --------------------------------------------------------------


def add(a, b):
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x, s):
    s = float(s)
    out = Tensor(x.data * s)
    return _record(out, (x,), lambda g: (g * s,))


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record(out, (x,), lambda g: (np.where(mask, g, 0.0),))


def abs_(x):
    sign = np.sign(x.data)
    out = Tensor(np.abs(x.data))
    return _record(out, (x,), lambda g: (g * sign,))


def sum_(x):
    """Sum of all elements, as a 0-d tensor."""
    out = Tensor(np.array(x.data.sum()))
    return _record(out, (x,), lambda g: (np.full(x.shape, g),))


def mean(x):
    return scale(sum_(x), 1.0 / x.size)


def concat(tensors, axis):
    if not tensors:
        raise DimensionError("concat: no tensors given")
    ndim = tensors[0].data.ndim
    axis = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != ref[d] for d in range(ndim) if d != axis
        ):
            raise DimensionError(
                f"concat: shape {t.shape} incompatible with {ref} along axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        index = [slice(None)] * ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            grads.append(np.ascontiguousarray(g[tuple(index)]))
        return grads

    return _record(out, tuple(tensors), backward)


def concat_rows(tensors):
    """Stack along the row (sequence) axis, preserving order."""
    return concat(tensors, axis=-2)


# -- kernels ------------------------------------------------------------------


def softmax_rows(x):
    """Softmax over the last axis, with per-row max subtraction."""
    shape = x.shape
    y = kernels.softmax_forward(x.data.reshape(-1, shape[-1])).reshape(shape)
    out = Tensor(y)

    def backward(g):
        gx = kernels.softmax_backward(
            y.reshape(-1, shape[-1]), np.ascontiguousarray(g).reshape(-1, shape[-1])
        )
        return (gx.reshape(shape),)

    return _record(out, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis to zero mean and unit variance, then
    apply the per-feature affine ``gain * xhat + bias``."""
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} vs last axis {width}"
        )
    if eps < 0:
        raise ConfigurationError(f"layer_norm: eps must be non-negative, got {eps}")
    shape = x.shape
    y, xhat, rstd = kernels.layer_norm_forward(
        x.data.reshape(-1, width), gain.data, bias.data, float(eps)
    )
    out = Tensor(y.reshape(shape))

    def backward(g):
        gx, gg, gb = kernels.layer_norm_backward(
            np.ascontiguousarray(g).reshape(-1, width), xhat, rstd, gain.data
        )
        return gx.reshape(shape), gg, gb

    return _record(out, (x, gain, bias), backward)


def conv1d(x, kernel):
    """Same-padded 1-D cross-correlation along the last (time) axis.

    ``x`` is ``(..., L_in, T)`` and ``kernel`` is ``(L_out, L_in, k)`` with odd
    ``k``; the result is ``(..., L_out, T)``.
    """
    if kernel.data.ndim != 3:
        raise DimensionError(f"conv1d: kernel must be 3-D, got {kernel.shape}")
    lout, lin, k = kernel.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d: kernel width must be odd, got {k}")
    if x.data.ndim < 2 or x.shape[-2] != lin:
        raise DimensionError(f"conv1d: input {x.shape} does not have {lin} channels")
    lead = x.shape[:-2]
    t = x.shape[-1]
    x3 = x.data.reshape(-1, lin, t)
    out = Tensor(kernels.conv1d_forward(x3, kernel.data).reshape(lead + (lout, t)))

    def backward(g):
        gx, gw = kernels.conv1d_backward(
            np.ascontiguousarray(g).reshape(-1, lout, t), x3, kernel.data
        )
        return gx.reshape(x.shape), gw

    return _record(out, (x, kernel), backward)


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


# -- verification ---------------------------------------------------------------


def gradient_check(f, params, h=1e-5):
    """Compare tape gradients of scalar ``f()`` with central differences.

    Returns the largest ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``
    over every element of ``params``.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    _check_finite(loss)
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        ana_flat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _check_finite(f())
            flat[i] = orig - h
            fm = _check_finite(f())
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = ana_flat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _check_finite(t):
    value = float(np.asarray(t.data).sum())
    if not np.isfinite(value):
        raise EvaluationError(f"function value is not finite: {value}")
    return value
