"""Dense float64 tensors with taped reverse-mode differentiation.

Exactly the primitives the model zoo needs, nothing more: elementwise
arithmetic, matmul with leading-axis broadcast, 1D (depthwise/separable)
convolution, batch normalization, the five activations, softmax, pooling,
dropout, and a finite-difference verification harness.

Every operation executed while a :class:`Tape` is active appends one node;
``backward`` replays the nodes in reverse append order, which is a valid
topological order because nodes are only appended by forward execution.
All math runs in double precision.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "tapes", None)
    if stack is None:
        stack = _TLS.tapes = []
    return stack


class Tensor:
    """A shape-tagged float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("op", "inputs", "output", "grad_fn")

    def __init__(self, op, inputs, output, grad_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Tape:
    """Append-only record of operations, confined to one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False


def _active_tape() -> Tape | None:
    if getattr(_TLS, "no_grad_depth", 0):
        return None
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend tape recording within the block."""
    _TLS.no_grad_depth = getattr(_TLS, "no_grad_depth", 0) + 1
    try:
        yield
    finally:
        _TLS.no_grad_depth -= 1


# Debug guard: forward primitives must not emit NaN/Inf from finite inputs.
_check_finite = False


@contextmanager
def debug_finite_checks():
    global _check_finite
    prev = _check_finite
    _check_finite = True
    try:
        yield
    finally:
        _check_finite = prev


def _record(op, inputs, out_data, grad_fn) -> Tensor:
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if requires and tape is not None:
        tape.nodes.append(_Node(op, tuple(inputs), out, grad_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum out axes that numpy broadcasting added or stretched."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", (a, b), out, grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record("sub", (a, b), out, grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record("mul", (a, b), out, grad_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return _record("log", (a,), out, grad_fn)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a scalar; gradient is 0 at and below the floor."""
    a = as_tensor(a)
    out = np.maximum(a.data, floor)

    def grad_fn(g):
        return (g * (a.data > floor),)

    return _record("maximum", (a,), out, grad_fn)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul expects operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner axes differ: {a.shape} @ {b.shape}"
        )
    out = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def grad_fn(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if need_b:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _record("matmul", (a, b), out, grad_fn)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = np.argsort(axes)

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _record("transpose", (a,), out, grad_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.data.shape),)

    return _record("reshape", (a,), out, grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(sizes))
        )

    return _record("concat", tuple(tensors), out, grad_fn)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record("stack", tuple(tensors), out, grad_fn)


def take_index(a, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis``, dropping that axis."""
    a = as_tensor(a)
    out = np.take(a.data, index, axis=axis)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _record("take_index", (a,), out, grad_fn)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.data.shape).copy(),)

    return _record("sum", (a,), out, grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.data.shape[axis]

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / n, a.data.shape).copy(),)

    return _record("mean", (a,), out, grad_fn)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def grad_fn(g):
        # subgradient 0 at the kink
        return (g * (a.data > 0.0),)

    return _record("relu", (a,), out, grad_fn)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data > 0.0, a.data, slope * a.data)

    def grad_fn(g):
        return (g * np.where(a.data > 0.0, 1.0, slope),)

    return _record("leaky_relu", (a,), out, grad_fn)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0.0, a.data, neg_part)

    def grad_fn(g):
        return (g * np.where(a.data > 0.0, 1.0, neg_part + alpha),)

    return _record("elu", (a,), out, grad_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", (a,), out, grad_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (a,), out, grad_fn)


_ACTIVATIONS = {
    "relu": relu,
    "elu": elu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def activation(kind: str, a) -> Tensor:
    """Apply a named elementwise activation."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(a)


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along ``axis``."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record("softmax", (a,), out, grad_fn)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _as_batched(x: Tensor):
    """View [C, L] input as [1, C, L]; report whether a batch axis was added."""
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise DimensionError(f"expected [C, L] or [B, C, L] input, got shape {x.shape}")


def _conv_out_length(length: int, kernel: int, stride: int, padding: int) -> int:
    if kernel > length + 2 * padding:
        raise DimensionError(
            f"kernel {kernel} exceeds padded length {length + 2 * padding} (axis L)"
        )
    out = (length + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise DimensionError("convolution produces an empty output (axis L)")
    return out


def _windows(xb: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Strided sliding windows [B, C, L_out, K] over the padded last axis."""
    if padding:
        xb = np.pad(xb, ((0, 0), (0, 0), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xb, kernel, axis=2)
    return win[:, :, ::stride, :]


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B?, C_in, L] with [C_out, C_in, K] kernels."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 3:
        raise DimensionError(f"weight must be [C_out, C_in, K], got shape {w.shape}")
    xb, squeeze = _as_batched(x)
    batch, c_in, length = xb.shape
    c_out, w_cin, kernel = w.shape
    if w_cin != c_in:
        raise DimensionError(
            f"input has {c_in} channels but weight expects {w_cin} (axis C_in)"
        )
    if b is not None:
        b = as_tensor(b)
        if b.shape != (c_out,):
            raise DimensionError(f"bias must have shape ({c_out},), got {b.shape}")
    l_out = _conv_out_length(length, kernel, stride, padding)

    win = _windows(xb, kernel, stride, padding)
    # one BLAS call: [B, L_out, C_in*K] @ [C_in*K, C_out]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(
        batch, l_out, c_in * kernel
    )
    wm = w.data.reshape(c_out, c_in * kernel)
    out = (cols @ wm.T).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[:, None]
    if squeeze:
        out = out[0]

    need_x, need_w = x.requires_grad, w.requires_grad
    need_b = b is not None and b.requires_grad

    def grad_fn(g):
        gb3 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(gb3.transpose(0, 2, 1)).reshape(-1, c_out)
        gx = gw = gbias = None
        if need_w:
            gw = (g2.T @ cols.reshape(-1, c_in * kernel)).reshape(w.shape)
        if need_b:
            gbias = gb3.sum(axis=(0, 2))
        if need_x:
            gcols = (g2 @ wm).reshape(batch, l_out, c_in, kernel)
            lp = length + 2 * padding
            gx_pad = np.zeros((batch, c_in, lp))
            for k in range(kernel):
                gx_pad[:, :, k : k + stride * l_out : stride] += gcols[
                    :, :, :, k
                ].transpose(0, 2, 1)
            gx = gx_pad[:, :, padding : lp - padding] if padding else gx_pad
            if squeeze:
                gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, gbias

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv1d", inputs, out, grad_fn)


def depthwise_conv1d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel convolution: one [1, K] kernel per input channel."""
    x, w = as_tensor(x), as_tensor(w)
    xb, squeeze = _as_batched(x)
    batch, c_in, length = xb.shape
    if w.ndim != 3 or w.shape[1] != 1:
        raise DimensionError(f"depthwise weight must be [C, 1, K], got shape {w.shape}")
    if w.shape[0] != c_in:
        raise DimensionError(
            f"input has {c_in} channels but depthwise weight has {w.shape[0]} (axis C)"
        )
    kernel = w.shape[2]
    l_out = _conv_out_length(length, kernel, stride, padding)

    win = _windows(xb, kernel, stride, padding)  # [B, C, L_out, K]
    wk = w.data[:, 0, :]  # [C, K]
    out = np.einsum("bclk,ck->bcl", win, wk, optimize=True)
    if squeeze:
        out = out[0]

    need_x, need_w = x.requires_grad, w.requires_grad

    def grad_fn(g):
        gb3 = g[None] if squeeze else g
        gx = gw = None
        if need_w:
            gw = np.einsum("bcl,bclk->ck", gb3, win, optimize=True)[:, None, :]
        if need_x:
            gcols = gb3[:, :, :, None] * wk[None, :, None, :]
            lp = length + 2 * padding
            gx_pad = np.zeros((batch, c_in, lp))
            for k in range(kernel):
                gx_pad[:, :, k : k + stride * l_out : stride] += gcols[:, :, :, k]
            gx = gx_pad[:, :, padding : lp - padding] if padding else gx_pad
            if squeeze:
                gx = gx[0]
        return gx, gw

    return _record("depthwise_conv1d", (x, w), out, grad_fn)


def separable_conv1d(x, depthwise_w, pointwise_w, b=None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Depthwise filtering followed by a 1x1 channel-mixing convolution."""
    pointwise_w = as_tensor(pointwise_w)
    if pointwise_w.ndim != 3 or pointwise_w.shape[2] != 1:
        raise DimensionError(
            f"pointwise weight must be [C_out, C_in, 1], got shape {pointwise_w.shape}"
        )
    filtered = depthwise_conv1d(x, depthwise_w, stride=stride, padding=padding)
    return conv1d(filtered, pointwise_w, b=b, stride=1, padding=0)


def max_pool1d(x, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    batch, channels, length = xb.shape
    l_out = _conv_out_length(length, kernel, stride, padding)
    if padding:
        xb = np.pad(xb, ((0, 0), (0, 0), (padding, padding)),
                    constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xb, kernel, axis=2)[:, :, ::stride, :]
    amax = win.argmax(axis=3)
    out = np.take_along_axis(win, amax[..., None], axis=3)[..., 0]
    if squeeze:
        out = out[0]

    def grad_fn(g):
        gb3 = g[None] if squeeze else g
        lp = length + 2 * padding
        gx_pad = np.zeros((batch, channels, lp))
        for k in range(kernel):
            gx_pad[:, :, k : k + stride * l_out : stride] += gb3 * (amax == k)
        gx = gx_pad[:, :, padding : lp - padding] if padding else gx_pad
        return (gx[0] if squeeze else gx,)

    return _record("max_pool1d", (x,), out, grad_fn)


def global_avg_pool(x) -> Tensor:
    """Per-channel mean over the trailing (position) axis."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("global_avg_pool expects at least 2 axes")
    return mean(x, axis=-1)


def _adaptive_pool_matrix(length: int, out_width: int) -> np.ndarray:
    idx = np.arange(out_width)
    starts = (idx * length) // out_width
    ends = -((-(idx + 1) * length) // out_width)  # ceil division
    m = np.zeros((out_width, length))
    for j in range(out_width):
        m[j, starts[j]:ends[j]] = 1.0 / (ends[j] - starts[j])
    return m


_POOL_MATRIX_CACHE: dict[tuple[int, int], np.ndarray] = {}


def adaptive_avg_pool1d(x, out_width: int) -> Tensor:
    """Average the trailing axis into ``out_width`` near-equal bins."""
    x = as_tensor(x)
    length = x.shape[-1]
    key = (length, out_width)
    m = _POOL_MATRIX_CACHE.get(key)
    if m is None:
        m = _POOL_MATRIX_CACHE[key] = _adaptive_pool_matrix(length, out_width)
    return matmul(x, Tensor(m.T))


def dropout(x, rate: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted-scaling dropout; identity at inference or when rng is None."""
    x = as_tensor(x)
    if not train or rate == 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def grad_fn(g):
        return (g * mask,)

    return _record("dropout", (x,), x.data * mask, grad_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running per-channel statistics, updated in train mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels: int) -> "BatchNormState":
        return cls(mean=np.zeros(channels), var=np.ones(channels))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.mean.copy(), self.var.copy())


def batch_norm(x, gamma, beta, state: BatchNormState, mode: str = "train",
               eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Normalize per channel over the batch and position axes.

    Train mode uses batch statistics (biased variance) and folds them into
    the running state with the given momentum; infer mode uses the running
    state only. Differentiable w.r.t. x, gamma, and beta in both modes.
    """
    if eps <= 0:
        raise ContractError("batch_norm requires eps > 0")
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"unknown batch_norm mode {mode!r}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 2:
        axes, pshape = (1,), (-1, 1)
    elif x.ndim == 3:
        axes, pshape = (0, 2), (1, -1, 1)
    else:
        raise DimensionError(f"batch_norm expects [C, L] or [B, C, L], got {x.shape}")
    channels = x.shape[-2]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"gamma/beta must have shape ({channels},) to match axis C"
        )

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.mean = momentum * state.mean + (1.0 - momentum) * mu
        state.var = momentum * state.var + (1.0 - momentum) * var
    else:
        mu, var = state.mean, state.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(pshape)) * inv_std.reshape(pshape)
    out = gamma.data.reshape(pshape) * xhat + beta.data.reshape(pshape)

    n = np.prod([x.shape[a] for a in axes])

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        scale = (gamma.data * inv_std).reshape(pshape)
        if mode == "infer":
            dx = g * scale
        else:
            g_mean = g.mean(axis=axes).reshape(pshape)
            gx_mean = (g * xhat).mean(axis=axes).reshape(pshape)
            dx = scale * (g - g_mean - xhat * gx_mean)
        _ = n  # keep closure explicit about the normalization count
        return dx, dgamma, dbeta

    return _record("batch_norm", (x, gamma, beta), out, grad_fn)


# ---------------------------------------------------------------------------
# backward pass and verification
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(t) for every tensor reachable from ``loss``.

    Returns the gradient map and additionally adds each leaf's gradient into
    its ``.grad`` accumulator. Gradients sum when a tensor feeds multiple
    consumers.
    """
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        gout = grads.get(id(node.output))
        if gout is None:
            continue
        for t, gi in zip(node.inputs, node.grad_fn(gout)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                by_id[key] = t
    produced = {id(node.output) for node in tape.nodes}
    result: dict[Tensor, np.ndarray] = {}
    for key, g in grads.items():
        t = by_id[key]
        result[t] = g
        if key not in produced and t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
    return result


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    ``f`` must map the given tensors to a scalar. The numeric side perturbs
    every coordinate of every input by +-eps, so keep the inputs small.
    """
    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
    with Tape() as tape:
        out = f(*inputs)
    if out.size != 1:
        raise ContractError("grad_check requires f to return a scalar")
    gmap = backward(out, tape)

    worst = 0.0
    with no_grad():
        for t in inputs:
            analytic = gmap.get(t)
            flat_analytic = (
                np.zeros(t.size) if analytic is None else analytic.reshape(-1)
            )
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f(*inputs).data)
                flat[i] = orig - eps
                f_minus = float(f(*inputs).data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = flat_analytic[i]
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
