"""Differentiable tensor kernels on a reverse-mode gradient tape.

The kernel set is deliberately minimal: it contains exactly the operations
needed to express the behaviour-fusion model (attention, convolutions,
pooling, LSTM gates, layer norm, losses) plus a finite-difference oracle
(`grad_check`) that verifies every analytic gradient.

Tensors are numpy-backed, row-major, f32 by default and f64 on gradient
verification paths. A `Tape` records operations in creation order, which is
already a topological order (inputs exist before the op that consumes them),
so `backward` is a single reverse sweep. One tape is single-threaded;
tensors that are not on a tape are plain immutable values.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DimensionError, ParameterError, UsageError

DEFAULT_DTYPE = np.float32

# one active-tape stack per thread, so independent runs can train concurrently
_TAPES = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TAPES, "stack", None)
    if stack is None:
        stack = _TAPES.stack = []
    return stack


def _current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional array, optionally tracked on a gradient tape.

    `node` is the id of this tensor's tape node and is only meaningful
    while `_tape` refers to a live tape; parameters get re-registered
    each time they participate in a new tape.
    """

    __slots__ = ("data", "requires_grad", "node", "_tape")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.node: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    """A trainable tensor: watched automatically by any tape it touches."""
    return Tensor(data, dtype=dtype, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "backward", "tensor")

    def __init__(self, op, inputs, backward, tensor):
        self.op = op
        self.inputs = inputs      # tuple of node ids (None for untracked inputs)
        self.backward = backward  # grad_out -> tuple of grads aligned with inputs
        self.tensor = tensor


class Tape:
    """Ordered operation record for one forward pass.

    Nodes are appended in creation order; because an op's inputs must exist
    before the op runs, that order is topological and `backward` visits it
    exactly in reverse. The tape is locked once backward begins: recording
    further ops on it raises `UsageError`.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gradients: dict[int, Tensor] = {}
        self._locked = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def _wants(self, t: Tensor) -> bool:
        return t.requires_grad or (t._tape is self and t.node is not None)

    def _ensure_id(self, t: Tensor) -> int:
        if t._tape is self and t.node is not None:
            return t.node
        node_id = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None, t))
        t._tape = self
        t.node = node_id
        return node_id

    def _record(self, op: str, ids: tuple, out_data: np.ndarray, backward) -> Tensor:
        if self._locked:
            raise UsageError("tape is locked: backward already ran on it")
        out = Tensor(out_data)
        node_id = len(self.nodes)
        self.nodes.append(_Node(op, ids, backward, out))
        out._tape = self
        out.node = node_id
        return out

    def backward(self, loss: Tensor) -> None:
        """Populate gradients for every tracked tensor reachable from `loss`."""
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss.node is None:
            raise UsageError("loss tensor is not recorded on this tape")
        if self._locked:
            raise UsageError("backward already ran on this tape")
        self._locked = True

        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for node_id in range(loss.node, -1, -1):
            g = grads.get(node_id)
            if g is None:
                continue
            node = self.nodes[node_id]
            if node.backward is None:
                continue
            for input_id, gi in zip(node.inputs, node.backward(g)):
                if input_id is None or gi is None:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + gi
                else:
                    grads[input_id] = gi
        self.gradients = {nid: Tensor(g) for nid, g in grads.items()}

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward pass w.r.t. `t` (zeros if unreached)."""
        if not self._locked:
            raise UsageError("grad() called before backward()")
        if t._tape is self and t.node is not None and t.node in self.gradients:
            return self.gradients[t.node].data
        return np.zeros_like(t.data)


def _apply(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    tape = _current_tape()
    if tape is None or not any(tape._wants(t) for t in inputs):
        return Tensor(out_data)
    ids = tuple(tape._ensure_id(t) if tape._wants(t) else None for t in inputs)
    return tape._record(op, ids, out_data, backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _apply("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _apply("sub", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _apply("mul", (a, b), out,
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _apply("neg", (x,), -x.data, lambda g: (-g,))


def scale(x, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated w.r.t. `c`)."""
    x = as_tensor(x)
    return _apply("scale", (x,), x.data * c, lambda g: (g * c,))


# ---------------------------------------------------------------------------
# activations

def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    return _apply("relu", (x,), out, lambda g: (g * (x.data > 0),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = out.astype(d.dtype)
    return _apply("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _apply("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ParameterError(f"unknown activation kind {kind!r}, expected 'relu' or 'sigmoid'")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _apply("softmax", (x,), out, backward)


# ---------------------------------------------------------------------------
# matrix / affine ops

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _apply("matmul", (a, b), out,
                  lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b) -> Tensor:
    """x @ w + b with w of shape (in, out); leading dims of x are batch."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise DimensionError(f"linear weight/bias shapes invalid: {w.shape}, {b.shape}")
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"linear input dim {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ w.data + b.data).reshape(lead + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        return (g2 @ w.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    return _apply("linear", (x, w, b), out, backward)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _apply("transpose", (x,), out,
                  lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size and -1 not in shape:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)
    return _apply("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {x.shape} to {tuple(shape)}") from e
    return _apply("broadcast_to", (x,), out,
                  lambda g: (_unbroadcast(g, x.shape),))


def take_row(x, i: int) -> Tensor:
    """Row i of a 2-d tensor as shape (1, D)."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"take_row needs a 2-d tensor, got {x.shape}")
    if not 0 <= i < x.shape[0]:
        raise DimensionError(f"row {i} out of range for shape {x.shape}")
    out = x.data[i : i + 1].copy()

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[i : i + 1] = g
        return (dx,)

    return _apply("take_row", (x,), out, backward)


# ---------------------------------------------------------------------------
# concatenation

def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise UsageError("concat needs at least one tensor")
    ref = list(xs[0].shape)
    axis = axis % len(ref)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(
            o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis
        ):
            raise DimensionError(
                f"concat extents mismatch off axis {axis}: {xs[0].shape} vs {x.shape}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _apply("concat", tuple(xs), out, backward)


def broadcast_concat(x, v, axis: int = 0) -> Tensor:
    """Append vector `v` at every position along all non-`axis` dims.

    The `axis` extent grows by len(v); an empty vector is the identity.
    """
    x, v = as_tensor(x), as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError(f"broadcast_concat vector must be rank 1, got {v.shape}")
    if v.size == 0:
        return x
    axis = axis % x.data.ndim
    vshape = [1] * x.data.ndim
    vshape[axis] = v.size
    target = list(x.shape)
    target[axis] = v.size
    vb = np.broadcast_to(v.data.reshape(vshape), target)
    out = np.concatenate([x.data, vb], axis=axis)
    c = x.shape[axis]
    sum_axes = tuple(i for i in range(x.data.ndim) if i != axis)

    def backward(g):
        gx = np.ascontiguousarray(np.take(g, range(c), axis=axis))
        gv = np.take(g, range(c, c + v.size), axis=axis).sum(axis=sum_axes)
        return gx, gv

    return _apply("broadcast_concat", (x, v), out, backward)


# ---------------------------------------------------------------------------
# pooling and convolution (valid, no padding)

def _window_args(x: Tensor, kernel, stride, op: str):
    kernel = tuple(int(k) for k in kernel)
    stride = tuple(int(s) for s in stride)
    if len(kernel) != len(stride):
        raise DimensionError(f"{op}: kernel {kernel} and stride {stride} rank differ")
    if any(k <= 0 for k in kernel) or any(s <= 0 for s in stride):
        raise ParameterError(f"{op}: kernel and stride must be positive")
    if len(kernel) > x.data.ndim:
        raise DimensionError(f"{op}: kernel rank {len(kernel)} exceeds tensor rank")
    spatial = x.shape[x.data.ndim - len(kernel):]
    if any(n < k for n, k in zip(spatial, kernel)):
        raise DimensionError(
            f"{op}: kernel {kernel} larger than input extents {spatial}")
    return kernel, stride


def pool_max(x, kernel, stride) -> Tensor:
    """Max pooling over the trailing len(kernel) dims; leading dims pass through.

    Output extent per pooled dim is floor((in - kernel) / stride) + 1. On ties
    the gradient routes to the first occurrence in row-major window order.
    """
    x = as_tensor(x)
    kernel, stride = _window_args(x, kernel, stride, "pool_max")
    k = len(kernel)
    lead = x.data.ndim - k
    win = sliding_window_view(x.data, kernel, axis=tuple(range(lead, x.data.ndim)))
    slicer = (slice(None),) * lead + tuple(slice(None, None, s) for s in stride)
    win = win[slicer + (slice(None),) * k]
    out = win.max(axis=tuple(range(win.ndim - k, win.ndim)))

    def backward(g):
        flat = win.reshape(out.shape + (-1,))
        arg = flat.argmax(axis=-1)
        offs = np.unravel_index(arg, kernel)
        grids = np.indices(out.shape)
        coords = [grids[d] for d in range(lead)]
        coords += [grids[lead + i] * stride[i] + offs[i] for i in range(k)]
        lin = np.ravel_multi_index(coords, x.shape)
        dx = np.zeros(x.size, dtype=g.dtype)
        np.add.at(dx, lin.ravel(), g.ravel())
        return (dx.reshape(x.shape),)

    return _apply("pool_max", (x,), out, backward)


def convolve(x, kernels, bias, stride=1, spatial_rank: int | None = None) -> Tensor:
    """Valid cross-correlation of (C_in, *spatial) with (C_out, C_in, *k) kernels.

    Adds a per-kernel bias; output channels equal the kernel count.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if spatial_rank is None:
        spatial_rank = x.data.ndim - 1
    if spatial_rank not in (1, 2, 3):
        raise ParameterError(f"convolve spatial_rank must be 1, 2 or 3, got {spatial_rank}")
    if x.data.ndim != spatial_rank + 1 or kernels.data.ndim != spatial_rank + 2:
        raise DimensionError(
            f"convolve ranks invalid: input {x.shape}, kernels {kernels.shape}, "
            f"spatial_rank {spatial_rank}")
    c_out, c_in = kernels.shape[0], kernels.shape[1]
    if x.shape[0] != c_in:
        raise DimensionError(
            f"convolve channel mismatch: input has {x.shape[0]}, kernels expect {c_in}")
    if bias.data.ndim != 1 or bias.shape[0] != c_out:
        raise DimensionError(f"convolve bias shape {bias.shape} != ({c_out},)")
    ksp = kernels.shape[2:]
    if isinstance(stride, int):
        stride = (stride,) * spatial_rank
    stride = tuple(int(s) for s in stride)
    sp = x.shape[1:]
    if any(n < k for n, k in zip(sp, ksp)):
        raise DimensionError(f"convolve kernel {ksp} larger than input extents {sp}")

    win = sliding_window_view(x.data, (c_in,) + ksp)[0]
    win = win[tuple(slice(None, None, s) for s in stride)]
    out_sp = win.shape[:spatial_rank]
    wf = win.reshape(-1, c_in * int(np.prod(ksp)))
    kf = kernels.data.reshape(c_out, -1)
    out = (wf @ kf.T).T.reshape((c_out,) + out_sp)
    out = out + bias.data.reshape((c_out,) + (1,) * spatial_rank)

    def backward(g):
        gf = g.reshape(c_out, -1)
        dk = (gf @ wf).reshape(kernels.shape)
        db = gf.sum(axis=1)
        dx = np.zeros_like(x.data)
        for off in np.ndindex(*ksp):
            contrib = np.tensordot(kernels.data[(slice(None), slice(None)) + off],
                                   g, axes=([0], [0]))
            sl = tuple(slice(o, o + s * n, s) for o, s, n in zip(off, stride, out_sp))
            dx[(slice(None),) + sl] += contrib
        return dx, dk, db

    return _apply("convolve", (x, kernels, bias), out, backward)


# ---------------------------------------------------------------------------
# regularization / normalization

def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Zero elements with probability p and rescale survivors by 1/(1-p).

    Inference (training=False) and p=0 are bit-exact identities.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p)
    factor = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep.astype(x.dtype) * factor
    out = x.data * mask
    return _apply("dropout", (x,), out, lambda g: (g * mask,))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm gamma/beta must be ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data
    lead = tuple(range(x.data.ndim - 1))

    def backward(g):
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _apply("layer_norm", (x, gamma, beta), out, backward)


# ---------------------------------------------------------------------------
# reductions and losses

def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _apply("sum_all", (x,), out,
                  lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),))


def median_rows(x) -> Tensor:
    """Median over axis 0, keepdims: (M, D) -> (1, D).

    Odd M routes the gradient to the middle order statistic; even M splits it
    half/half between the two middle values (matching numpy's median).
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"median_rows needs a 2-d tensor, got {x.shape}")
    m = x.shape[0]
    if m == 0:
        raise UsageError("median_rows needs at least one row")
    out = np.median(x.data, axis=0, keepdims=True)

    def backward(g):
        order = np.argsort(x.data, axis=0, kind="stable")
        w = np.zeros_like(x.data)
        cols = np.arange(x.shape[1])
        if m % 2 == 1:
            w[order[m // 2, :], cols] = 1.0
        else:
            w[order[m // 2 - 1, :], cols] = 0.5
            w[order[m // 2, :], cols] += 0.5
        return (w * g,)

    return _apply("median_rows", (x,), out, backward)


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements, as a scalar tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = pred.size
    out = np.asarray((diff * diff).sum() / n, dtype=diff.dtype)

    def backward(g):
        base = (2.0 / n) * diff * g
        return base, -base

    return _apply("mse", (pred, target), out, backward)


def clamp01(x: Tensor) -> Tensor:
    """Clip to [0, 1]. Inference-only helper; never recorded on a tape."""
    return Tensor(np.clip(as_tensor(x).data, 0.0, 1.0))


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check(f: Callable, xs, eps: float = 1e-6,
               max_coords: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps the given tensors to a scalar tensor and must be deterministic.
    All checked tensors must be f64; finite differences are unreliable at f32.
    When `max_coords` is set, at most that many coordinates per tensor are
    probed (sampled from `rng`), which keeps large models tractable.
    """
    if isinstance(xs, Tensor):
        xs = [xs]
    xs = list(xs)
    for x in xs:
        if x.dtype != np.float64:
            raise UsageError(f"grad_check needs f64 tensors, got {x.dtype}")
        x.requires_grad = True

    with Tape() as tape:
        out = f(*xs)
        if out.data.size != 1:
            raise UsageError(f"grad_check needs a scalar-valued f, got shape {out.shape}")
        tape.backward(out)
        analytic = [tape.grad(x).copy() for x in xs]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for x, a in zip(xs, analytic):
        n = x.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        flat = x.data.reshape(-1)
        a_flat = a.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f(*xs).item()
            flat[c] = orig - eps
            fm = f(*xs).item()
            flat[c] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(a_flat[c] - num) / max(abs(a_flat[c]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# MPRT tensor file format

_MPRT_MAGIC = b"MPRT"
_MPRT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_tensor(path, tensor) -> None:
    """Write an array to `path` in the MPRT format.

    Layout: magic 'MPRT', u8 version=1, u8 dtype (0=f32, 1=f64), u8 rank,
    rank x u32 little-endian extents, then the row-major little-endian payload.
    """
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise DataError(f"MPRT supports f32/f64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise DataError("MPRT rank limit is 255")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBBB", _MPRT_MAGIC, _MPRT_VERSION, code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())


def load_tensor(path) -> np.ndarray:
    """Read an MPRT file back into a numpy array."""
    with open(path, "rb") as fh:
        head = fh.read(7)
        if len(head) != 7:
            raise DataError(f"{path}: truncated MPRT header")
        magic, version, code, rank = struct.unpack("<4sBBB", head)
        if magic != _MPRT_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected 'MPRT'")
        if version != _MPRT_VERSION:
            raise DataError(f"{path}: unsupported MPRT version {version}")
        if code not in _CODE_DTYPES:
            raise DataError(f"{path}: unknown dtype code {code}")
        ext = fh.read(4 * rank)
        if len(ext) != 4 * rank:
            raise DataError(f"{path}: truncated extent table")
        shape = struct.unpack(f"<{rank}I", ext)
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise DataError(f"{path}: payload shorter than extents imply")
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)
