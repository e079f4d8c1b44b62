"""Reverse-mode autodiff over float64 numpy arrays.

Each op records its inputs and a backward closure on the output node.
Calling backward() on a scalar node walks the recorded graph in reverse
topological order and accumulates d(loss)/d(node) into node.grad.
Gradients add at fan-out points, so repeated backward calls without
zero_grad() accumulate.
"""

from __future__ import annotations

import numpy as np

# Floor applied inside every logarithm so saturated probabilities never
# produce -inf. Keep in sync with the feature computations.
LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


def _check(op: str, ok: bool, *shapes):
    if not ok:
        pretty = " vs ".join(str(tuple(s)) for s in shapes)
        raise ShapeError(f"{op}: incompatible shapes {pretty}")


class Value:
    """A node in the computation graph holding a float64 array.

    grad is lazily allocated; it exists only after a backward pass (or an
    explicit zero_grad) has touched the node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def _bump(self, delta):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(
                f"backward: loss must be scalar, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self._bump(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common elementwise cases; everything with a
    # nontrivial rule lives in the module-level functions below.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __abs__(self):
        return absolute(self)


def _lift(x):
    return x if isinstance(x, Value) else Value(x)


def _toposort(root):
    # Iterative DFS: recursion would overflow on long recurrent chains.
    order, state = [], {}
    stack = [root]
    while stack:
        node = stack.pop()
        mark = state.get(id(node), 0)
        if mark == 2:
            continue
        if mark == 1:
            state[id(node)] = 2
            order.append(node)
            continue
        state[id(node)] = 1
        stack.append(node)
        for p in node._parents:
            if state.get(id(p), 0) == 0:
                stack.append(p)
    return order


def parameter(data, rng=None, shape=None):
    """A tracked leaf node. Pass either concrete data or (rng, shape)."""
    if data is None:
        data = rng.standard_normal(shape)
    return Value(np.array(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Value, b: Value) -> Value:
    """Elementwise add; also accepts a trailing-axis row vector for bias."""
    broadcast_bias = a.data.ndim == 2 and b.data.ndim == 1
    _check(
        "add",
        a.data.shape == b.data.shape
        or (broadcast_bias and a.data.shape[1] == b.data.shape[0])
        or b.data.size == 1
        or a.data.size == 1,
        a.data.shape,
        b.data.shape,
    )
    out = Value(a.data + b.data, _parents=(a, b))

    def _backward(g):
        if a.requires_grad:
            a._bump(g if a.data.shape == g.shape else np.sum(g).reshape(a.data.shape))
        if b.requires_grad:
            if b.data.shape == g.shape:
                b._bump(g)
            elif broadcast_bias:
                b._bump(g.sum(axis=0))
            else:
                b._bump(np.sum(g).reshape(b.data.shape))

    out._backward = _backward
    return out


def mul(a: Value, b: Value) -> Value:
    _check("mul", a.data.shape == b.data.shape or b.data.size == 1 or a.data.size == 1,
           a.data.shape, b.data.shape)
    out = Value(a.data * b.data, _parents=(a, b))

    def _backward(g):
        if a.requires_grad:
            ga = g * b.data
            a._bump(ga if a.data.shape == ga.shape else np.sum(ga).reshape(a.data.shape))
        if b.requires_grad:
            gb = g * a.data
            b._bump(gb if b.data.shape == gb.shape else np.sum(gb).reshape(b.data.shape))

    out._backward = _backward
    return out


def scale(a: Value, s: float) -> Value:
    out = Value(a.data * s, _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g * s)

    out._backward = _backward
    return out


def relu(a: Value) -> Value:
    out = Value(np.maximum(a.data, 0.0), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g * (a.data > 0.0))

    out._backward = _backward
    return out


def tanh(a: Value) -> Value:
    t = np.tanh(a.data)
    out = Value(t, _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g * (1.0 - t * t))

    out._backward = _backward
    return out


def sigmoid(a: Value) -> Value:
    # Stable in both tails.
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Value(s, _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g * s * (1.0 - s))

    out._backward = _backward
    return out


def log(a: Value) -> Value:
    """Natural log with the global floor; gradient uses the floored input."""
    floored = np.maximum(a.data, LOG_FLOOR)
    out = Value(np.log(floored), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g * np.where(a.data > LOG_FLOOR, 1.0 / floored, 0.0))

    out._backward = _backward
    return out


def absolute(a: Value) -> Value:
    out = Value(np.abs(a.data), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g * np.sign(a.data))

    out._backward = _backward
    return out


def sum_all(a: Value) -> Value:
    out = Value(a.data.sum(), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(np.full_like(a.data, float(g)))

    out._backward = _backward
    return out


def mean_all(a: Value) -> Value:
    n = a.data.size
    out = Value(a.data.mean(), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(np.full_like(a.data, float(g) / n))

    out._backward = _backward
    return out


def mean_axis0(a: Value) -> Value:
    n = a.data.shape[0]
    out = Value(a.data.mean(axis=0), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(np.broadcast_to(g / n, a.data.shape).copy())

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Value, shape) -> Value:
    out = Value(a.data.reshape(shape), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            a._bump(g.reshape(a.data.shape))

    out._backward = _backward
    return out


def slice_cols(a: Value, lo: int, hi: int) -> Value:
    _check("slice_cols", a.data.ndim == 2 and 0 <= lo < hi <= a.data.shape[1],
           a.data.shape, (lo, hi))
    out = Value(a.data[:, lo:hi].copy(), _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, lo:hi] = g
            a._bump(full)

    out._backward = _backward
    return out


def concat_rows(a: Value, b: Value) -> Value:
    _check("concat_rows", a.data.ndim == 2 and b.data.ndim == 2
           and a.data.shape[1] == b.data.shape[1], a.data.shape, b.data.shape)
    out = Value(np.concatenate([a.data, b.data], axis=0), _parents=(a, b))
    cut = a.data.shape[0]

    def _backward(g):
        if a.requires_grad:
            a._bump(g[:cut])
        if b.requires_grad:
            b._bump(g[cut:])

    out._backward = _backward
    return out


def tile_cols(a: Value, reps: int) -> Value:
    """Repeat the whole column block reps times: (N,D) -> (N, D*reps)."""
    _check("tile_cols", a.data.ndim == 2 and reps >= 1, a.data.shape, (reps,))
    out = Value(np.tile(a.data, (1, reps)), _parents=(a,))
    d = a.data.shape[1]

    def _backward(g):
        if a.requires_grad:
            a._bump(g.reshape(g.shape[0], reps, d).sum(axis=1))

    out._backward = _backward
    return out


def concat_cols(values) -> Value:
    values = list(values)
    _check("concat_cols", all(v.data.ndim == 2 for v in values),
           *(v.data.shape for v in values))
    out = Value(np.concatenate([v.data for v in values], axis=1),
                _parents=tuple(values))
    offsets = np.cumsum([0] + [v.data.shape[1] for v in values])

    def _backward(g):
        for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                v._bump(g[:, lo:hi])

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Value, b: Value) -> Value:
    _check("matmul", a.data.ndim == 2 and b.data.ndim == 2
           and a.data.shape[1] == b.data.shape[0], a.data.shape, b.data.shape)
    out = Value(a.data @ b.data, _parents=(a, b))

    def _backward(g):
        if a.requires_grad:
            a._bump(g @ b.data.T)
        if b.requires_grad:
            b._bump(a.data.T @ g)

    out._backward = _backward
    return out


def softmax(a: Value) -> Value:
    """Row softmax over the last axis (the class axis)."""
    _check("softmax", a.data.ndim == 2 and a.data.shape[-1] > 0, a.data.shape)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Value(p, _parents=(a,))

    def _backward(g):
        if a.requires_grad:
            inner = (g * p).sum(axis=-1, keepdims=True)
            a._bump(p * (g - inner))

    out._backward = _backward
    return out


def conv1d(x: Value, w: Value, b: Value, stride: int = 1) -> Value:
    """Valid cross-correlation: x (N,Cin,L), w (Cout,Cin,k), b (Cout,)."""
    _check("conv1d", x.data.ndim == 3 and w.data.ndim == 3
           and x.data.shape[1] == w.data.shape[1]
           and x.data.shape[2] >= w.data.shape[2],
           x.data.shape, w.data.shape)
    n, cin, length = x.data.shape
    cout, _, k = w.data.shape
    lout = (length - k) // stride + 1
    # (N, Cin, Lout, k) windows -> (N, Lout, Cin*k) for one big matmul.
    win = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride]
    cols = win.transpose(0, 2, 1, 3).reshape(n, lout, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    y = cols @ wmat.T + b.data
    out = Value(y.transpose(0, 2, 1).copy(), _parents=(x, w, b))

    def _backward(g):
        gy = g.transpose(0, 2, 1)  # (N, Lout, Cout)
        if b.requires_grad:
            b._bump(gy.sum(axis=(0, 1)))
        if w.requires_grad:
            gw = np.tensordot(gy, cols, axes=([0, 1], [0, 1]))  # (Cout, Cin*k)
            w._bump(gw.reshape(cout, cin, k))
        if x.requires_grad:
            gcols = gy @ wmat  # (N, Lout, Cin*k)
            gcols = gcols.reshape(n, lout, cin, k).transpose(0, 2, 1, 3)
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, :, j:j + stride * lout:stride] += gcols[:, :, :, j]
            x._bump(gx)

    out._backward = _backward
    return out


def batchnorm(x: Value, gamma: Value, beta: Value, mean, var, eps: float,
              batch_stats: bool) -> Value:
    """Normalize per channel. 2D input (N,F) or 3D (N,C,L).

    batch_stats=True means mean/var were computed from x itself (training),
    which couples them into the backward rule; False treats them as fixed
    running statistics (evaluation).
    """
    _check("batchnorm", x.data.ndim in (2, 3), x.data.shape)
    axes = (0,) if x.data.ndim == 2 else (0, 2)
    shape = (1, -1) if x.data.ndim == 2 else (1, -1, 1)
    m = mean.reshape(shape)
    v = var.reshape(shape)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m) * inv
    out = Value(xhat * gamma.data.reshape(shape) + beta.data.reshape(shape),
                _parents=(x, gamma, beta))

    def _backward(g):
        if gamma.requires_grad:
            gamma._bump((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._bump(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if batch_stats:
                mu_g = gxhat.mean(axis=axes).reshape(shape)
                mu_gx = (gxhat * xhat).mean(axis=axes).reshape(shape)
                x._bump(inv * (gxhat - mu_g - xhat * mu_gx))
            else:
                x._bump(gxhat * inv)

    out._backward = _backward
    return out


def grad_reversal(x: Value, lam: float) -> Value:
    """Identity on forward; multiplies the upstream gradient by -lam."""
    out = Value(x.data, _parents=(x,))

    def _backward(g):
        if x.requires_grad:
            x._bump(g * (-lam))

    out._backward = _backward
    return out
