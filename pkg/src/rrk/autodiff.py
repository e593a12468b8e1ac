"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run tape over numpy arrays: each op returns a Tensor holding the
forward value plus a closure that routes the upstream gradient to its
parents. backward() walks the graph in reverse topological order exactly
once. Training runs in float64; the raw kernels (softmax, layer norm,
gelu) are shared with the tape-free inference path in model.py.
"""

from __future__ import annotations

import numpy as np

LAYERNORM_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)


# ---------------------------------------------------------------------------
# kernels (used by both the tape ops below and the inference fast path)


def k_softmax(x: np.ndarray) -> np.ndarray:
    """Row softmax over the last axis with max-subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def k_layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Normalize the last axis; returns (y, xhat, inv_std) for backward."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = centered * inv_std
    return xhat * gain + bias, xhat, inv_std


def k_gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximate gelu (smooth everywhere, finite-difference friendly)."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


# ---------------------------------------------------------------------------


class Tensor:
    """Array node in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable node."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return  # constant loss: all gradients are identically zero

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar for the handful of places it reads better
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an upstream gradient down to a broadcast operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _node(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _node(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product supporting (..., m, k) @ (k, n) and matched batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), backward)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _node(np.transpose(a.data, axes), (a,), backward)


def swap_last(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, -1, -2))

    return _node(np.swapaxes(a.data, -1, -2), (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _node(a.data.reshape(shape), (a,), backward)


def gather(a, idx) -> Tensor:
    """Rows of a along axis 0: out = a[idx], idx any integer array."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return _node(a.data[idx], (a,), backward)


def take_positions(x, pos) -> Tensor:
    """Per-sample row selection: x (B, S, D), pos (B, K) -> (B, K, D)."""
    x = as_tensor(x)
    pos = np.asarray(pos, dtype=np.int64)
    batch_idx = np.arange(x.shape[0])[:, None]

    def backward(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            np.add.at(acc, (batch_idx, pos), g)
            x._accumulate(acc)

    return _node(x.data[batch_idx, pos], (x,), backward)


def scatter_positions(values, pos, seq_len: int) -> Tensor:
    """Inverse of take_positions: place (B, K, D) rows at per-sample positions.

    Returns (B, seq_len, D), zero everywhere else; positions must be unique
    within each sample.
    """
    values = as_tensor(values)
    pos = np.asarray(pos, dtype=np.int64)
    B, K, D = values.shape
    batch_idx = np.arange(B)[:, None]
    out = np.zeros((B, seq_len, D))
    out[batch_idx, pos] = values.data

    def backward(g):
        if values.requires_grad:
            values._accumulate(g[batch_idx, pos])

    return _node(out, (values,), backward)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p._accumulate(piece)

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def row_softmax(x) -> Tensor:
    """Softmax over the last axis; rows sum to one."""
    x = as_tensor(x)
    y = k_softmax(x.data)

    def backward(g):
        if x.requires_grad:
            dot = np.sum(g * y, axis=-1, keepdims=True)
            x._accumulate((g - dot) * y)

    return _node(y, (x,), backward)


def layer_norm(x, gain, bias) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs a feature axis of size >= 2")
    y, xhat, inv_std = k_layernorm(x.data, gain.data, bias.data)

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gx - m1 - xhat * m2) * inv_std)

    return _node(y, (x, gain, bias), backward)


def gelu(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * _gelu_grad(x.data))

    return _node(k_gelu(x.data), (x,), backward)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g) / n))

    return _node(x.data.mean(), (x,), backward)


def cross_entropy_logits(logits, targets, weights) -> Tensor:
    """Weighted mean token cross-entropy.

    logits (N, V), targets (N,) int ids, weights (N,) non-negative; the
    loss is sum(w_i * nll_i) / sum(w_i). Backward uses softmax - onehot.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("cross_entropy_logits: weights sum to zero")
    rows = np.arange(targets.shape[0])
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    nll = lse - shifted[rows, targets]
    probs = k_softmax(logits.data)
    loss = float((nll * weights).sum() / total)

    def backward(g):
        if logits.requires_grad:
            d = probs.copy()
            d[rows, targets] -= 1.0
            d *= (weights / total)[:, None] * float(g)
            logits._accumulate(d)

    return _node(np.float64(loss), (logits,), backward)


def mse_loss(pred, target) -> Tensor:
    """Mean squared error between equal-length vectors."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss length mismatch: {pred.shape} vs {target.shape}")
    if pred.data.size < 1:
        raise ValueError("mse_loss needs at least one element")
    diff = sub(pred, target)
    return mean_all(mul(diff, diff))
