"""Reverse-mode automatic differentiation over dense numpy tensors.

Small tape-free engine in the micrograd style: every op closes over its
inputs and appends itself to the graph; `backward()` walks a topological
order once, in a fixed sequence, so gradient accumulation is bit-identical
across runs. Values are float64 internally.
"""

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "no_grad",
    "matmul",
    "relu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding_lookup",
    "cross_entropy",
    "mse",
    "gather",
    "take_rows",
    "concat",
    "straight_through",
]


class ShapeMismatch(ValueError):
    pass


_grad_enabled = [True]


@contextmanager
def no_grad():
    """Disable graph recording (rollouts, evaluation)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def _recording() -> bool:
    return _grad_enabled[-1]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out = _make(self.data + other.data, (self, other))
        if out._parents:

            def bw(g):
                if self.requires_grad or self._parents:
                    self._accum(_unbroadcast(g, self.data.shape))
                if other.requires_grad or other._parents:
                    other._accum(_unbroadcast(g, other.data.shape))

            out._backward = bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._lift(other)
        out = _make(self.data * other.data, (self, other))
        if out._parents:

            def bw(g):
                if self.requires_grad or self._parents:
                    self._accum(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad or other._parents:
                    other._accum(_unbroadcast(g * self.data, other.data.shape))

            out._backward = bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ShapeMismatch("tensor/tensor division not supported; use * and reciprocal constants")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), (self,))
        if out._parents:
            orig = self.data.shape
            out._backward = lambda g: self._accum(g.reshape(orig))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = _make(self.data.transpose(axes), (self,))
        if out._parents:
            inv = np.argsort(axes)
            out._backward = lambda g: self._accum(g.transpose(inv))
        return out

    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:

            def bw(g):
                if axis is None:
                    self._accum(np.broadcast_to(g, self.data.shape).copy())
                else:
                    gg = g if keepdims else np.expand_dims(g, axis)
                    self._accum(np.broadcast_to(gg, self.data.shape).copy())

            out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __getitem__(self, idx):
        out = _make(self.data[idx], (self,))
        if out._parents:

            def bw(g):
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accum(full)

            out._backward = bw
        return out


def _make(data: np.ndarray, inputs: tuple) -> Tensor:
    """Result tensor; records parents only when a graph is live."""
    out = Tensor(data)
    if _recording() and any(t.requires_grad or t._parents for t in inputs):
        out._parents = inputs
    return out


# -- primitives -------------------------------------------------------------


def matmul(a: Tensor, b) -> Tensor:
    b = Tensor._lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b))
    if out._parents:

        def bw(g):
            if a.requires_grad or a._parents:
                a._accum(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
            if b.requires_grad or b._parents:
                b._accum(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

        out._backward = bw
    return out


def relu(x: Tensor) -> Tensor:
    out = _make(np.maximum(x.data, 0.0), (x,))
    if out._parents:
        out._backward = lambda g: x._accum(g * (x.data > 0))
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; -inf logits get exactly zero probability."""
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _make(y, (x,))
    if out._parents:

        def bw(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accum(y * (g - dot))

        out._backward = bw
    return out


def log_softmax(x: Tensor) -> Tensor:
    m = np.max(x.data, axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    lsm = shifted - lse
    out = _make(lsm, (x,))
    if out._parents:

        def bw(g):
            x._accum(g - np.exp(lsm) * g.sum(axis=-1, keepdims=True))

        out._backward = bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(gamma.data * xhat + beta.data, (x, gamma, beta))
    if out._parents:

        def bw(g):
            if beta.requires_grad or beta._parents:
                beta._accum(_unbroadcast(g, beta.data.shape))
            if gamma.requires_grad or gamma._parents:
                gamma._accum(_unbroadcast(g * xhat, gamma.data.shape))
            if x.requires_grad or x._parents:
                dxhat = g * gamma.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accum(inv * (dxhat - m1 - xhat * m2))

        out._backward = bw
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of `table` selected by an integer array; grads scatter-add."""
    ids = np.asarray(ids, dtype=np.intp)
    out = _make(table.data[ids], (table,))
    if out._parents:

        def bw(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accum(full)

        out._backward = bw
    return out


take_rows = embedding_lookup  # same op, clearer name at call sites


def gather(x: Tensor, ids) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.shape != x.shape[:-1]:
        raise ShapeMismatch(f"gather ids {ids.shape} vs x {x.shape}")
    picked = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]
    out = _make(picked, (x,))
    if out._parents:

        def bw(g):
            full = np.zeros_like(x.data)
            np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
            x._accum(full)

        out._backward = bw
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-position negative log-likelihood; shape = logits.shape[:-1]."""
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    m = np.max(logits.data, axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    lsm = shifted - lse
    nll = -np.take_along_axis(lsm, targets[..., None], axis=-1)[..., 0]
    out = _make(nll, (logits,))
    if out._parents:
        probs = np.exp(lsm)

        def bw(g):
            grad = probs * g[..., None]
            np.put_along_axis(
                grad,
                targets[..., None],
                np.take_along_axis(grad, targets[..., None], axis=-1) - g[..., None],
                axis=-1,
            )
            logits._accum(grad)

        out._backward = bw
    return out


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference (scalar)."""
    target = Tensor._lift(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = _make(np.asarray((diff * diff).mean()), (pred, target))
    if out._parents:
        scale = 2.0 / diff.size

        def bw(g):
            if pred.requires_grad or pred._parents:
                pred._accum(scale * diff * g)
            if target.requires_grad or target._parents:
                target._accum(-scale * diff * g)

        out._backward = bw
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad or t._parents:
                    t._accum(piece)

        out._backward = bw
    return out


def straight_through(quantized: Tensor, pre_quant: Tensor) -> Tensor:
    """Forward = quantized; backward passes gradients to pre_quant unchanged."""
    quantized = Tensor._lift(quantized)
    if quantized.shape != pre_quant.shape:
        raise ShapeMismatch(f"{quantized.shape} vs {pre_quant.shape}")
    out = _make(quantized.data.copy(), (pre_quant,))
    if out._parents:
        out._backward = lambda g: pre_quant._accum(g)
    return out
