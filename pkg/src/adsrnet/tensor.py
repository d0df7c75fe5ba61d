"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a :class:`Tensor` of shape
``(N, C, H, W)``.  Operations are plain functions; each one records its
inputs and a gradient closure on the output whenever any input requires a
gradient.  :func:`backward` replays those records in reverse creation order.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "backward",
    "concat_channels",
    "default_dtype",
    "fully_connected",
    "global_avg_pool",
    "mul",
    "no_grad",
    "precision",
    "relu",
    "softmax_temperature",
    "tensor_sum",
]

_DTYPE = np.dtype(np.float32)
_RECORDING = True
_sequence = itertools.count()

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def default_dtype() -> np.dtype:
    return _DTYPE


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Temporarily switch the dtype used for newly created tensors.

    >>> with precision(np.float64):
    ...     Tensor(np.zeros((1, 1, 1, 1))).dtype
    dtype('float64')
    """
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    previous, _DTYPE = _DTYPE, dtype
    try:
        yield dtype
    finally:
        _DTYPE = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. for inference on large images."""
    global _RECORDING
    previous, _RECORDING = _RECORDING, False
    try:
        yield
    finally:
        _RECORDING = previous


class Tensor:
    """A 4-D array in ``(N, C, H, W)`` order with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_grad_fn", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.ascontiguousarray(data, dtype=dtype or _DTYPE)
        if array.ndim != 4:
            raise ValueError(f"Tensor must be 4-D (N, C, H, W), got shape {array.shape}")
        if any(extent < 1 for extent in array.shape):
            raise ValueError(f"Tensor extents must be positive, got shape {array.shape}")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Optional[GradFn] = None
        self._seq = next(_sequence)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)


def _record(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn) -> Tensor:
    """Wrap ``data`` and, if any parent tracks gradients, remember how to backpropagate."""
    out = Tensor(data, dtype=data.dtype)
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _record(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # subgradient at exactly zero is 0
    return _record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def grad_fn(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return _record(out, (x,), grad_fn)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on ``(N, C_in, 1, 1)`` features.

    ``weight`` has shape ``(C_out, C_in, 1, 1)`` and ``bias`` ``(1, C_out, 1, 1)``.
    """
    n, c_in, h, w = x.shape
    c_out = weight.shape[0]
    if (h, w) != (1, 1):
        raise ValueError(f"fully_connected expects (N, C, 1, 1) input, got {x.shape}")
    if weight.shape != (c_out, c_in, 1, 1):
        raise ValueError(f"fully_connected: weight shape {weight.shape} incompatible with input {x.shape}")
    if bias.shape != (1, c_out, 1, 1):
        raise ValueError(f"fully_connected: bias shape {bias.shape}, expected {(1, c_out, 1, 1)}")
    x2 = x.data.reshape(n, c_in)
    w2 = weight.data.reshape(c_out, c_in)
    out = (x2 @ w2.T + bias.data.reshape(1, c_out)).reshape(n, c_out, 1, 1)

    def grad_fn(g):
        g2 = g.reshape(n, c_out)
        return (
            (g2 @ w2).reshape(x.shape),
            (g2.T @ x2).reshape(weight.shape),
            g2.sum(axis=0).reshape(bias.shape),
        )

    return _record(out, (x, weight, bias), grad_fn)


def softmax_temperature(logits: Tensor, tau: float) -> Tensor:
    """Softmax over the channel axis of ``(N, K, 1, 1)`` logits divided by ``tau``."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = logits.data / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / tau,)

    return _record(p, (logits,), grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _record(out, (a, b), lambda g: (g[:, :split], g[:, split:]))


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a ``(1, 1, 1, 1)`` tensor."""
    out = np.asarray(x.data.sum(dtype=x.dtype), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _record(out, (x,), lambda g: (np.full(x.shape, g.item(), dtype=x.dtype),))


def backward(root: Tensor) -> None:
    """Accumulate ``d root / d leaf`` into ``.grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call, so running
    backward twice over the same graph adds the leaf gradients twice.
    """
    if root.shape != (1, 1, 1, 1):
        raise ValueError(f"backward needs a scalar (1, 1, 1, 1) root, got {root.shape}")
    if not root.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=root.dtype)}
    for t in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.is_leaf:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
