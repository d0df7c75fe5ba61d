"""Dynamic convolution: an input-dependent convex combination of K kernels.

For each batch item a small attention branch (global average pool, squeeze
dense layer, ReLU, excite dense layer, temperature softmax) produces weights
``pi`` over the K candidate kernels; the item is then convolved with
``sum_k pi_k W_k`` and bias ``sum_k pi_k b_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .conv import KERNEL, _backward, _forward, _pad_flat
from .tensor import Tensor, _record, fully_connected, global_avg_pool, relu, softmax_temperature

__all__ = [
    "DynamicConvLayer",
    "TemperatureSchedule",
    "aggregate_conv",
    "dynamic_conv_forward",
    "temperature_at",
]


@dataclass(frozen=True)
class TemperatureSchedule:
    tau_start: float = 30.0
    tau_end: float = 1.0
    anneal_steps: int = 1

    def __post_init__(self):
        if not (self.tau_start > 0 and self.tau_end > 0):
            raise ValueError(f"temperatures must be positive: {self}")
        if self.anneal_steps < 1:
            raise ValueError(f"anneal_steps must be >= 1: {self}")

    @classmethod
    def for_training(cls, total_steps: int, fraction: float = 0.1, tau_start: float = 30.0, tau_end: float = 1.0):
        """Anneal over the first ``fraction`` of ``total_steps``."""
        return cls(tau_start, tau_end, max(1, math.ceil(fraction * total_steps)))


def temperature_at(step: int, schedule: TemperatureSchedule) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if step >= schedule.anneal_steps:
        return float(schedule.tau_end)
    t = step / schedule.anneal_steps
    return float(schedule.tau_start + (schedule.tau_end - schedule.tau_start) * t)


def aggregate_conv(x: Tensor, attention: Tensor, weights: list[Tensor], biases: list[Tensor]) -> Tensor:
    """Per-item convolution with the attention-weighted kernel (dilation 1).

    ``attention`` is ``(N, K, 1, 1)``; ``weights[k]`` is ``(O, C, 3, 3)`` and
    ``biases[k]`` is ``(1, O, 1, 1)``.
    """
    n, c, h, w = x.shape
    k_count = len(weights)
    if attention.shape != (n, k_count, 1, 1):
        raise ValueError(f"attention shape {attention.shape} does not match batch {n} and K={k_count}")
    if len(biases) != k_count:
        raise ValueError(f"{len(weights)} kernels but {len(biases)} biases")
    if weights[0].shape[1] != c:
        raise ValueError(f"dynamic conv: input has {c} channels, kernels expect {weights[0].shape[1]}")
    o = weights[0].shape[0]
    w_stack = np.stack([wk.data for wk in weights])
    b_stack = np.stack([bk.data.reshape(o) for bk in biases])
    pi = attention.data.reshape(n, k_count)
    xf = _pad_flat(x.data, 1)

    mixed_w = np.tensordot(pi, w_stack, axes=1)
    mixed_b = pi @ b_stack
    parents = (x, attention, *weights, *biases)
    out = np.empty((n, o, h, w), dtype=x.dtype)
    for i in range(n):
        out[i] = _forward(xf[i : i + 1], mixed_w[i], mixed_b[i], h, w, 1)[0]

    def grad_fn(g):
        gx = np.empty_like(x.data)
        g_pi = np.empty_like(pi)
        gw_stack = np.zeros_like(w_stack)
        gb_stack = np.zeros_like(b_stack)
        for i in range(n):
            gxi, gwi, gbi = _backward(g[i : i + 1], mixed_w[i], xf[i : i + 1], 1)
            gx[i] = gxi[0]
            gw_stack += pi[i][:, None, None, None, None] * gwi
            gb_stack += pi[i][:, None] * gbi
            g_pi[i] = np.tensordot(w_stack, gwi, axes=4) + b_stack @ gbi
        return [gx, g_pi.reshape(attention.shape), *gw_stack, *(gb.reshape(1, o, 1, 1) for gb in gb_stack)]

    return _record(out, parents, grad_fn)


@dataclass
class DynamicConvLayer:
    kernels: list[Tensor]
    biases: list[Tensor]
    squeeze_weight: Tensor
    squeeze_bias: Tensor
    excite_weight: Tensor
    excite_bias: Tensor
    temperature: float = field(default=1.0)

    @property
    def K(self) -> int:
        return len(self.kernels)

    @property
    def channels(self) -> int:
        return self.kernels[0].shape[1]

    @classmethod
    def create(cls, channels: int = 64, K: int = 4, reduction: int = 4, rng: Optional[np.random.Generator] = None):
        """Fan-in scaled normal kernels, zero biases, zero excite layer (uniform attention at start)."""
        if K < 1:
            raise ValueError(f"K must be >= 1, got {K}")
        rng = rng or np.random.default_rng()
        hidden = channels // reduction
        std = math.sqrt(2.0 / (channels * KERNEL * KERNEL))
        kernels = [
            Tensor(rng.normal(0.0, std, (channels, channels, KERNEL, KERNEL)), requires_grad=True)
            for _ in range(K)
        ]
        biases = [Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True) for _ in range(K)]
        squeeze_w = Tensor(rng.normal(0.0, math.sqrt(2.0 / channels), (hidden, channels, 1, 1)), requires_grad=True)
        return cls(
            kernels,
            biases,
            squeeze_w,
            Tensor(np.zeros((1, hidden, 1, 1)), requires_grad=True),
            Tensor(np.zeros((K, hidden, 1, 1)), requires_grad=True),
            Tensor(np.zeros((1, K, 1, 1)), requires_grad=True),
        )

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for k, (w, b) in enumerate(zip(self.kernels, self.biases)):
            yield f"kernel{k}.weight", w
            yield f"kernel{k}.bias", b
        yield "attn.squeeze.weight", self.squeeze_weight
        yield "attn.squeeze.bias", self.squeeze_bias
        yield "attn.excite.weight", self.excite_weight
        yield "attn.excite.bias", self.excite_bias

    def attention(self, x: Tensor, tau: Optional[float] = None) -> Tensor:
        pooled = global_avg_pool(x)
        hidden = relu(fully_connected(pooled, self.squeeze_weight, self.squeeze_bias))
        logits = fully_connected(hidden, self.excite_weight, self.excite_bias)
        return softmax_temperature(logits, self.temperature if tau is None else tau)

    def __call__(self, x: Tensor, tau: Optional[float] = None) -> Tensor:
        return dynamic_conv_forward(x, self, tau)


def dynamic_conv_forward(x: Tensor, layer: DynamicConvLayer, tau: Optional[float] = None) -> Tensor:
    if x.shape[1] != layer.channels:
        raise ValueError(f"dynamic conv: input has {x.shape[1]} channels, layer expects {layer.channels}")
    pi = layer.attention(x, tau)
    return aggregate_conv(x, pi, layer.kernels, layer.biases)
