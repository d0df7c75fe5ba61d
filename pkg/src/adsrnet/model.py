"""ADSRNet assembly, its ablation variants, and parameter/FLOP accounting.

The full network runs two 16-layer branches on the low-resolution input:

* the heterogeneous upper network (one Conv+ReLU unit followed by five
  heterogeneous blocks, each ``plain(dynamic(dilated(x))) + x``), and
* the symmetric lower network (16 Conv+ReLU units whose first eight outputs
  are added back in mirror order before layers 10..16 and to the output),

fuses them by elementwise product (or channel concatenation), and maps the
result to RGB with a sub-pixel construction block.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Mapping, Optional

import numpy as np

from .conv import KERNEL, conv2d, pixel_shuffle
from .dynamic import DynamicConvLayer, dynamic_conv_forward
from .tensor import Tensor, add, concat_channels, mul, no_grad, relu

__all__ = [
    "BLOCK_LAYOUTS",
    "FUSIONS",
    "SCALES",
    "VARIANTS",
    "ModelConfig",
    "Network",
    "ParameterSet",
    "adsrnet_forward",
    "build_variant",
    "construction_block",
    "conv_flops",
    "count_parameters",
    "cru",
    "estimate_flops",
    "heterogeneous_block",
    "hunet_forward",
    "init_parameters",
    "parameter_shapes",
    "slnet_forward",
    "stacked_cru_forward",
]

SCALES = (2, 3, 4)
FUSIONS = ("multiply", "concat")
VARIANTS = (
    "full",
    "six_cru_cb",
    "hb_plain",
    "hb_no_dynamic",
    "hb_no_dilated",
    "hb_cru_for_dilated",
    "hb_cru_for_dynamic",
    "hunet_only",
    "no_sl_residual",
)

# (slot name, layer kind) per heterogeneous block; kinds are dilated | dynamic | plain
_FULL_BLOCK = (("dilated", "dilated"), ("dynamic", "dynamic"), ("plain", "plain"))
BLOCK_LAYOUTS: dict[str, tuple[tuple[str, str], ...]] = {
    "full": _FULL_BLOCK,
    "hunet_only": _FULL_BLOCK,
    "no_sl_residual": _FULL_BLOCK,
    "hb_plain": (("plain", "plain"),),
    "hb_no_dynamic": (("dilated", "dilated"), ("plain", "plain")),
    "hb_no_dilated": (("dynamic", "dynamic"), ("plain", "plain")),
    "hb_cru_for_dilated": (("plain0", "plain"), ("dynamic", "dynamic"), ("plain", "plain")),
    "hb_cru_for_dynamic": (("dilated", "dilated"), ("plain0", "plain"), ("plain", "plain")),
}

DILATION = {"dilated": 2, "plain": 1}
SLNET_DEPTH = 16
STACKED_CRU_DEPTH = 6

Trace = Optional[list]


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    variant: str = "full"
    K: int = 4
    fusion: str = "multiply"
    channels: int = 64
    hb_count: int = 5
    reduction: int = 4

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unsupported scale {self.scale}; expected one of {SCALES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.channels < 1 or self.hb_count < 1 or self.reduction < 1 or self.channels // self.reduction < 1:
            raise ValueError(f"invalid structural sizes in {self}")

    @property
    def has_hunet(self) -> bool:
        return self.variant != "six_cru_cb"

    @property
    def has_slnet(self) -> bool:
        return self.variant in ("full", "no_sl_residual")

    @property
    def sl_residual(self) -> bool:
        return self.variant == "full"

    @property
    def block_layout(self) -> tuple[tuple[str, str], ...]:
        return BLOCK_LAYOUTS.get(self.variant, ())

    @property
    def cb_in_channels(self) -> int:
        if self.has_slnet and self.fusion == "concat":
            return 2 * self.channels
        return self.channels

    def canonical_text(self) -> str:
        return "".join(f"model.{k}={v}\n" for k, v in sorted(asdict(self).items()))

    def fingerprint(self) -> int:
        """64-bit hash of :meth:`canonical_text`."""
        digest = hashlib.sha256(self.canonical_text().encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")


class ParameterSet(Mapping[str, Tensor]):
    """Ordered, uniquely named trainable tensors."""

    def __init__(self, items: Optional[Iterator[tuple[str, Tensor]]] = None):
        self._params: dict[str, Tensor] = {}
        for name, tensor in items or ():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.name = name
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Copy values in, requiring exactly matching names and shapes."""
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            value = np.asarray(arrays[name])
            if value.shape != t.shape:
                raise ValueError(f"parameter {name!r}: shape {value.shape}, expected {t.shape}")
            t.data = np.ascontiguousarray(value, dtype=t.dtype)
        extra = set(arrays) - set(self._params)
        if extra:
            raise KeyError(f"unexpected parameter {sorted(extra)[0]!r}")


# ---------------------------------------------------------------- layers


def _note(trace: Trace, *event) -> None:
    if trace is not None:
        trace.append(event)


def cru(x: Tensor, params: Mapping[str, Tensor], prefix: str, dilation: int = 1, trace: Trace = None) -> Tensor:
    """Conv+ReLU unit."""
    _note(trace, "conv", prefix)
    return relu(conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], dilation=dilation))


def _dynamic_layer(params: Mapping[str, Tensor], prefix: str) -> DynamicConvLayer:
    kernels, biases = [], []
    k = 0
    while f"{prefix}.kernel{k}.weight" in params:
        kernels.append(params[f"{prefix}.kernel{k}.weight"])
        biases.append(params[f"{prefix}.kernel{k}.bias"])
        k += 1
    if not kernels:
        raise KeyError(f"missing parameter {prefix + '.kernel0.weight'!r}")
    return DynamicConvLayer(
        kernels,
        biases,
        params[f"{prefix}.attn.squeeze.weight"],
        params[f"{prefix}.attn.squeeze.bias"],
        params[f"{prefix}.attn.excite.weight"],
        params[f"{prefix}.attn.excite.bias"],
    )


def heterogeneous_block(
    o_t: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    layout: tuple[tuple[str, str], ...] = _FULL_BLOCK,
    tau: float = 1.0,
    trace: Trace = None,
) -> Tensor:
    """Run the block's CRUs in order, then add the block input back."""
    h = o_t
    for slot, kind in layout:
        name = f"{prefix}.{slot}"
        if kind == "dynamic":
            _note(trace, "conv", name)
            h = relu(dynamic_conv_forward(h, _dynamic_layer(params, name), tau))
        else:
            h = cru(h, params, name, DILATION[kind], trace)
    _note(trace, "skip", prefix)
    return add(h, o_t)


def hunet_forward(x: Tensor, params: Mapping[str, Tensor], config: ModelConfig, tau: float = 1.0, trace: Trace = None) -> Tensor:
    h = cru(x, params, "hunet.cru1", trace=trace)
    for i in range(1, config.hb_count + 1):
        h = heterogeneous_block(h, params, f"hunet.hb{i}", config.block_layout, tau, trace)
    return h


def slnet_forward(x: Tensor, params: Mapping[str, Tensor], residual: bool = True, trace: Trace = None) -> Tensor:
    """16 CRUs; layer ``k`` in 10..16 receives ``u_{k-1} + O_{18-k}``, output is ``u_16 + O_1``."""
    half = SLNET_DEPTH // 2
    outs = []
    h = x
    for i in range(1, half + 1):
        h = cru(h, params, f"slnet.l{i}", trace=trace)
        outs.append(h)
    for k in range(half + 1, SLNET_DEPTH + 1):
        if residual and k > half + 1:
            partner = SLNET_DEPTH + 2 - k
            _note(trace, "skip", partner, k - 1)
            h = add(h, outs[partner - 1])
        h = cru(h, params, f"slnet.l{k}", trace=trace)
    if residual:
        _note(trace, "skip", 1, SLNET_DEPTH)
        h = add(h, outs[0])
    return h


def stacked_cru_forward(x: Tensor, params: Mapping[str, Tensor], depth: int = STACKED_CRU_DEPTH, trace: Trace = None) -> Tensor:
    h = x
    for i in range(1, depth + 1):
        h = cru(h, params, f"stack.cru{i}", trace=trace)
    return h


def _upsample_stages(scale: int) -> tuple[int, ...]:
    if scale not in SCALES:
        raise ValueError(f"unsupported scale {scale}; expected one of {SCALES}")
    return (2, 2) if scale == 4 else (scale,)


def construction_block(f: Tensor, scale: int, params: Mapping[str, Tensor], trace: Trace = None) -> Tensor:
    """Sub-pixel upsampling (two x2 stages for scale 4) followed by a 64->3 conv."""
    h = f
    for i, r in enumerate(_upsample_stages(scale), start=1):
        name = f"cb.up{i}.conv"
        _note(trace, "conv", name)
        h = pixel_shuffle(conv2d(h, params[f"{name}.weight"], params[f"{name}.bias"]), r)
    _note(trace, "conv", "cb.out")
    return conv2d(h, params["cb.out.weight"], params["cb.out.bias"])


def adsrnet_forward(x: Tensor, config: ModelConfig, params: Mapping[str, Tensor], tau: float = 1.0, trace: Trace = None) -> Tensor:
    """Forward pass of any variant described by ``config``."""
    if x.shape[1] != 3:
        raise ValueError(f"expected a 3-channel image batch, got shape {x.shape}")
    if not config.has_hunet:
        features = stacked_cru_forward(x, params, trace=trace)
    elif not config.has_slnet:
        features = hunet_forward(x, params, config, tau, trace)
    else:
        upper = hunet_forward(x, params, config, tau, trace)
        lower = slnet_forward(x, params, config.sl_residual, trace)
        features = mul(upper, lower) if config.fusion == "multiply" else concat_channels(upper, lower)
    return construction_block(features, config.scale, params, trace)


# ---------------------------------------------------------------- construction


def _conv_plan(config: ModelConfig) -> Iterator[tuple[str, str, int, int]]:
    """Yield ``(name, kind, c_in, c_out)`` for every layer in registration order."""
    c = config.channels
    if config.has_hunet:
        yield "hunet.cru1", "plain", 3, c
        for i in range(1, config.hb_count + 1):
            for slot, kind in config.block_layout:
                yield f"hunet.hb{i}.{slot}", kind, c, c
    else:
        for i in range(1, STACKED_CRU_DEPTH + 1):
            yield f"stack.cru{i}", "plain", 3 if i == 1 else c, c
    if config.has_slnet:
        for i in range(1, SLNET_DEPTH + 1):
            yield f"slnet.l{i}", "plain", 3 if i == 1 else c, c
    c_in = config.cb_in_channels
    for i, r in enumerate(_upsample_stages(config.scale), start=1):
        yield f"cb.up{i}.conv", "plain", c_in, c * r * r
        c_in = c
    yield "cb.out", "plain", c, 3


def init_parameters(config: ModelConfig, seed: int = 0) -> ParameterSet:
    """Fan-in scaled normal weights, zero biases; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    for name, kind, c_in, c_out in _conv_plan(config):
        if kind == "dynamic":
            layer = DynamicConvLayer.create(c_in, config.K, config.reduction, rng)
            for suffix, t in layer.named_parameters():
                params.add(f"{name}.{suffix}", t)
            continue
        std = math.sqrt(2.0 / (c_in * KERNEL * KERNEL))
        params.add(f"{name}.weight", Tensor(rng.normal(0.0, std, (c_out, c_in, KERNEL, KERNEL))))
        params.add(f"{name}.bias", Tensor(np.zeros((1, c_out, 1, 1))))
    return params


class Network:
    """A configured variant bound to its parameters."""

    def __init__(self, config: ModelConfig, params: ParameterSet):
        self.config = config
        self.params = params
        expected = parameter_shapes(config)
        for name, shape in expected.items():
            if name not in params:
                raise ValueError(f"parameter set does not match config: missing {name!r}")
            if params[name].shape != shape:
                raise ValueError(f"parameter set does not match config: {name!r} has shape {params[name].shape}, expected {shape}")
        for name in params:
            if name not in expected:
                raise ValueError(f"parameter set does not match config: unexpected {name!r}")

    @property
    def scale(self) -> int:
        return self.config.scale

    def __call__(self, x: Tensor, tau: float = 1.0, trace: Trace = None) -> Tensor:
        return adsrnet_forward(x, self.config, self.params, tau, trace)

    def conv_layers(self, height: int = 4, width: int = 4) -> list[str]:
        """Names of convolutional layers traversed by one forward pass."""
        trace: list = []
        with no_grad():
            self(Tensor(np.zeros((1, 3, height, width))), trace=trace)
        return [event[1] for event in trace if event[0] == "conv"]

    def conv_depth(self) -> int:
        """Conv layers on the longest input-to-output path (parallel branches count once)."""
        layers = self.conv_layers()
        upper = sum(1 for n in layers if n.startswith(("hunet.", "stack.")))
        lower = sum(1 for n in layers if n.startswith("slnet."))
        head = sum(1 for n in layers if n.startswith("cb."))
        return max(upper, lower) + head


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c = config.channels
    hidden = c // config.reduction
    for name, kind, c_in, c_out in _conv_plan(config):
        if kind == "dynamic":
            for k in range(config.K):
                shapes[f"{name}.kernel{k}.weight"] = (c_out, c_in, KERNEL, KERNEL)
                shapes[f"{name}.kernel{k}.bias"] = (1, c_out, 1, 1)
            shapes[f"{name}.attn.squeeze.weight"] = (hidden, c_in, 1, 1)
            shapes[f"{name}.attn.squeeze.bias"] = (1, hidden, 1, 1)
            shapes[f"{name}.attn.excite.weight"] = (config.K, hidden, 1, 1)
            shapes[f"{name}.attn.excite.bias"] = (1, config.K, 1, 1)
        else:
            shapes[f"{name}.weight"] = (c_out, c_in, KERNEL, KERNEL)
            shapes[f"{name}.bias"] = (1, c_out, 1, 1)
    return shapes


def build_variant(config: ModelConfig, seed: int = 0) -> Network:
    return Network(config, init_parameters(config, seed))


# ---------------------------------------------------------------- accounting


def _conv_count(c_in: int, c_out: int) -> int:
    return c_in * c_out * 9 + c_out


def _dense_count(a: int, b: int) -> int:
    return a * b + b


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count, independent of any constructed network."""
    c = config.channels
    plain = _conv_count(c, c)
    dynamic = config.K * plain + _dense_count(c, c // config.reduction) + _dense_count(c // config.reduction, config.K)
    per_kind = {"plain": plain, "dilated": plain, "dynamic": dynamic}

    total = 0
    if config.has_hunet:
        block = sum(per_kind[kind] for _, kind in config.block_layout)
        total += _conv_count(3, c) + config.hb_count * block
    else:
        total += _conv_count(3, c) + (STACKED_CRU_DEPTH - 1) * plain
    if config.has_slnet:
        total += _conv_count(3, c) + (SLNET_DEPTH - 1) * plain

    if config.scale == 4:
        total += _conv_count(config.cb_in_channels, 4 * c) + _conv_count(c, 4 * c)
    else:
        total += _conv_count(config.cb_in_channels, c * config.scale**2)
    total += _conv_count(c, 3)
    return total


def conv_flops(c_in: int, c_out: int, height: int, width: int) -> int:
    """Multiply and add count of one 3x3 conv: ``2 * c_in * c_out * 9 * H * W``."""
    if height <= 0 or width <= 0:
        return 0
    return 2 * c_in * c_out * KERNEL * KERNEL * height * width


def estimate_flops(config: ModelConfig, out_h: int, out_w: int) -> int:
    """Floating-point operations for one image of output size ``out_h x out_w``.

    Each 3x3 conv costs ``2 * c_in * c_out * 9 * H * W`` at the resolution it
    runs at; each dynamic layer adds ``2 * a * b`` per dense layer in its
    attention branch.  Bias adds, activations and the kernel mixing are not
    counted.
    """
    if out_h <= 0 or out_w <= 0:
        return 0
    s = config.scale
    lr_h, lr_w = out_h // s, out_w // s
    c = config.channels
    hidden = c // config.reduction
    total = 0
    stages = _upsample_stages(s)
    for name, kind, c_in, c_out in _conv_plan(config):
        if name.startswith("cb."):
            continue
        total += conv_flops(c_in, c_out, lr_h, lr_w)
        if kind == "dynamic":
            total += 2 * (c * hidden + hidden * config.K)
    h, w = lr_h, lr_w
    c_in = config.cb_in_channels
    for r in stages:
        total += conv_flops(c_in, c * r * r, h, w)
        h, w = h * r, w * r
        c_in = c
    total += conv_flops(c, 3, h, w)
    return total
