"""Finite-difference verification of every differentiable operation.

Each check builds a scalar objective from named input arrays, computes the
analytic gradient with :func:`~adsrnet.tensor.backward` and compares it with
central differences evaluated in 64-bit arithmetic.  The error reported for
one input is

    max |analytic - numeric| / max(max |analytic|, max |numeric|, floor)

over the sampled coordinates, where the first maximum in the denominator runs
over the whole analytic gradient.  A check's error is the worst over its
inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .conv import conv2d, pixel_shuffle
from .dynamic import DynamicConvLayer, aggregate_conv, dynamic_conv_forward
from .model import (
    ModelConfig,
    adsrnet_forward,
    construction_block,
    cru,
    heterogeneous_block,
    init_parameters,
    slnet_forward,
)
from .tensor import (
    Tensor,
    add,
    backward,
    concat_channels,
    fully_connected,
    global_avg_pool,
    mul,
    no_grad,
    precision,
    relu,
    softmax_temperature,
    tensor_sum,
)
from .train import mae_loss

__all__ = [
    "CheckResult",
    "OP_STEP",
    "check_gradients",
    "format_report",
    "gradcheck_suite",
    "network_check",
    "relative_error",
]

OP_STEP = 1e-4
NETWORK_STEP = 1e-6
ELEMENTWISE_TOL = 1e-5
COMPOSITE_TOL = 1e-4
NETWORK_TOL_64 = 1e-5
NETWORK_TOL_32 = 1e-3
ERROR_FLOOR = 1e-8

Objective = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    threshold: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.threshold)


def relative_error(analytic_full: np.ndarray, analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst sampled deviation, scaled by the larger of the two gradients' magnitudes."""
    numeric = np.asarray(numeric, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if numeric.size == 0:
        return 0.0
    scale = max(float(np.abs(analytic_full).max()), float(np.abs(numeric).max()), ERROR_FLOOR)
    return float(np.abs(analytic - numeric).max() / scale)


def _evaluate(objective: Objective, arrays: Mapping[str, np.ndarray]) -> float:
    with precision(np.float64), no_grad():
        return float(objective({k: Tensor(v) for k, v in arrays.items()}).data.item())


def check_gradients(
    name: str,
    objective: Objective,
    arrays: Mapping[str, np.ndarray],
    threshold: float,
    step: float = OP_STEP,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    dtype=np.float64,
) -> CheckResult:
    """Compare analytic and central-difference gradients of ``objective``.

    ``dtype`` selects the precision of the analytic pass; the finite-difference
    oracle always runs in 64 bits at the same (possibly 32-bit-rounded) point.
    With ``samples`` only that many random coordinates per input are probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    start = time.perf_counter()
    with precision(dtype):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        root = objective(tensors)
        if root.shape != (1, 1, 1, 1):
            raise ValueError(f"{name}: objective must be scalar, got {root.shape}")
        backward(root)
    point = {k: t.data.astype(np.float64) for k, t in tensors.items()}

    worst = 0.0
    for key, t in tensors.items():
        analytic_full = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        size = analytic_full.size
        if samples is None or size <= samples:
            flat = np.arange(size)
        else:
            flat = rng.choice(size, samples, replace=False)
        values = point[key].reshape(-1)
        numeric = np.empty(len(flat))
        for n, i in enumerate(flat):
            original = values[i]
            values[i] = original + step
            f_plus = _evaluate(objective, point)
            values[i] = original - step
            f_minus = _evaluate(objective, point)
            values[i] = original
            numeric[n] = (f_plus - f_minus) / (2 * step)
        worst = max(worst, relative_error(analytic_full, analytic_full.reshape(-1)[flat], numeric))
    return CheckResult(name, worst, threshold, time.perf_counter() - start)


# ---------------------------------------------------------------- objectives


def _projection(out: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(out * r)`` for a fixed random ``r``: exercises every output gradient."""
    return tensor_sum(mul(out, Tensor(weights, dtype=out.dtype)))


def _projected(fn: Callable[[Mapping[str, Tensor]], Tensor], out_shape, rng) -> Objective:
    weights = rng.normal(size=out_shape)
    return lambda t: _projection(fn(t), weights)


def _away_from_zero(rng, shape, margin: float = 0.1) -> np.ndarray:
    values = rng.normal(size=shape)
    return np.sign(values) * (margin + np.abs(values))


def _jitter_parameters(arrays: dict[str, np.ndarray], rng: np.random.Generator, scale: float = 0.05) -> dict[str, np.ndarray]:
    """Give biases and attention weights non-zero values so no path is trivially dead."""
    out = {}
    for name, a in arrays.items():
        a = a.astype(np.float64)
        if name.endswith(".bias") or ".attn." in name:
            a = a + rng.normal(0.0, scale, a.shape)
        out[name] = a
    return out


def _dynamic_arrays(rng, channels: int, K: int, reduction: int) -> dict[str, np.ndarray]:
    layer = DynamicConvLayer.create(channels, K, reduction, rng)
    return _jitter_parameters({n: t.data for n, t in layer.named_parameters()}, rng, 0.3)


def _dynamic_from(t: Mapping[str, Tensor], K: int) -> DynamicConvLayer:
    return DynamicConvLayer(
        [t[f"kernel{k}.weight"] for k in range(K)],
        [t[f"kernel{k}.bias"] for k in range(K)],
        t["attn.squeeze.weight"],
        t["attn.squeeze.bias"],
        t["attn.excite.weight"],
        t["attn.excite.bias"],
    )


def _operator_checks(config: ModelConfig, rng: np.random.Generator) -> list[tuple[str, Objective, dict, float]]:
    """``(name, objective, inputs, threshold)`` for every primitive and composite op."""
    checks = []
    shape = (2, 3, 4, 5)

    def add_check(name, fn, arrays, out_shape, tol):
        checks.append((name, _projected(fn, out_shape, rng), arrays, tol))

    a, b = rng.normal(size=shape), rng.normal(size=shape)
    add_check("add", lambda t: add(t["a"], t["b"]), {"a": a, "b": b}, shape, ELEMENTWISE_TOL)
    add_check("mul", lambda t: mul(t["a"], t["b"]), {"a": a.copy(), "b": b.copy()}, shape, ELEMENTWISE_TOL)
    add_check("relu", lambda t: relu(t["x"]), {"x": _away_from_zero(rng, shape)}, shape, ELEMENTWISE_TOL)
    add_check("global_avg_pool", lambda t: global_avg_pool(t["x"]), {"x": rng.normal(size=shape)}, (2, 3, 1, 1), ELEMENTWISE_TOL)
    add_check(
        "fully_connected",
        lambda t: fully_connected(t["x"], t["w"], t["b"]),
        {"x": rng.normal(size=(2, 6, 1, 1)), "w": rng.normal(size=(4, 6, 1, 1)), "b": rng.normal(size=(1, 4, 1, 1))},
        (2, 4, 1, 1),
        COMPOSITE_TOL,
    )
    add_check(
        "softmax_temperature",
        lambda t: softmax_temperature(t["z"], 2.5),
        {"z": rng.normal(size=(2, 4, 1, 1))},
        (2, 4, 1, 1),
        COMPOSITE_TOL,
    )
    add_check(
        "concat_channels",
        lambda t: concat_channels(t["a"], t["b"]),
        {"a": rng.normal(size=(2, 2, 3, 3)), "b": rng.normal(size=(2, 3, 3, 3))},
        (2, 5, 3, 3),
        ELEMENTWISE_TOL,
    )
    checks.append(("tensor_sum", lambda t: tensor_sum(t["x"]), {"x": rng.normal(size=shape)}, ELEMENTWISE_TOL))
    target = rng.normal(size=shape)
    checks.append(
        (
            "mae_loss",
            lambda t: mae_loss(t["pred"], t["target"]),
            {"pred": target + _away_from_zero(rng, shape), "target": target},
            ELEMENTWISE_TOL,
        )
    )
    for d in (1, 2):
        add_check(
            f"conv2d_d{d}",
            lambda t, d=d: conv2d(t["x"], t["w"], t["b"], dilation=d),
            {"x": rng.normal(size=(2, 3, 6, 5)), "w": rng.normal(size=(4, 3, 3, 3)), "b": rng.normal(size=(1, 4, 1, 1))},
            (2, 4, 6, 5),
            COMPOSITE_TOL,
        )
    add_check("pixel_shuffle", lambda t: pixel_shuffle(t["x"], 2), {"x": rng.normal(size=(1, 8, 3, 2))}, (1, 2, 6, 4), ELEMENTWISE_TOL)

    k_count = 3
    agg_inputs = {"x": rng.normal(size=(2, 3, 5, 4)), "pi": rng.dirichlet(np.ones(k_count), size=2).reshape(2, k_count, 1, 1)}
    for k in range(k_count):
        agg_inputs[f"w{k}"] = rng.normal(size=(4, 3, 3, 3))
        agg_inputs[f"b{k}"] = rng.normal(size=(1, 4, 1, 1))
    add_check(
        "aggregate_conv",
        lambda t: aggregate_conv(t["x"], t["pi"], [t[f"w{k}"] for k in range(k_count)], [t[f"b{k}"] for k in range(k_count)]),
        agg_inputs,
        (2, 4, 5, 4),
        COMPOSITE_TOL,
    )
    dyn = _dynamic_arrays(rng, 8, k_count, 4)
    dyn["x"] = rng.normal(size=(2, 8, 4, 4))
    add_check(
        "dynamic_conv",
        lambda t: dynamic_conv_forward(t["x"], _dynamic_from(t, k_count), 3.0),
        dyn,
        (2, 8, 4, 4),
        COMPOSITE_TOL,
    )

    # Layer-level composites use the real 64-channel shapes of ``config``.
    params = _jitter_parameters(init_parameters(config, seed=0).arrays(), rng)
    c = config.channels
    x_feat = rng.normal(size=(1, c, 4, 4))
    cru_name = "hunet.cru1" if config.has_hunet else "stack.cru1"
    cru_inputs = {"x": rng.normal(size=(1, 3, 4, 4)), "w": params[f"{cru_name}.weight"], "b": params[f"{cru_name}.bias"]}
    add_check(
        "cru",
        lambda t: cru(t["x"], {"l.weight": t["w"], "l.bias": t["b"]}, "l"),
        cru_inputs,
        (1, c, 4, 4),
        COMPOSITE_TOL,
    )
    if config.has_hunet and config.block_layout:
        block = {n: v for n, v in params.items() if n.startswith("hunet.hb1.")}
        block["x"] = x_feat
        add_check(
            "heterogeneous_block",
            lambda t: heterogeneous_block(t["x"], t, "hunet.hb1", config.block_layout, 2.0),
            block,
            (1, c, 4, 4),
            COMPOSITE_TOL,
        )
    if config.has_slnet:
        sl = {n: v for n, v in params.items() if n.startswith("slnet.")}
        sl["x"] = rng.normal(size=(1, 3, 4, 4))
        add_check(
            "slnet",
            lambda t: slnet_forward(t["x"], t, config.sl_residual),
            sl,
            (1, c, 4, 4),
            COMPOSITE_TOL,
        )
    cb = {n: v for n, v in params.items() if n.startswith("cb.")}
    cb["f"] = rng.normal(size=(1, config.cb_in_channels, 3, 3))
    s = config.scale
    add_check(
        "construction_block",
        lambda t: construction_block(t["f"], s, t),
        cb,
        (1, 3, 3 * s, 3 * s),
        COMPOSITE_TOL,
    )
    return checks


LAYER_CHECKS = ("cru", "heterogeneous_block", "slnet", "construction_block")


def _sampled_for(name: str) -> Optional[int]:
    # Layer-level composites carry 64-channel kernels; probe a sample of each.
    return 20 if name in LAYER_CHECKS else None


def _step_for(name: str) -> float:
    # Deep ReLU stacks have pre-activations near zero; a 1e-4 step can straddle the kink.
    return NETWORK_STEP if name in LAYER_CHECKS else OP_STEP


def network_check(
    config: ModelConfig,
    seed: int = 0,
    samples: int = 20,
    dtype=np.float64,
    size: int = 8,
) -> CheckResult:
    """MAE loss of the whole network on a ``1 x 3 x size x size`` input, ``samples`` coordinates per parameter."""
    rng = np.random.default_rng(seed)
    arrays = _jitter_parameters(init_parameters(config, seed).arrays(), rng)
    arrays["input"] = rng.random((1, 3, size, size))
    target = rng.random((1, 3, size * config.scale, size * config.scale))
    params_only = [n for n in arrays if n != "input"]

    def objective(t):
        out = adsrnet_forward(t["input"], config, {n: t[n] for n in params_only}, tau=1.0)
        return mae_loss(out, Tensor(target, dtype=out.dtype))

    bits = 64 if np.dtype(dtype) == np.float64 else 32
    threshold = NETWORK_TOL_64 if bits == 64 else NETWORK_TOL_32
    name = f"network[{config.variant},s={config.scale},{bits}-bit]"
    return check_gradients(name, objective, arrays, threshold, NETWORK_STEP, samples, rng, dtype)


def gradcheck_suite(
    config: ModelConfig = ModelConfig(),
    seed: int = 0,
    samples: int = 20,
    include_network: bool = True,
    include_32bit: bool = True,
) -> list[CheckResult]:
    """Run every operator check, then the whole-network checks for ``config``."""
    rng = np.random.default_rng(seed)
    results = []
    for name, objective, arrays, tol in _operator_checks(config, rng):
        results.append(check_gradients(name, objective, arrays, tol, _step_for(name), _sampled_for(name), rng))
    if include_network:
        results.append(network_check(config, seed, samples, np.float64))
        if include_32bit:
            results.append(network_check(config, seed, samples, np.float32))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = ["op\tmax_rel_error\tthreshold\tstatus"]
    for r in results:
        lines.append(f"{r.name}\t{r.max_rel_error:.3e}\t{r.threshold:.0e}\t{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
