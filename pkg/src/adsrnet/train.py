"""MAE loss, Adam with step decay, patch sampling and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .checkpoint import OptimizerSnapshot, load_checkpoint, save_checkpoint
from .data import ImagePair, round_to_uint8
from .dynamic import TemperatureSchedule, temperature_at
from .model import ModelConfig, Network, ParameterSet, build_variant
from .tensor import Tensor, _record

__all__ = [
    "AdamState",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "adam_step",
    "images_to_tensor",
    "lr_at",
    "mae_loss",
    "sample_batch",
    "sample_patch",
    "tensor_to_image",
    "train",
]

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.adsr"
LOG_NAME = "train.log"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr_initial: float = 1e-4
    lr_halving_period: int = 300_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 10_000
    patch_lr: int = 48
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    seed: int = 0
    checkpoint_every: int = 1000
    tau_start: float = 30.0
    tau_end: float = 1.0
    anneal_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1 or self.patch_lr < 1:
            raise ValueError(f"batch_size and patch_lr must be positive: {self}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.lr_halving_period < 1:
            raise ValueError(f"lr_halving_period must be >= 1, got {self.lr_halving_period}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")

    @property
    def augment(self) -> bool:
        return self.hflip or self.vflip or self.rot90

    def temperature_schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule.for_training(self.total_steps, self.anneal_fraction, self.tau_start, self.tau_end)


# ---------------------------------------------------------------- loss


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element, as a ``(1, 1, 1, 1)`` tensor."""
    if pred.shape != target.shape:
        raise ValueError(f"mae_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.abs(diff).mean(dtype=np.float64), dtype=pred.dtype).reshape(1, 1, 1, 1)

    def grad_fn(g):
        direction = np.sign(diff) * (g.item() / count)
        return (direction.astype(pred.dtype), (-direction).astype(target.dtype))

    return _record(out, (pred, target), grad_fn)


# ---------------------------------------------------------------- optimizer


def lr_at(step: int, config: TrainConfig) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    return config.lr_initial * 0.5 ** (step // config.lr_halving_period)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_parameters(cls, params: Mapping[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
        return cls(
            beta1,
            beta2,
            eps,
            0,
            {n: np.zeros_like(t.data) for n, t in params.items()},
            {n: np.zeros_like(t.data) for n, t in params.items()},
        )

    def snapshot(self) -> OptimizerSnapshot:
        return OptimizerSnapshot(self.step, self.first_moment, self.second_moment)

    def restore(self, snap: OptimizerSnapshot) -> None:
        self.step = snap.step
        for name in self.first_moment:
            self.first_moment[name] = snap.first_moment[name].astype(self.first_moment[name].dtype)
            self.second_moment[name] = snap.second_moment[name].astype(self.second_moment[name].dtype)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update using each parameter's ``.grad``.

    Uses the folded form ``p -= lr * sqrt(1 - b2^t) / (1 - b1^t) * m / (sqrt(v) + eps)``.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    step_size = lr * math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for name, p in params.items():
        g = p.grad
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (step_size * m / (np.sqrt(v) + state.eps)).astype(p.dtype, copy=False)


# ---------------------------------------------------------------- patches


def sample_patch(
    pair: ImagePair,
    patch_lr: int,
    scale: int,
    rng: np.random.Generator,
    hflip: bool = True,
    vflip: bool = True,
    rot90: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Aligned random crop: LR ``(y, x, p, p)`` pairs with HR ``(s*y, s*x, s*p, s*p)``."""
    h, w = pair.lr.shape[:2]
    if h < patch_lr or w < patch_lr:
        raise ValueError(f"LR image {h}x{w} is smaller than the {patch_lr}x{patch_lr} patch")
    if pair.hr.shape[:2] != (h * scale, w * scale):
        raise ValueError(f"HR size {pair.hr.shape[:2]} is not {scale}x LR size {(h, w)}")
    y = int(rng.integers(0, h - patch_lr + 1))
    x = int(rng.integers(0, w - patch_lr + 1))
    lr = pair.lr[y : y + patch_lr, x : x + patch_lr]
    hp = patch_lr * scale
    hr = pair.hr[y * scale : y * scale + hp, x * scale : x * scale + hp]
    flips = rng.random(3) < 0.5
    if hflip and flips[0]:
        lr, hr = lr[:, ::-1], hr[:, ::-1]
    if vflip and flips[1]:
        lr, hr = lr[::-1], hr[::-1]
    if rot90 and flips[2]:
        lr, hr = np.rot90(lr), np.rot90(hr)
    return np.ascontiguousarray(lr), np.ascontiguousarray(hr)


def images_to_tensor(images: Sequence[np.ndarray], requires_grad: bool = False) -> Tensor:
    """Stack ``(H, W, 3)`` uint8 images into an ``(N, 3, H, W)`` tensor in [0, 1]."""
    batch = np.stack([np.asarray(im, dtype=np.float64) / 255.0 for im in images]).transpose(0, 3, 1, 2)
    return Tensor(batch, requires_grad=requires_grad)


def tensor_to_image(t: Tensor, index: int = 0) -> np.ndarray:
    return round_to_uint8(t.data[index].transpose(1, 2, 0).astype(np.float64) * 255.0)


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Sampling stream for one step; a function of (seed, step) so resumes replay exactly."""
    return np.random.default_rng([seed, step])


def sample_batch(dataset: Sequence[ImagePair], config: TrainConfig, scale: int, step: int) -> tuple[Tensor, Tensor]:
    rng = step_rng(config.seed, step)
    lrs, hrs = [], []
    for _ in range(config.batch_size):
        pair = dataset[int(rng.integers(0, len(dataset)))]
        lr, hr = sample_patch(pair, config.patch_lr, scale, rng, config.hflip, config.vflip, config.rot90)
        lrs.append(lr)
        hrs.append(hr)
    return images_to_tensor(lrs), images_to_tensor(hrs)


# ---------------------------------------------------------------- loop


@dataclass
class TrainResult:
    network: Network
    optimizer: AdamState
    records: list[tuple[int, float, float, float]]
    checkpoint: Optional[Path] = None


def _format_record(step: int, loss: float, lr: float, tau: float) -> str:
    return f"{step}\t{loss!r}\t{lr!r}\t{tau!r}\n"


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: Sequence[ImagePair],
    out_dir=None,
    resume=None,
    init_seed: Optional[int] = None,
) -> TrainResult:
    """Run steps ``[start, total_steps)`` of sample -> forward -> MAE -> backward -> Adam.

    With ``out_dir`` a checkpoint (including optimizer state) is written every
    ``checkpoint_every`` steps and at completion, and one tab-separated
    ``step loss lr tau`` record per step is appended to ``train.log``.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    for pair in dataset:
        if pair.scale != model_config.scale:
            raise ValueError(f"dataset scale {pair.scale} does not match model scale {model_config.scale}")

    network = build_variant(model_config, train_config.seed if init_seed is None else init_seed)
    params: ParameterSet = network.params
    state = AdamState.for_parameters(params, train_config.beta1, train_config.beta2, train_config.eps)
    if resume is not None:
        ckpt = load_checkpoint(resume, model_config)
        params.load_arrays(ckpt.arrays)
        if ckpt.optimizer is not None:
            state.restore(ckpt.optimizer)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    ckpt_path = None
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_fh = open(out_dir / LOG_NAME, "a" if resume is not None else "w")
        except OSError as exc:
            raise OSError(f"cannot prepare output directory {out_dir}: {exc.strerror or exc}") from exc
        ckpt_path = out_dir / CHECKPOINT_NAME

    schedule = train_config.temperature_schedule()
    records = []
    try:
        for step in range(state.step, train_config.total_steps):
            lr_batch, hr_batch = sample_batch(dataset, train_config, model_config.scale, step)
            tau = temperature_at(step, schedule)
            lr = lr_at(step, train_config)
            params.zero_grad()
            loss = mae_loss(network(lr_batch, tau), hr_batch)
            value = float(loss.data.item())
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            loss.backward()
            adam_step(params, state, lr)
            records.append((step, value, lr, tau))
            if log_fh is not None:
                log_fh.write(_format_record(step, value, lr, tau))
                log_fh.flush()
            if ckpt_path is not None and (step + 1) % train_config.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model_config, params, state.snapshot())
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, model_config, params, state.snapshot())
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(network, state, records, ckpt_path)
