"""PSNR / SSIM and the dataset evaluation loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import DatasetIndex, ImagePair, ImageReadError, bicubic_resize, rgb_to_y, round_to_uint8

__all__ = [
    "EvalProtocol",
    "EvalResult",
    "bicubic_upscaler",
    "evaluate",
    "gaussian_window",
    "psnr",
    "score_pair",
    "ssim",
]

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Mean SSIM over all positions where the 11x11 window fits entirely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs 2-D planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class EvalProtocol:
    channel: str = "y"
    border_crop: Optional[int] = None  # None means "use the scale factor"
    peak: float = 255.0

    def __post_init__(self):
        if self.channel not in ("y", "rgb"):
            raise ValueError(f"channel must be 'y' or 'rgb', got {self.channel!r}")
        if self.border_crop is not None and self.border_crop < 0:
            raise ValueError(f"border_crop must be >= 0, got {self.border_crop}")

    def crop_for(self, scale: int) -> int:
        return scale if self.border_crop is None else self.border_crop


def _planes(img: np.ndarray, protocol: EvalProtocol, crop: int) -> list[np.ndarray]:
    h, w = img.shape[:2]
    if crop and not 2 * crop < min(h, w):
        raise ValueError(f"border crop {crop} too large for a {h}x{w} image")
    img = img[crop : h - crop, crop : w - crop] if crop else img
    if protocol.channel == "y":
        return [rgb_to_y(img)]
    return [img[:, :, c].astype(np.float64) for c in range(3)]


def score_pair(sr: np.ndarray, hr: np.ndarray, scale: int, protocol: EvalProtocol = EvalProtocol()) -> tuple[float, float]:
    """PSNR/SSIM of an 8-bit SR image against its HR reference."""
    if sr.shape != hr.shape:
        raise ValueError(f"SR shape {sr.shape} does not match HR shape {hr.shape}")
    crop = protocol.crop_for(scale)
    sr_planes, hr_planes = _planes(sr, protocol, crop), _planes(hr, protocol, crop)
    if protocol.channel == "y":
        p = psnr(sr_planes[0], hr_planes[0], protocol.peak)
    else:
        p = psnr(np.stack(sr_planes), np.stack(hr_planes), protocol.peak)
    s = float(np.mean([ssim(x, y, protocol.peak) for x, y in zip(sr_planes, hr_planes)]))
    return p, s


Upscaler = Callable[[np.ndarray, int], np.ndarray]


def bicubic_upscaler(lr: np.ndarray, scale: int) -> np.ndarray:
    h, w = lr.shape[:2]
    return round_to_uint8(bicubic_resize(lr, h * scale, w * scale))


@dataclass
class EvalResult:
    scale: int
    protocol: EvalProtocol
    rows: list[tuple[str, float, float]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def to_tsv(self) -> str:
        def fmt(v: float, digits: int) -> str:
            return "inf" if math.isinf(v) else f"{v:.{digits}f}"

        lines = ["image\tpsnr\tssim"]
        lines += [f"{name}\t{fmt(p, 4)}\t{fmt(s, 6)}" for name, p, s in self.rows]
        lines.append(f"mean\t{fmt(self.mean_psnr, 4)}\t{fmt(self.mean_ssim, 6)}")
        for name in self.skipped:
            lines.append(f"# skipped\t{name}")
        return "\n".join(lines) + "\n"


def evaluate(
    pairs: Sequence[ImagePair] | DatasetIndex,
    upscaler: Optional[Upscaler],
    scale: int,
    protocol: EvalProtocol = EvalProtocol(),
    names: Optional[Sequence[str]] = None,
) -> EvalResult:
    """Score ``upscaler`` on every pair; ``upscaler=None`` passes HR through as SR."""
    result = EvalResult(scale, protocol)
    if isinstance(pairs, DatasetIndex):
        index = pairs
        result.skipped.extend(index.missing)
        loaded = []
        for i in range(len(index)):
            try:
                loaded.append(index.load(i))
            except (ImageReadError, ValueError) as exc:
                logger.warning("skipping pair %s: %s", index.hr_paths[i].name, exc)
                result.skipped.append(index.hr_paths[i].name)
        pairs = loaded
    for i, pair in enumerate(pairs):
        name = names[i] if names else (pair.source.name if pair.source else f"image{i:03d}")
        sr = pair.hr if upscaler is None else upscaler(pair.lr, scale)
        if sr.shape != pair.hr.shape:
            logger.warning("skipping %s: SR shape %s != HR shape %s", name, sr.shape, pair.hr.shape)
            result.skipped.append(name)
            continue
        p, s = score_pair(sr, pair.hr, scale, protocol)
        result.rows.append((name, p, s))
    return result
