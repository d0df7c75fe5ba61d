"""PNG I/O, bicubic resampling, LR generation and the dataset layout.

Datasets live under ``<root>/<split>/HR/*.png`` with low-resolution copies in
``<root>/<split>/LR_x{s}/*.png`` sharing the HR filename.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

__all__ = [
    "DatasetIndex",
    "ImagePair",
    "ImageReadError",
    "bicubic_resize",
    "cubic_kernel",
    "degrade",
    "degrade_image",
    "mod_crop",
    "read_png",
    "resize_weights",
    "rgb_to_y",
    "round_to_uint8",
    "write_png",
]

logger = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageReadError(OSError):
    pass


def read_png(path) -> np.ndarray:
    """Read a PNG as ``(H, W, 3)`` uint8 RGB.

    16-bit samples are mapped to 8 bits by ``round(v / 257)``, grayscale is
    replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"{path}: {exc.strerror or exc}") from exc
    if not raw.startswith(PNG_SIGNATURE):
        raise ImageReadError(f"{path}: not a PNG file")
    img = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ImageReadError(f"{path}: corrupt or unsupported PNG data")
    if img.dtype == np.uint16:
        img = np.floor(img.astype(np.float64) / 257.0 + 0.5).astype(np.uint8)
    elif img.dtype != np.uint8:
        raise ImageReadError(f"{path}: unsupported sample type {img.dtype}")
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[:, :, :3]
    elif img.shape[2] != 3:
        raise ImageReadError(f"{path}: unsupported channel count {img.shape[2]}")
    return np.ascontiguousarray(img[:, :, ::-1])


def write_png(path, img: np.ndarray) -> Path:
    """Write an ``(H, W, 3)`` uint8 RGB array (or ``(H, W)`` gray) losslessly."""
    path = Path(path)
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"write_png expects uint8 data, got {img.dtype}")
    bgr = img[:, :, ::-1] if img.ndim == 3 else img
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(bgr))
    if not ok:
        raise OSError(f"{path}: PNG encoding failed")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.tobytes())
    return path


def round_to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to [0, 255]."""
    v = np.asarray(values, dtype=np.float64)
    rounded = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma in the studio range [16, 235], unrounded, float64."""
    rgb = np.asarray(img, dtype=np.float64)
    return 16.0 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]) / 255.0


# ---------------------------------------------------------------- bicubic


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` interpolation matrix for one axis.

    Output sample ``x`` (0-based) maps to input coordinate
    ``u = (x + 0.5) / scale - 0.5``.  On downscaling the kernel is stretched
    by ``1 / scale``; out-of-range taps are clamped to the edge sample.
    """
    if out_len < 1 or in_len < 1:
        raise ValueError(f"resize lengths must be >= 1, got {in_len} -> {out_len}")
    scale = out_len / in_len
    stretch = scale if (antialias and scale < 1) else 1.0
    width = 4.0 / stretch
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(np.int64) + 1
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :] - 1
    w = stretch * cubic_kernel(stretch * (u[:, None] - idx), a)
    w /= w.sum(axis=1, keepdims=True)
    matrix = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(matrix, (rows, np.clip(idx, 0, in_len - 1).ravel()), w.ravel())
    return matrix


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Separable cubic-convolution resize of ``(H, W)`` or ``(H, W, C)`` data (float64 out)."""
    img = np.asarray(img, dtype=np.float64)
    rows = resize_weights(img.shape[0], out_h, a, antialias)
    cols = resize_weights(img.shape[1], out_w, a, antialias)
    out = np.tensordot(rows, img, axes=(1, 0))
    out = np.tensordot(cols, out, axes=(1, 1))
    return np.swapaxes(out, 0, 1)


# ---------------------------------------------------------------- degradation


def mod_crop(img: np.ndarray, scale: int) -> np.ndarray:
    """Top-left crop to dimensions divisible by ``scale``."""
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


def degrade_image(hr: np.ndarray, scale: int) -> np.ndarray:
    hr = mod_crop(hr, scale)
    h, w = hr.shape[:2]
    return round_to_uint8(bicubic_resize(hr, h // scale, w // scale))


def degrade(hr_dir, scale: int, out_dir) -> list[Path]:
    """Write a bicubic LR copy of every PNG in ``hr_dir`` to ``out_dir``."""
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    if scale < 1:
        raise ValueError(f"scale must be positive, got {scale}")
    if not hr_dir.is_dir():
        raise FileNotFoundError(f"HR directory not found: {hr_dir}")
    sources = sorted(hr_dir.glob("*.png"))
    if not sources:
        raise FileNotFoundError(f"no PNG files in {hr_dir}")
    written = []
    for src in sources:
        try:
            hr = read_png(src)
        except ImageReadError as exc:
            logger.warning("skipping unreadable image %s", exc)
            continue
        written.append(write_png(out_dir / src.name, degrade_image(hr, scale)))
    if not written:
        raise ImageReadError(f"none of the {len(sources)} images in {hr_dir} could be read")
    return written


# ---------------------------------------------------------------- dataset layout


@dataclass
class ImagePair:
    hr: np.ndarray
    lr: np.ndarray
    scale: int
    source: Optional[Path] = None

    def __post_init__(self):
        h, w = self.lr.shape[:2]
        if self.hr.shape[:2] != (h * self.scale, w * self.scale):
            raise ValueError(
                f"HR size {self.hr.shape[:2]} is not {self.scale}x LR size {(h, w)}"
                + (f" for {self.source}" if self.source else "")
            )

    @classmethod
    def from_hr(cls, hr: np.ndarray, scale: int, source=None) -> ImagePair:
        hr = mod_crop(hr, scale)
        return cls(np.ascontiguousarray(hr), degrade_image(hr, scale), scale, source)


@dataclass
class DatasetIndex:
    split: str
    scale: int
    hr_paths: list[Path] = field(default_factory=list)
    lr_paths: list[Path] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @classmethod
    def from_dir(cls, split_dir, scale: int) -> DatasetIndex:
        split_dir = Path(split_dir)
        hr_dir, lr_dir = split_dir / "HR", split_dir / f"LR_x{scale}"
        for d in (hr_dir, lr_dir):
            if not d.is_dir():
                raise FileNotFoundError(f"dataset directory not found: {d}")
        index = cls(split_dir.name, scale)
        for hr in sorted(hr_dir.glob("*.png")):
            lr = lr_dir / hr.name
            if lr.is_file():
                index.hr_paths.append(hr)
                index.lr_paths.append(lr)
            else:
                index.missing.append(hr.name)
        return index

    def __len__(self) -> int:
        return len(self.hr_paths)

    def names(self) -> list[str]:
        return [p.name for p in self.hr_paths]

    def load(self, i: int) -> ImagePair:
        """Load pair ``i``; the HR image is mod-cropped to match the LR grid."""
        hr = mod_crop(read_png(self.hr_paths[i]), self.scale)
        lr = read_png(self.lr_paths[i])
        return ImagePair(hr, lr, self.scale, self.hr_paths[i])

    def load_all(self) -> list[ImagePair]:
        return [self.load(i) for i in range(len(self))]
