"""3x3 convolution with dilation and sub-pixel rearrangement.

Convolution is zero-padded cross-correlation (no kernel flip) with stride 1
and size-preserving padding.  The fast path flattens each zero-padded plane;
shifting the flat view by ``i*d*Wp + j*d`` lines every output pixel up with
kernel tap ``(i, j)``, so the nine shifted views stacked together form the
im2col matrix and a single matrix product does the work.
:func:`conv2d_reference` is the direct algorithm the fast path is checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import Tensor, _record

__all__ = [
    "ConvSpec",
    "conv2d",
    "conv2d_reference",
    "pixel_shuffle",
    "pixel_unshuffle",
]

KERNEL = 3


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    dilation: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive: {self}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be a positive integer: {self}")

    @property
    def padding(self) -> int:
        return self.dilation

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, KERNEL, KERNEL)

    @property
    def bias_shape(self) -> tuple[int, int, int, int]:
        return (1, self.out_channels, 1, 1)

    @property
    def num_parameters(self) -> int:
        return self.in_channels * self.out_channels * KERNEL * KERNEL + self.out_channels


def _pad_flat(x: np.ndarray, d: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * d, w + 2 * d), dtype=x.dtype)
    xp[:, :, d : d + h, d : d + w] = x
    return xp.reshape(n, c, -1)


def _offsets(d: int, wp: int) -> list[int]:
    return [i * d * wp + j * d for i in range(KERNEL) for j in range(KERNEL)]


def _columns(xf: np.ndarray, d: int, h: int, wd: int) -> np.ndarray:
    """Stack the nine shifted views of one padded flat plane into ``(9*C, span)``."""
    wp = wd + 2 * d
    span = (h - 1) * wp + wd
    c = xf.shape[0]
    cols = np.empty((KERNEL * KERNEL, c, span), dtype=xf.dtype)
    for k, off in enumerate(_offsets(d, wp)):
        cols[k] = xf[:, off : off + span]
    return cols.reshape(-1, span)


def _forward(xf: np.ndarray, w: np.ndarray, b: Optional[np.ndarray], h: int, wd: int, d: int) -> np.ndarray:
    """Convolve padded flat planes ``xf`` (N, C, Hp*Wp) with one shared kernel.

    Output pixel ``(y, x)`` lands at flat position ``y*Wp + x``; the columns
    ``x >= W`` of each row are wrap-around garbage and are sliced away.
    """
    n = xf.shape[0]
    o, c = w.shape[:2]
    wp = wd + 2 * d
    span = (h - 1) * wp + wd
    wm = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(o, -1)
    out = np.empty((n, o, h * wp), dtype=xf.dtype)
    for k in range(n):
        np.matmul(wm, _columns(xf[k], d, h, wd), out=out[k, :, :span])
    out = out.reshape(n, o, h, wp)[:, :, :, :wd]
    if b is not None:
        out = out + b.reshape(1, o, 1, 1)
    return np.ascontiguousarray(out)


def _backward(g: np.ndarray, w: np.ndarray, xf: np.ndarray, d: int, input_grad: bool = True):
    """Gradients w.r.t. input (or None), weight and bias for one shared kernel."""
    n, o, h, wd = g.shape
    c = w.shape[1]
    wp = wd + 2 * d
    hp = h + 2 * d
    span = (h - 1) * wp + wd
    gf = np.zeros((n, o, h, wp), dtype=g.dtype)
    gf[:, :, :, :wd] = g
    gf = gf.reshape(n, o, h * wp)[:, :, :span]
    wm_t = np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(-1, o)
    gw = np.zeros((o, KERNEL * KERNEL * c), dtype=g.dtype)
    gx = np.zeros((n, c, hp * wp), dtype=g.dtype) if input_grad else None
    for k in range(n):
        gw += gf[k] @ _columns(xf[k], d, h, wd).T
        if input_grad:
            gcols = (wm_t @ gf[k]).reshape(KERNEL * KERNEL, c, span)
            for t, off in enumerate(_offsets(d, wp)):
                gx[k, :, off : off + span] += gcols[t]
    if input_grad:
        gx = np.ascontiguousarray(gx.reshape(n, c, hp, wp)[:, :, d : d + h, d : d + wd])
    gw = gw.reshape(o, KERNEL, KERNEL, c).transpose(0, 3, 1, 2).copy()
    return gx, gw, g.sum(axis=(0, 2, 3))


def _check_conv_args(x: Tensor, weight: Tensor, bias: Optional[Tensor], dilation: int, padding: Optional[int]) -> int:
    if padding is None:
        padding = dilation
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if padding != dilation:
        raise ValueError(f"padding {padding} does not preserve size for dilation {dilation}")
    o, c, kh, kw = weight.shape
    if (kh, kw) != (KERNEL, KERNEL):
        raise ValueError(f"only 3x3 kernels are supported, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {c}")
    if bias is not None and bias.shape != (1, o, 1, 1):
        raise ValueError(f"conv2d: bias shape {bias.shape}, expected {(1, o, 1, 1)}")
    return padding


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, dilation: int = 1, padding: Optional[int] = None) -> Tensor:
    """Size-preserving 3x3 cross-correlation; ``padding`` must equal ``dilation``."""
    _check_conv_args(x, weight, bias, dilation, padding)
    d = dilation
    _, _, h, wd = x.shape
    parents = (x, weight) if bias is None else (x, weight, bias)
    xf = _pad_flat(x.data, d)
    w = weight.data
    out = _forward(xf, w, None if bias is None else bias.data, h, wd, d)

    def grad_fn(g):
        gx, gw, gb = _backward(g, w, xf, d, input_grad=x.requires_grad)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb.reshape(bias.shape))
        return grads

    return _record(out, parents, grad_fn)


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None, dilation: int = 1) -> np.ndarray:
    """Direct convolution on raw arrays: explicit sum over the nine taps."""
    n, c, h, w = x.shape
    d = dilation
    xp = np.pad(x, ((0, 0), (0, 0), (d, d), (d, d)))
    out = np.zeros((n, weight.shape[0], h, w), dtype=np.result_type(x, weight))
    for i in range(KERNEL):
        for j in range(KERNEL):
            window = xp[:, :, i * d : i * d + h, j * d : j * d + w]
            out += np.einsum("oc,nchw->nohw", weight[:, :, i, j], window)
    if bias is not None:
        out += np.asarray(bias).reshape(1, -1, 1, 1)
    return out


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, crr, h, w = a.shape
    c = crr // (r * r)
    return a.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]``."""
    if r < 1:
        raise ValueError(f"upscale factor must be positive, got {r}")
    if x.shape[1] % (r * r):
        raise ValueError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2={r * r}")
    return _record(np.ascontiguousarray(_shuffle(x.data, r)), (x,), lambda g: (np.ascontiguousarray(_unshuffle(g, r)),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ValueError(f"downscale factor must be positive, got {r}")
    if x.shape[2] % r or x.shape[3] % r:
        raise ValueError(f"pixel_unshuffle: spatial size {x.shape[2:]} not divisible by {r}")
    return _record(np.ascontiguousarray(_unshuffle(x.data, r)), (x,), lambda g: (np.ascontiguousarray(_shuffle(g, r)),))
