"""Independent numpy transcriptions used as test oracles."""

import numpy as np

from adsrnet.conv import conv2d_reference


def loop_conv(x, w, b=None, d=1):
    """Quadruple-nested-loop zero-padded cross-correlation for any odd kernel size."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = d * (kh // 2), d * (kw // 2)
    out = np.zeros((n, o, h, wd))
    for bn in range(n):
        for oc in range(o):
            for y in range(h):
                for xx in range(wd):
                    acc = 0.0 if b is None else float(b.ravel()[oc])
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yy, xj = y + i * d - ph, xx + j * d - pw
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc += w[oc, ic, i, j] * x[bn, ic, yy, xj]
                    out[bn, oc, y, xx] = acc
    return out


def np_cru(x, p, name, d=1):
    return np.maximum(conv2d_reference(x, p[f"{name}.weight"], p[f"{name}.bias"], dilation=d), 0.0)


def np_attention(x, p, prefix, tau):
    pooled = x.mean(axis=(2, 3))
    w1, b1 = p[f"{prefix}.attn.squeeze.weight"][:, :, 0, 0], p[f"{prefix}.attn.squeeze.bias"].ravel()
    w2, b2 = p[f"{prefix}.attn.excite.weight"][:, :, 0, 0], p[f"{prefix}.attn.excite.bias"].ravel()
    z = (np.maximum(pooled @ w1.T + b1, 0.0) @ w2.T + b2) / tau
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def np_dynamic_cru(x, p, prefix, tau):
    """Materialize each item's mixed kernel explicitly, convolve, then ReLU."""
    pi = np_attention(x, p, prefix, tau)
    K = pi.shape[1]
    outs = []
    for i in range(x.shape[0]):
        w = sum(pi[i, k] * p[f"{prefix}.kernel{k}.weight"] for k in range(K))
        b = sum(pi[i, k] * p[f"{prefix}.kernel{k}.bias"] for k in range(K))
        outs.append(conv2d_reference(x[i : i + 1], w, b))
    return np.maximum(np.concatenate(outs), 0.0)


def np_shuffle(x, r):
    n, c, h, w = x.shape
    out = np.zeros((n, c // (r * r), h * r, w * r))
    for ch in range(c // (r * r)):
        for i in range(r):
            for j in range(r):
                out[:, ch, i::r, j::r] = x[:, ch * r * r + i * r + j]
    return out
