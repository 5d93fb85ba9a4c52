"""Array layer primitives with explicit forward/backward passes.

Every forward returns (out, cache); the matching backward consumes the
upstream gradient and the cache. Convolutions run as im2col matrix products;
the depth-wise variant takes per-sample, per-channel predicted kernels.
All math is float64; batch layout is (batch, channels, height, width).
"""

import numpy as np

from ..errors import InvalidInputError
from ..imgcore import resample_weights


def relu_forward(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_backward(g, cache):
    return g * cache


def leaky_relu_forward(x, slope=0.01):
    return np.where(x > 0.0, x, slope * x), (x > 0.0, slope)


def leaky_relu_backward(g, cache):
    mask, slope = cache
    return np.where(mask, g, slope * g)


def sigmoid_forward(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s, s


def sigmoid_backward(g, cache):
    s = cache
    return g * s * (1.0 - s)


def fc_forward(x, w, b):
    """x: (batch, n_in), w: (n_out, n_in), b: (n_out,)."""
    if x.shape[1] != w.shape[1]:
        raise InvalidInputError(f"fc: input width {x.shape[1]} != {w.shape[1]}")
    return x @ w.T + b, (x, w)


def fc_backward(g, cache):
    x, w = cache
    return g @ w, g.T @ x, g.sum(axis=0)


def _pad_zero(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _pad_zero_backward(gp, p):
    return gp[:, :, p:gp.shape[2] - p, p:gp.shape[3] - p] if p else gp


def _pad_edge1(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")


def _pad_edge1_backward(gp):
    g = gp[:, :, 1:-1, 1:-1].copy()
    g[:, :, 0, :] += gp[:, :, 0, 1:-1]
    g[:, :, -1, :] += gp[:, :, -1, 1:-1]
    g[:, :, :, 0] += gp[:, :, 1:-1, 0]
    g[:, :, :, -1] += gp[:, :, 1:-1, -1]
    g[:, :, 0, 0] += gp[:, :, 0, 0]
    g[:, :, 0, -1] += gp[:, :, 0, -1]
    g[:, :, -1, 0] += gp[:, :, -1, 0]
    g[:, :, -1, -1] += gp[:, :, -1, -1]
    return g


def _windows(xp, k):
    """(b,c,hp,wp) -> strided view (b,c,k,k,h,w) of all kxk windows."""
    b, c, hp, wp = xp.shape
    h, w = hp - k + 1, wp - k + 1
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (b, c, k, k, h, w), (s[0], s[1], s[2], s[3], s[2], s[3]))


def _tap_matmul(taps, x):
    """(c_out, c_in) channel mix of a (b, c_in, h, w) tensor."""
    return np.tensordot(taps, x, axes=([1], [1])).transpose(1, 0, 2, 3)


def conv2d_forward(x, w, b):
    """Same-size convolution (zero padding), shift-and-add over the k*k taps.

    w: (c_out, c_in, k, k), k odd. Avoids materializing im2col columns."""
    cout, cin, k, _ = w.shape
    if x.shape[1] != cin:
        raise InvalidInputError(f"conv: {x.shape[1]} channels, kernel wants {cin}")
    p = k // 2
    xp = _pad_zero(x, p)
    bsz, _, h, wd = x.shape
    out = np.empty((bsz, cout, h, wd))
    out[:] = b[None, :, None, None]
    for i in range(k):
        for j in range(k):
            out += _tap_matmul(w[:, :, i, j], xp[:, :, i:i + h, j:j + wd])
    return out, (xp, w, x.shape)


def conv2d_backward(g, cache):
    xp, w, xshape = cache
    cout, cin, k, _ = w.shape
    p = k // 2
    bsz, _, h, wd = xshape
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            win = xp[:, :, i:i + h, j:j + wd]
            gw[:, :, i, j] = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            gxp[:, :, i:i + h, j:j + wd] += _tap_matmul(w[:, :, i, j].T, g)
    gb = g.sum(axis=(0, 2, 3))
    return _pad_zero_backward(gxp, p), gw, gb


def depthwise_forward(x, kern):
    """Per-sample, per-channel 3x3 convolution with edge padding.

    kern: (batch, channels, 3, 3) predicted kernels.
    """
    if kern.shape[:2] != x.shape[:2] or kern.shape[2:] != (3, 3):
        raise InvalidInputError(
            f"depthwise: kernels {kern.shape} do not match features {x.shape}")
    xp = _pad_edge1(x)
    win = _windows(xp, 3)
    out = np.einsum("bcijhw,bcij->bchw", win, kern, optimize=True)
    return out, (xp, kern, x.shape)


def depthwise_backward(g, cache):
    xp, kern, xshape = cache
    h, w = xshape[2], xshape[3]
    win = _windows(xp, 3)
    gk = np.einsum("bchw,bcijhw->bcij", g, win, optimize=True)
    gxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            gxp[:, :, i:i + h, j:j + w] += kern[:, :, i, j, None, None] * g
    return _pad_edge1_backward(gxp), gk


def scale_forward(x, w):
    """Per-sample channel attention: x * w with w of shape (batch, channels)."""
    if w.shape != x.shape[:2]:
        raise InvalidInputError(f"scale: weights {w.shape} vs features {x.shape}")
    return x * w[:, :, None, None], (x, w)


def scale_backward(g, cache):
    x, w = cache
    return g * w[:, :, None, None], (g * x).sum(axis=(2, 3))


def _resize_mat(in_len, out_len):
    idx, w = resample_weights(in_len, out_len)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.arange(out_len)[:, None], idx), w)
    return mat


def resize_tensor_forward(x, out_h, out_w):
    """Bicubic resize of a (b,c,h,w) tensor: linear, no range clipping."""
    mh = _resize_mat(x.shape[2], out_h)
    mw = _resize_mat(x.shape[3], out_w)
    out = np.einsum("oh,bchw,pw->bcop", mh, x, mw, optimize=True)
    return out, (mh, mw)


def resize_tensor_backward(g, cache):
    mh, mw = cache
    return np.einsum("oh,bcop,pw->bchw", mh, g, mw, optimize=True)


def l1_loss(pred, target):
    """Mean absolute error and its gradient wrt pred (sign(0) = 0)."""
    if pred.shape != target.shape:
        raise InvalidInputError(f"l1: shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(np.abs(d))), np.sign(d) / d.size
