"""Convolution, transposed convolution, batch-norm and ReLU with exact gradients.

All tensors are channel-first ``(batch, channels, rows, cols)``. The
transposed convolution is implemented as the adjoint of the matching strided
convolution, so the pair share one im2col/col2im geometry.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def conv_out_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def im2col(x, kh, kw, stride, pad):
    sh, sw = stride
    ph, pw = pad
    B, C, H, W = x.shape
    oh, ow = conv_out_size(H, kh, sh, ph), conv_out_size(W, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * oh * ow, C * kh * kw)
    return cols, oh, ow


def col2im(cols_t, x_shape, kh, kw, stride, pad, oh, ow):
    """Scatter-add ``cols_t`` of shape (C*kh*kw, B*oh*ow) back onto an image."""
    sh, sw = stride
    ph, pw = pad
    B, C, H, W = x_shape
    cols_t = cols_t.reshape(C, kh, kw, B, oh, ow)
    xp = np.zeros((C, B, H + 2 * ph, W + 2 * pw), dtype=cols_t.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += cols_t[:, i, j]
    return np.ascontiguousarray(xp[:, :, ph:ph + H, pw:pw + W].transpose(1, 0, 2, 3))


def _channels_first(a):
    """(B, C, h, w) -> (C, B*h*w)."""
    return a.transpose(1, 0, 2, 3).reshape(a.shape[1], -1)


def conv_forward(x, w, b, stride=(1, 1), pad=(0, 0), name="conv"):
    O, C, kh, kw = w.shape
    if x.ndim != 4 or x.shape[1] != C:
        raise ShapeError(f"{name}: expected {C} input channels, got shape {x.shape}")
    cols, oh, ow = im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(O, -1).T
    out += b
    out = out.reshape(x.shape[0], oh, ow, O).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w, stride, pad, oh, ow)


def conv_backward(dout, cache):
    x_shape, cols, w, stride, pad, oh, ow = cache
    O, C, kh, kw = w.shape
    d_t = _channels_first(dout)
    dw = (d_t @ cols).reshape(w.shape)
    db = d_t.sum(axis=1)
    dx = col2im(w.reshape(O, -1).T @ d_t, x_shape, kh, kw, stride, pad, oh, ow)
    return dx, dw, db


def deconv_forward(x, w, b, stride, pad, out_hw, name="deconv"):
    """Adjoint of ``conv_forward(., w)`` for an input of spatial size ``out_hw``.

    ``w`` has shape ``(C_in, C_out, kh, kw)``.
    """
    Cin, Cout, kh, kw = w.shape
    B, C, ih, iw = x.shape
    H, W = out_hw
    oh, ow = conv_out_size(H, kh, stride[0], pad[0]), conv_out_size(W, kw, stride[1], pad[1])
    if C != Cin or (ih, iw) != (oh, ow):
        raise ShapeError(f"{name}: input {x.shape} incompatible with weights {w.shape} "
                         f"and output size {out_hw}")
    x_t = _channels_first(x)
    y = col2im(w.reshape(Cin, -1).T @ x_t, (B, Cout, H, W), kh, kw, stride, pad, oh, ow)
    y += b[None, :, None, None]
    return y, (x_t, x.shape, w, stride, pad)


def deconv_backward(dout, cache):
    x_t, x_shape, w, stride, pad = cache
    Cin, Cout, kh, kw = w.shape
    cols, oh, ow = im2col(dout, kh, kw, stride, pad)
    wm = w.reshape(Cin, -1)
    dx = (cols @ wm.T).reshape(x_shape[0], oh, ow, Cin).transpose(0, 3, 1, 2)
    dw = (x_t @ cols).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dw, db


def batchnorm_forward(x, gamma, beta, running, train, momentum=0.1, eps=1e-5):
    """``running`` is a dict with ``mean``/``var`` updated in place in train mode."""
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.size // x.shape[1]
        running["mean"] *= 1 - momentum
        running["mean"] += momentum * mu
        running["var"] *= 1 - momentum
        running["var"] += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running["mean"], running["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv[None, :, None, None], dgamma, dbeta
    mean_dxhat = dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
    dx = inv[None, :, None, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask
