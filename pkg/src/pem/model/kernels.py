"""Convolution and pooling kernels with two interchangeable backends.

The compiled extension (``pem.model._convkern``, Cython) is picked at import
when available; otherwise a pure numpy im2col implementation is used. Set
``PEM_KERNELS=python`` or ``PEM_KERNELS=cython`` to force one. Both backends
are deterministic; their float32 results may differ in the last bits because
accumulation order differs.

See benchmarks/bench_kernels.py for a speed comparison.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from pem.model import _convkern
except ImportError:
    _convkern = None

_choice = os.environ.get("PEM_KERNELS", "auto")
if _choice == "cython" and _convkern is None:
    raise ImportError("PEM_KERNELS=cython but the compiled extension is not built")
if _choice not in ("auto", "cython", "python"):
    raise ValueError(f"PEM_KERNELS must be auto|cython|python, got {_choice!r}")

_use_ext = _convkern is not None and _choice != "python"
BACKEND = "cython" if _use_ext else "python"


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------- numpy path


def _pad_input(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv2d_forward_np(x, w, b, stride, pad):
    n, _, _, _ = x.shape
    f, c, kh, kw = w.shape
    xp = _pad_input(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    y = cols @ w.reshape(f, -1).T + b
    return np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))


def _conv2d_backward_np(x, w, stride, pad, dy):
    n, c, h, wdt = x.shape
    f, _, kh, kw = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    xp = _pad_input(x, pad)
    db = dy.sum(axis=(0, 2, 3))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            dw[:, :, i, j] = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))
            contrib = np.tensordot(dy, w[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad : pad + h, pad : pad + wdt] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


def _maxpool_forward_np(x, size, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, size * size)
    local = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    ih = (np.arange(oh) * stride)[None, None, :, None] + local // size
    iw = (np.arange(ow) * stride)[None, None, None, :] + local % size
    arg = (ih * w + iw).astype(np.int64)
    return np.ascontiguousarray(y), arg


def _maxpool_backward_np(dy, arg, x_shape):
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h * w), dtype=dy.dtype)
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ni, ci, arg), dy)
    return dx.reshape(x_shape)


# ------------------------------------------------------------- public kernels


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlate (N,C,H,W) with (F,C,KH,KW) filters; returns (N,F,OH,OW)."""
    if _use_ext:
        x = np.ascontiguousarray(x)
        w = np.ascontiguousarray(w)
        b = np.ascontiguousarray(b)
        oh = conv_out_size(x.shape[2], w.shape[2], stride, pad)
        ow = conv_out_size(x.shape[3], w.shape[3], stride, pad)
        out = np.empty((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
        _convkern.conv2d_forward(x, w, b, stride, pad, out)
        return out
    return _conv2d_forward_np(x, w, b, stride, pad)


def conv2d_backward(x, w, stride, pad, dy):
    """Gradients (dx, dw, db) of the conv output w.r.t. input, weights, bias."""
    if _use_ext:
        x = np.ascontiguousarray(x)
        w = np.ascontiguousarray(w)
        dy = np.ascontiguousarray(dy)
        dx = np.zeros_like(x)
        dw = np.zeros_like(w)
        db = np.zeros(w.shape[0], dtype=w.dtype)
        _convkern.conv2d_backward(x, w, stride, pad, dy, dx, dw, db)
        return dx, dw, db
    return _conv2d_backward_np(x, w, stride, pad, dy)


def maxpool_forward(x, size, stride):
    """Max pool; returns (y, argmax) with argmax as flat H*W input indices."""
    if _use_ext:
        x = np.ascontiguousarray(x)
        oh = conv_out_size(x.shape[2], size, stride, 0)
        ow = conv_out_size(x.shape[3], size, stride, 0)
        y = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=x.dtype)
        arg = np.empty(y.shape, dtype=np.int64)
        _convkern.maxpool_forward(x, size, stride, y, arg)
        return y, arg
    return _maxpool_forward_np(x, size, stride)


def maxpool_backward(dy, arg, x_shape):
    """Scatter pooled gradients back to the argmax positions."""
    if _use_ext:
        dy = np.ascontiguousarray(dy)
        arg = np.ascontiguousarray(arg)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        _convkern.maxpool_backward(dy, arg, dx.reshape(x_shape[0], x_shape[1], -1))
        return dx
    return _maxpool_backward_np(dy, arg, x_shape)
