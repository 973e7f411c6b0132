"""Convolution and pooling kernels, numba-jitted with a numpy fallback.

Forward/backward pairs for valid (unpadded) 2-D convolution and
non-overlapping max pooling. The numpy paths use stride tricks and einsum;
the jit paths are plain loops. Both operate on float64 NCHW tensors and
agree to tight tolerances (summation order differs, so not bitwise).

Pooling breaks argmax ties toward the first maximum in row-major window
order on both backends.
"""

from __future__ import annotations

import numpy as np

from .. import backend
from ..backend import njit
from ..errors import ShapeError


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int) -> tuple[int, int]:
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (B, C, Ho, Wo, kh, kw) view, no copy
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv2d_forward_numpy(x, w, b, stride):
    win = _windows(x, w.shape[2], w.shape[3], stride)
    out = np.einsum("bcijuv,fcuv->bfij", win, w, optimize=True)
    return out + b[None, :, None, None]


@njit(cache=True)
def _conv2d_forward_jit(x, w, b, stride):  # pragma: no cover - measured via dispatch
    bs, cin, h, ww = x.shape
    f, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (ww - kw) // stride + 1
    out = np.empty((bs, f, ho, wo))
    for n in range(bs):
        for k in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[k]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[n, c, i * stride + u, j * stride + v] * w[k, c, u, v]
                    out[n, k, i, j] = acc
    return out


def _conv2d_backward_numpy(x, w, dout, stride):
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = dout.shape[2], dout.shape[3]
    win = _windows(x, kh, kw, stride)
    dw = np.einsum("bfij,bcijuv->fcuv", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    for u in range(kh):
        for v in range(kw):
            contrib = np.einsum("bfij,fc->bcij", dout, w[:, :, u, v], optimize=True)
            # strided slices for a fixed (u, v) never overlap
            dx[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += contrib
    return dx, dw, db


@njit(cache=True)
def _conv2d_backward_jit(x, w, dout, stride):  # pragma: no cover
    bs, cin, h, ww = x.shape
    f, _, kh, kw = w.shape
    ho = dout.shape[2]
    wo = dout.shape[3]
    dx = np.zeros((bs, cin, h, ww))
    dw = np.zeros((f, cin, kh, kw))
    db = np.zeros(f)
    for n in range(bs):
        for k in range(f):
            for i in range(ho):
                for j in range(wo):
                    g = dout[n, k, i, j]
                    db[k] += g
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                dw[k, c, u, v] += g * x[n, c, i * stride + u, j * stride + v]
                                dx[n, c, i * stride + u, j * stride + v] += g * w[k, c, u, v]
    return dx, dw, db


def _maxpool_forward_numpy(x, k):
    bs, c, h, w = x.shape
    ho, wo = h // k, w // k
    x2 = x[:, :, :ho * k, :wo * k]
    x2 = x2.reshape(bs, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    flat = x2.reshape(bs, c, ho, wo, k * k)
    idx = flat.argmax(axis=4)  # first max in row-major window order
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    return out, idx.astype(np.int64)


@njit(cache=True)
def _maxpool_forward_jit(x, k):  # pragma: no cover
    bs, c, h, w = x.shape
    ho = h // k
    wo = w // k
    out = np.empty((bs, c, ho, wo))
    idx = np.empty((bs, c, ho, wo), dtype=np.int64)
    for n in range(bs):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[n, ch, i * k, j * k]
                    arg = 0
                    for u in range(k):
                        for v in range(k):
                            val = x[n, ch, i * k + u, j * k + v]
                            if val > best:
                                best = val
                                arg = u * k + v
                    out[n, ch, i, j] = best
                    idx[n, ch, i, j] = arg
    return out, idx


def _maxpool_backward_numpy(dout, idx, k, h, w):
    bs, c, ho, wo = dout.shape
    flat = np.zeros((bs, c, ho, wo, k * k))
    np.put_along_axis(flat, idx[..., None], dout[..., None], axis=4)
    x2 = flat.reshape(bs, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros((bs, c, h, w))
    dx[:, :, :ho * k, :wo * k] = x2.reshape(bs, c, ho * k, wo * k)
    return dx


@njit(cache=True)
def _maxpool_backward_jit(dout, idx, k, h, w):  # pragma: no cover
    bs, c, ho, wo = dout.shape
    dx = np.zeros((bs, c, h, w))
    for n in range(bs):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    a = idx[n, ch, i, j]
                    u = a // k
                    v = a - u * k
                    dx[n, ch, i * k + u, j * k + v] += dout[n, ch, i, j]
    return dx


_conv2d_forward = backend.select(_conv2d_forward_jit, _conv2d_forward_numpy)
_conv2d_backward = backend.select(_conv2d_backward_jit, _conv2d_backward_numpy)
_maxpool_forward = backend.select(_maxpool_forward_jit, _maxpool_forward_numpy)
_maxpool_backward = backend.select(_maxpool_backward_jit, _maxpool_backward_numpy)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid convolution of (B, C, H, W) with (F, C, kh, kw) -> (B, F, Ho, Wo)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weights, got {x.ndim}-D / {w.ndim}-D")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: input {x.shape[1]}, weights {w.shape[1]}")
    _conv_out_hw(x.shape[2], x.shape[3], w.shape[2], w.shape[3], stride)
    return _conv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w), b, stride)


def conv2d_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray, stride: int = 1):
    """Gradients (dx, dw, db) of the valid convolution."""
    return _conv2d_backward(np.ascontiguousarray(x), np.ascontiguousarray(w),
                            np.ascontiguousarray(dout), stride)


def maxpool_forward(x: np.ndarray, k: int):
    """Non-overlapping k x k max pooling; trailing rows/cols that do not
    fill a window are dropped. Returns (out, argmax_indices)."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects 4-D input, got {x.ndim}-D")
    if x.shape[2] < k or x.shape[3] < k:
        raise ShapeError(f"pool size {k} larger than input {x.shape[2]}x{x.shape[3]}")
    return _maxpool_forward(np.ascontiguousarray(x), k)


def maxpool_backward(dout: np.ndarray, idx: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    """Scatter pooled gradients back to the (B, C, h, w) input shape."""
    return _maxpool_backward(np.ascontiguousarray(dout), idx, k, h, w)
