"""Forward and backward kernels on NHWC arrays.

Convolutions are lowered to a single matrix product via an explicit patch
matrix (im2col); the backward passes scatter the patch gradients back with the
same strided slices, so forward and backward share one indexing scheme.
"""
from __future__ import annotations

import numpy as np

PROB_CLAMP = 1e-12


def _patches(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, :, ky, kx, :] = xp[:, ky : ky + stride * (ho - 1) + 1 : stride, kx : kx + stride * (wo - 1) + 1 : stride, :]
    return cols


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """Zero-padded ``kh x kw`` convolution; ``w`` has shape ``(kh, kw, c_in, c_out)``.

    Padding is ``kh // 2`` so stride 1 keeps the size and stride 2 halves it (rounding up).
    """
    kh, kw, cin, cout = w.shape
    n, h, wd, c = x.shape
    if c != cin:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    ph, pw = kh // 2, kw // 2
    ho, wo = (h + 2 * ph - kh) // stride + 1, (wd + 2 * pw - kw) // stride + 1
    if kh == 1 and kw == 1 and stride == 1:
        cols2d = x.reshape(-1, cin)
    else:
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
        cols2d = _patches(xp, kh, kw, stride, ho, wo).reshape(-1, kh * kw * cin)
    out = cols2d @ w.reshape(-1, cout) + b
    return out.reshape(n, ho, wo, cout), (cols2d, x.shape, stride)


def conv_backward(dout: np.ndarray, w: np.ndarray, cache):
    cols2d, xshape, stride = cache
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = xshape
    _, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols2d.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(-1, cout).T
    if kh == 1 and kw == 1 and stride == 1:
        return dcols.reshape(xshape), dw, db
    ph, pw = kh // 2, kw // 2
    dcols = dcols.reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros((n, h + 2 * ph, wd + 2 * pw, cin), dtype=dout.dtype)
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, ky : ky + stride * (ho - 1) + 1 : stride, kx : kx + stride * (wo - 1) + 1 : stride, :] += dcols[:, :, :, ky, kx, :]
    return dxp[:, ph : ph + h, pw : pw + wd, :], dw, db


def deconv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-2 transposed 3x3 convolution producing exactly twice the input size.

    ``w`` has shape ``(c_in, 3, 3, c_out)``. Input pixel ``i`` contributes to output
    ``2*i + k - 1`` for kernel tap ``k``; taps falling outside the output are dropped.
    This is the adjoint of a stride-2, pad-1 convolution.
    """
    cin, kh, kw, cout = w.shape
    n, h, wd, c = x.shape
    if c != cin:
        raise ValueError(f"deconv expects {cin} input channels, got {c}")
    x2d = x.reshape(-1, cin)
    z = (x2d @ w.reshape(cin, -1)).reshape(n, h, wd, kh, kw, cout)
    buf = np.zeros((n, 2 * h + 1, 2 * wd + 1, cout), dtype=z.dtype)
    for ky in range(kh):
        for kx in range(kw):
            buf[:, ky : ky + 2 * h - 1 : 2, kx : kx + 2 * wd - 1 : 2, :] += z[:, :, :, ky, kx, :]
    out = buf[:, 1:, 1:, :] + b
    return out, (x2d, x.shape)


def deconv_backward(dout: np.ndarray, w: np.ndarray, cache):
    x2d, xshape = cache
    cin, kh, kw, cout = w.shape
    n, h, wd, _ = xshape
    dbuf = np.pad(dout, ((0, 0), (1, 0), (1, 0), (0, 0)))
    dz = np.empty((n, h, wd, kh, kw, cout), dtype=dout.dtype)
    for ky in range(kh):
        for kx in range(kw):
            dz[:, :, :, ky, kx, :] = dbuf[:, ky : ky + 2 * h - 1 : 2, kx : kx + 2 * wd - 1 : 2, :]
    dz2d = dz.reshape(-1, kh * kw * cout)
    dw = (x2d.T @ dz2d).reshape(w.shape)
    db = dout.reshape(-1, cout).sum(axis=0)
    dx = (dz2d @ w.reshape(cin, -1).T).reshape(xshape)
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * (out > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true class and its gradient w.r.t. the logits.

    ``target`` holds integer class indices with the shape of ``probs`` minus the channel axis.
    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``; clamped pixels get zero gradient.
    """
    if probs.shape[:-1] != target.shape:
        raise ValueError(f"prediction {probs.shape} and target {target.shape} disagree")
    count = target.size
    p_true = np.take_along_axis(probs, target[..., None], axis=-1)[..., 0]
    clipped = np.clip(p_true, PROB_CLAMP, 1 - PROB_CLAMP)
    loss = float(-np.log(clipped.astype(np.float64)).mean())
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, target[..., None], 1.0, axis=-1)
    active = (p_true == clipped)[..., None]
    dlogits = np.where(active, probs - onehot, 0.0) / count
    return loss, dlogits.astype(probs.dtype, copy=False)
