"""Image-shaped operations: convolution, batch normalization, resampling."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate a C x H x W input with K x C x kh x kw kernels."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects C x H x W input and K x C x kh x kw kernels, got {x.shape} and {kernels.shape}")
    C, H, W = x.shape
    K, Ck, kh, kw = kernels.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input has {C} channels but kernels expect {Ck}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    Ho, Wo = conv_output_size(H, kh, stride, pad), conv_output_size(W, kw, stride, pad)
    kmat = kernels.data.reshape(K, C * kh * kw)

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        cols = x.data.reshape(C, H * W)
    else:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
        cols = win.transpose(0, 3, 4, 1, 2).reshape(C * kh * kw, Ho * Wo)
    out = (kmat @ cols).reshape(K, Ho, Wo)

    def bw(g):
        g2 = g.reshape(K, Ho * Wo)
        if kernels.requires_grad:
            kernels._accumulate((g2 @ cols.T).reshape(kernels.shape))
        if x.requires_grad:
            dcols = kmat.T @ g2
            if kh == 1 and kw == 1 and stride == 1 and pad == 0:
                x._accumulate(dcols.reshape(C, H, W))
                return
            dcols = dcols.reshape(C, kh, kw, Ho, Wo)
            dxp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j]
            x._accumulate(dxp[:, pad:pad + H, pad:pad + W])

    return Tensor.from_op(out, (x, kernels), bw, "conv2d")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: dict,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of a C x H x W map.

    In training mode the statistics of ``x`` itself are used and
    ``running['mean']``/``running['var']`` are updated in place (unless
    ``running['frozen']`` is set).  Inference mode uses the running values.
    """
    C = x.shape[0]
    n = x.data[0].size
    if training:
        mu = x.data.reshape(C, -1).mean(axis=1)
        var = x.data.reshape(C, -1).var(axis=1)
        if not running.get("frozen", False):
            unbiased = var * n / max(n - 1, 1)
            running["mean"] = (1 - momentum) * running["mean"] + momentum * mu
            running["var"] = (1 - momentum) * running["var"] + momentum * unbiased
    else:
        mu, var = running["mean"], running["var"]
    inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = (x.data - mu.astype(x.data.dtype)[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(1, 2)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(1, 2)))
        if x.requires_grad:
            dxhat = g * gamma.data[:, None, None]
            if training:
                s1 = dxhat.sum(axis=(1, 2), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
                x._accumulate(inv[:, None, None] / n * (n * dxhat - s1 - xhat * s2))
            else:
                x._accumulate(dxhat * inv[:, None, None])

    return Tensor.from_op(out, (x, gamma, beta), bw, "batch_norm2d")


def pooling_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i averages input bins [floor(i*n/m), ceil((i+1)*n/m))."""
    P = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average-resample a C x H x W map to C x out_h x out_w."""
    C, H, W = x.shape
    Ph = pooling_matrix(H, out_h, x.data.dtype)
    Pw = pooling_matrix(W, out_w, x.data.dtype)
    out = Ph @ (x.data @ Pw.T)

    def bw(g):
        x._accumulate((Ph.T @ g) @ Pw)

    return Tensor.from_op(out, (x,), bw, "adaptive_avg_pool2d")
