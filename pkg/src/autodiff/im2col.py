"""
im2col / col2im lowering for 2-D convolution.

A convolution becomes one matrix product between the unfolded input patches and
the flattened kernel; numpy hands that product to its blocked BLAS kernel. The
naive nested-loop convolution kept at the bottom of this module is the
reference the fast path is tested against.
"""
from typing import Tuple

import numpy as np


def output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def transposed_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + kernel


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> Tuple[np.ndarray, int, int]:
    """
    Unfold (N, C, H, W) into patch rows.

    Returns:
        (cols, out_h, out_w) where cols has shape (N*out_h*out_w, C*K*K), rows
        ordered (n, i, j) and columns ordered (c, ky, kx)
    """
    n, c, h, w = x.shape
    out_h = output_size(h, kernel, stride, pad)
    out_w = output_size(w, kernel, stride, pad)
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kernel, kernel, out_h, out_w), dtype=x.dtype)
    for ky in range(kernel):
        y_max = ky + stride * out_h
        for kx in range(kernel):
            x_max = kx + stride * out_w
            cols[:, :, ky, kx, :, :] = padded[:, :, ky:y_max:stride, kx:x_max:stride]
    cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, -1)
    return cols, out_h, out_w


def col2im(cols: np.ndarray, x_shape: Tuple[int, int, int, int], kernel: int, stride: int, pad: int) -> np.ndarray:
    """
    Fold patch rows back into (N, C, H, W), summing overlapping contributions.
    This is the adjoint of im2col.
    """
    n, c, h, w = x_shape
    out_h = output_size(h, kernel, stride, pad)
    out_w = output_size(w, kernel, stride, pad)
    cols = cols.reshape(n, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    padded = np.zeros((n, c, h + 2 * pad + stride - 1, w + 2 * pad + stride - 1), dtype=cols.dtype)
    for ky in range(kernel):
        y_max = ky + stride * out_h
        for kx in range(kernel):
            x_max = kx + stride * out_w
            padded[:, :, ky:y_max:stride, kx:x_max:stride] += cols[:, :, ky, kx, :, :]
    return padded[:, :, pad:pad + h, pad:pad + w]


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Plain nested loops, no lowering. Slow; used as a test oracle only."""
    n, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    out_h = output_size(h, k, stride, pad)
    out_w = output_size(w, k, stride, pad)
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, c_out, out_h, out_w), dtype=np.float64)
    for b in range(n):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    total = float(bias[o])
                    for ci in range(c_in):
                        for ky in range(k):
                            for kx in range(k):
                                total += padded[b, ci, i * stride + ky, j * stride + kx] * weight[o, ci, ky, kx]
                    out[b, o, i, j] = total
    return out
