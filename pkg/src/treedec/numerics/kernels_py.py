"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Same signatures as the compiled backend; used as fallback and as the
reference the compiled kernels are tested against.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _out_dim(n: int, k: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """x (C,H,W) -> (C*kh*kw, OH*OW) with 'same' zero padding."""
    c, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    oh, ow = _out_dim(h, kh, ph, stride), _out_dim(w, kw, pw, stride)
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    xp[:, ph : ph + h, pw : pw + w] = x
    cols = np.empty((c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + oh * stride : stride, j : j + ow * stride : stride]
    return cols.reshape(c * kh * kw, oh * ow)


def _col2im(
    cols: np.ndarray, shape: tuple[int, int, int], kh: int, kw: int, stride: int
) -> np.ndarray:
    c, h, w = shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    oh, ow = _out_dim(h, kh, ph, stride), _out_dim(w, kw, pw, stride)
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    cols = cols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, i : i + oh * stride : stride, j : j + ow * stride : stride] += cols[:, i, j]
    return xp[:, ph : ph + h, pw : pw + w]


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """x (C,H,W), w (O,C,kh,kw) -> (O,OH,OW), 'same' zero padding."""
    o, c, kh, kw = w.shape
    _, h, wd = x.shape
    oh = _out_dim(h, kh, (kh - 1) // 2, stride)
    ow = _out_dim(wd, kw, (kw - 1) // 2, stride)
    cols = _im2col(x, kh, kw, stride)
    return (w.reshape(o, -1) @ cols).reshape(o, oh, ow)


def conv2d_backward_input(
    gout: np.ndarray, w: np.ndarray, x_shape: tuple[int, int, int], stride: int = 1
) -> np.ndarray:
    o, c, kh, kw = w.shape
    gcols = w.reshape(o, -1).T @ gout.reshape(o, -1)
    return _col2im(gcols, x_shape, kh, kw, stride)


def conv2d_backward_weight(
    gout: np.ndarray, x: np.ndarray, w_shape: tuple[int, int, int, int], stride: int = 1
) -> np.ndarray:
    o, c, kh, kw = w_shape
    cols = _im2col(x, kh, kw, stride)
    return (gout.reshape(o, -1) @ cols.T).reshape(w_shape)
