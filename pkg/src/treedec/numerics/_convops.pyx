# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled direct-convolution kernels for the hot inner loops.

Same contracts as kernels_py: (C,H,W) inputs, (O,C,kh,kw) weights,
'same' zero padding.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def conv2d_forward(cnp.float64_t[:, :, ::1] x, cnp.float64_t[:, :, :, ::1] w,
                   int stride=1):
    cdef int c = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef int o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef int oh = (h + 2 * ph - kh) // stride + 1
    cdef int ow = (wd + 2 * pw - kw) // stride + 1
    out_arr = np.zeros((o, oh, ow), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr
    cdef int oc, ic, i, j, ki, kj, yi, xj
    cdef double acc
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ic in range(c):
                    for ki in range(kh):
                        yi = i * stride + ki - ph
                        if yi < 0 or yi >= h:
                            continue
                        for kj in range(kw):
                            xj = j * stride + kj - pw
                            if xj < 0 or xj >= wd:
                                continue
                            acc += x[ic, yi, xj] * w[oc, ic, ki, kj]
                out[oc, i, j] = acc
    return out_arr


def conv2d_backward_input(cnp.float64_t[:, :, ::1] gout,
                          cnp.float64_t[:, :, :, ::1] w,
                          x_shape, int stride=1):
    cdef int c = x_shape[0], h = x_shape[1], wd = x_shape[2]
    cdef int o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef int oh = gout.shape[1], ow = gout.shape[2]
    gx_arr = np.zeros((c, h, wd), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] gx = gx_arr
    cdef int oc, ic, i, j, ki, kj, yi, xj
    cdef double g
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                g = gout[oc, i, j]
                if g == 0.0:
                    continue
                for ic in range(c):
                    for ki in range(kh):
                        yi = i * stride + ki - ph
                        if yi < 0 or yi >= h:
                            continue
                        for kj in range(kw):
                            xj = j * stride + kj - pw
                            if xj < 0 or xj >= wd:
                                continue
                            gx[ic, yi, xj] += g * w[oc, ic, ki, kj]
    return gx_arr


def conv2d_backward_weight(cnp.float64_t[:, :, ::1] gout,
                           cnp.float64_t[:, :, ::1] x,
                           w_shape, int stride=1):
    cdef int o = w_shape[0], c = w_shape[1], kh = w_shape[2], kw = w_shape[3]
    cdef int h = x.shape[1], wd = x.shape[2]
    cdef int ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef int oh = gout.shape[1], ow = gout.shape[2]
    gw_arr = np.zeros((o, c, kh, kw), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] gw = gw_arr
    cdef int oc, ic, i, j, ki, kj, yi, xj
    cdef double g
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                g = gout[oc, i, j]
                if g == 0.0:
                    continue
                for ic in range(c):
                    for ki in range(kh):
                        yi = i * stride + ki - ph
                        if yi < 0 or yi >= h:
                            continue
                        for kj in range(kw):
                            xj = j * stride + kj - pw
                            if xj < 0 or xj >= wd:
                                continue
                            gw[oc, ic, ki, kj] += g * x[ic, yi, xj]
    return gw_arr
