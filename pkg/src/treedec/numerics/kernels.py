"""Convolution kernel dispatch: compiled extension when available,
numpy fallback otherwise.  TREEDEC_PURE_PYTHON=1 forces the fallback."""

from __future__ import annotations

import os

import numpy as np

from . import kernels_py

if os.environ.get("TREEDEC_PURE_PYTHON"):
    _impl = kernels_py
else:
    try:
        from . import _convops as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = kernels_py

BACKEND: str = _impl.BACKEND


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    return _impl.conv2d_forward(
        np.ascontiguousarray(x), np.ascontiguousarray(w), stride
    )


def conv2d_backward_input(
    gout: np.ndarray, w: np.ndarray, x_shape: tuple[int, int, int], stride: int = 1
) -> np.ndarray:
    return _impl.conv2d_backward_input(
        np.ascontiguousarray(gout), np.ascontiguousarray(w), tuple(x_shape), stride
    )


def conv2d_backward_weight(
    gout: np.ndarray, x: np.ndarray, w_shape: tuple[int, ...], stride: int = 1
) -> np.ndarray:
    return _impl.conv2d_backward_weight(
        np.ascontiguousarray(gout), np.ascontiguousarray(x), tuple(w_shape), stride
    )
