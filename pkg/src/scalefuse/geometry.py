"""Bilinear resizing, its exact adjoint, and horizontal flips.

Resizing is separable: ``out[c] = A_h @ x[c] @ A_w.T`` where ``A_h`` and
``A_w`` are small interpolation matrices.  Sample positions follow the
half-pixel-center convention ``src = (dst + 0.5) * in / out - 0.5`` clamped to
``[0, in - 1]``.  No anti-aliasing is applied, so the operator stays exactly
linear and its transpose is available in closed form.

All functions accept ``(C, H, W)`` tensors and also ``(N, C, H, W)`` batches.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of 1-D linear interpolation weights."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    a = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - frac)
    np.add.at(a, (rows, i1), frac)
    a.setflags(write=False)
    return a


def scaled_size(h: int, w: int, factor: float):
    """Target size for a scale factor: ``round(factor * size)``, at least 1."""
    return max(1, int(round(factor * h))), max(1, int(round(factor * w)))


def bilinear_resize(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = t.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return np.array(t, dtype=np.float64)
    ah = interp_matrix(in_h, out_h)
    aw = interp_matrix(in_w, out_w)
    return ah @ t @ aw.T


def bilinear_resize_adjoint(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of ``bilinear_resize(., out_h, out_w)`` applied to ``grad_out``."""
    out_h, out_w = grad_out.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return np.array(grad_out, dtype=np.float64)
    ah = interp_matrix(in_h, out_h)
    aw = interp_matrix(in_w, out_w)
    return ah.T @ grad_out @ aw


def hflip(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t[..., ::-1])
