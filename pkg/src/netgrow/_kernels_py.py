"""Pure numpy im2col / col2im, used when the compiled module is unavailable."""

from __future__ import annotations

import numpy as np


def im2col(x: np.ndarray, d: int, pad: int) -> np.ndarray:
    """Patches of a ``(n, C, H, W)`` batch as ``(n, C*d*d, Ho*Wo)``, stride 1."""
    n, C, H, W = x.shape
    Ho = H + 2 * pad - d + 1
    Wo = W + 2 * pad - d + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, C, d, d, Ho, Wo))
    for u in range(d):
        for v in range(d):
            cols[:, :, u, v] = xp[:, :, u:u + Ho, v:v + Wo]
    return cols.reshape(n, C * d * d, Ho * Wo)


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int], d: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back into an image batch."""
    n, C, H, W = shape
    Ho = H + 2 * pad - d + 1
    Wo = W + 2 * pad - d + 1
    c = cols.reshape(n, C, d, d, Ho, Wo)
    xp = np.zeros((n, C, H + 2 * pad, W + 2 * pad))
    for u in range(d):
        for v in range(d):
            xp[:, :, u:u + Ho, v:v + Wo] += c[:, :, u, v]
    return xp[:, :, pad:pad + H, pad:pad + W].copy()
