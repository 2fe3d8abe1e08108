"""Backend selection for the convolution unfold kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded.  Setting ``NETGROW_PURE_PYTHON=1`` forces the
fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("NETGROW_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def im2col(x: np.ndarray, d: int, pad: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if _compiled is not None:
        return _compiled.im2col(x, int(d), int(pad))
    return _kernels_py.im2col(x, d, pad)


def col2im(cols: np.ndarray, shape, d: int, pad: int) -> np.ndarray:
    cols = np.asarray(cols, dtype=np.float64)
    if _compiled is not None:
        return _compiled.col2im(cols, tuple(int(s) for s in shape), int(d), int(pad))
    return _kernels_py.col2im(cols, shape, d, pad)
