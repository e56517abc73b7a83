"""Conv kernel backend selection.

The strided 1-d cross-correlation is the hot inner loop of the patch
embedding path. A compiled Cython kernel is used when available; otherwise a
numpy (sliding-window + einsum) fallback. Force a backend with
MTSMAE_BACKEND={compiled,numpy}.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_forced = os.environ.get("MTSMAE_BACKEND", "").strip().lower()

_ext = None
if _forced != "numpy":
    try:
        from . import _conv as _ext  # noqa: F401
    except ImportError:
        _ext = None
        if _forced == "compiled":
            raise ImportError(
                "MTSMAE_BACKEND=compiled but mtsmae.kernels._conv is not built; "
                "run `python setup.py build_ext --inplace`")

BACKEND = "compiled" if _ext is not None else "numpy"

# The typed loop beats einsum only while the per-window work is small; at
# large channel counts BLAS wins, so fall back past this many multiplies
# per output position (K * C_in * C_out). Forcing MTSMAE_BACKEND=compiled
# disables the crossover.
_COMPILED_MAX_WORK = 4096


def _use_compiled(w: np.ndarray) -> bool:
    if _ext is None:
        return False
    if _forced == "compiled":
        return True
    return w.shape[0] * w.shape[1] * w.shape[2] <= _COMPILED_MAX_WORK


def _out_len(L_pad: int, K: int, stride: int) -> int:
    return (L_pad - K) // stride + 1


def conv1d_forward_numpy(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    # windows: (L_out, C_in, K)
    K = w.shape[0]
    windows = sliding_window_view(xp, K, axis=0)[::stride]
    return np.einsum("tck,kco->to", windows, w, optimize=True)


def conv1d_backward_numpy(xp, w, stride, dy):
    K, _, _ = w.shape
    windows = sliding_window_view(xp, K, axis=0)[::stride]
    dw = np.einsum("tck,to->kco", windows, dy, optimize=True)
    dxp = np.zeros_like(xp)
    L_out = dy.shape[0]
    for k in range(K):
        dxp[k:k + stride * L_out:stride] += dy @ w[k].T
    return dxp, dw


def conv1d_forward(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    if _use_compiled(w):
        xp = np.ascontiguousarray(xp)
        w = np.ascontiguousarray(w)
        out = np.empty((_out_len(xp.shape[0], w.shape[0], stride), w.shape[2]),
                       dtype=xp.dtype)
        _ext.conv1d_forward(xp, w, stride, out)
        return out
    return conv1d_forward_numpy(xp, w, stride)


def conv1d_backward(xp, w, stride, dy):
    if _use_compiled(w):
        xp = np.ascontiguousarray(xp)
        w = np.ascontiguousarray(w)
        dy = np.ascontiguousarray(dy)
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        _ext.conv1d_backward(xp, w, stride, dy, dxp, dw)
        return dxp, dw
    return conv1d_backward_numpy(xp, w, stride, dy)
