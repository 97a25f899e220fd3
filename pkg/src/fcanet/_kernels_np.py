"""Pure-NumPy depthwise convolution kernels.

This is the fallback backend used when the compiled extension is missing
(or when ``FCANET_FORCE_NUMPY`` is set).  Both backends share one calling
convention:

* inputs are already zero-padded; no padding logic lives here,
* convolution is cross-correlation (kernels are not flipped),
* arrays are C-contiguous float32 or float64 and the output dtype always
  matches the input dtype.

Shapes::

    xp : (N, C, Fp, Tp)   padded input
    k  : (C, kf, kt)      one kernel per channel
    out: (N, C, Fo, To)   Fo = (Fp - kf)//sf + 1, To = (Tp - kt)//st + 1
"""

import numpy as np


def dwconv2d_forward(xp: np.ndarray, k: np.ndarray, sf: int, st: int) -> np.ndarray:
    n, c, fp, tp = xp.shape
    kc, kf, kt = k.shape
    fo = (fp - kf) // sf + 1
    to = (tp - kt) // st + 1
    out = np.zeros((n, c, fo, to), dtype=xp.dtype)
    for i in range(kf):
        for j in range(kt):
            patch = xp[:, :, i : i + sf * fo : sf, j : j + st * to : st]
            out += patch * k[None, :, i, j, None, None]
    return out


def dwconv2d_backward_x(g: np.ndarray, k: np.ndarray, sf: int, st: int,
                        fp: int, tp: int) -> np.ndarray:
    """Gradient w.r.t. the padded input (caller crops the padding off)."""
    n, c, fo, to = g.shape
    kc, kf, kt = k.shape
    gx = np.zeros((n, c, fp, tp), dtype=g.dtype)
    for i in range(kf):
        for j in range(kt):
            gx[:, :, i : i + sf * fo : sf, j : j + st * to : st] += (
                g * k[None, :, i, j, None, None]
            )
    return gx


def dwconv2d_backward_k(xp: np.ndarray, g: np.ndarray, sf: int, st: int,
                        kf: int, kt: int) -> np.ndarray:
    n, c, fo, to = g.shape
    gk = np.zeros((xp.shape[1], kf, kt), dtype=g.dtype)
    for i in range(kf):
        for j in range(kt):
            patch = xp[:, :, i : i + sf * fo : sf, j : j + st * to : st]
            gk[:, i, j] = np.einsum("ncft,ncft->c", patch, g)
    return gk
