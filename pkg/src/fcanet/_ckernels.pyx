# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled depthwise convolution kernels.

Same calling convention as ``fcanet._kernels_np`` (pre-padded inputs,
cross-correlation, dtype in == dtype out).  Only float32/float64
C-contiguous arrays are accepted.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def _check(arr, name):
    if arr.dtype not in (np.float32, np.float64):
        raise TypeError(f"{name}: expected float32/float64, got {arr.dtype}")
    return np.ascontiguousarray(arr)


cdef void _fwd(floating[:, :, :, ::1] xp, floating[:, :, ::1] k,
               floating[:, :, :, ::1] out, Py_ssize_t sf, Py_ssize_t st) noexcept nogil:
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], fo = out.shape[2], to = out.shape[3]
    cdef Py_ssize_t kf = k.shape[1], kt = k.shape[2]
    cdef Py_ssize_t b, ch, f, t, i, j
    cdef floating acc
    for b in range(n):
        for ch in range(c):
            for f in range(fo):
                for t in range(to):
                    acc = 0
                    for i in range(kf):
                        for j in range(kt):
                            acc = acc + xp[b, ch, f * sf + i, t * st + j] * k[ch, i, j]
                    out[b, ch, f, t] = acc


cdef void _bwd_x(floating[:, :, :, ::1] g, floating[:, :, ::1] k,
                 floating[:, :, :, ::1] gx, Py_ssize_t sf, Py_ssize_t st) noexcept nogil:
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], fo = g.shape[2], to = g.shape[3]
    cdef Py_ssize_t kf = k.shape[1], kt = k.shape[2]
    cdef Py_ssize_t b, ch, f, t, i, j
    cdef floating gv
    for b in range(n):
        for ch in range(c):
            for f in range(fo):
                for t in range(to):
                    gv = g[b, ch, f, t]
                    for i in range(kf):
                        for j in range(kt):
                            gx[b, ch, f * sf + i, t * st + j] += gv * k[ch, i, j]


cdef void _bwd_k(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] g,
                 floating[:, :, ::1] gk, Py_ssize_t sf, Py_ssize_t st) noexcept nogil:
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], fo = g.shape[2], to = g.shape[3]
    cdef Py_ssize_t kf = gk.shape[1], kt = gk.shape[2]
    cdef Py_ssize_t b, ch, f, t, i, j, xf
    cdef floating a0, a1, a2, a3
    # Taps outermost so the (f, t) reduction accumulates in registers; four
    # independent accumulators break the floating-point add dependency chain
    # that would otherwise bound the loop at one term per add latency.
    for b in range(n):
        for ch in range(c):
            for i in range(kf):
                for j in range(kt):
                    a0 = 0
                    a1 = 0
                    a2 = 0
                    a3 = 0
                    for f in range(fo):
                        xf = f * sf + i
                        t = 0
                        while t + 4 <= to:
                            a0 = a0 + xp[b, ch, xf, t * st + j] * g[b, ch, f, t]
                            a1 = a1 + xp[b, ch, xf, (t + 1) * st + j] * g[b, ch, f, t + 1]
                            a2 = a2 + xp[b, ch, xf, (t + 2) * st + j] * g[b, ch, f, t + 2]
                            a3 = a3 + xp[b, ch, xf, (t + 3) * st + j] * g[b, ch, f, t + 3]
                            t = t + 4
                        while t < to:
                            a0 = a0 + xp[b, ch, xf, t * st + j] * g[b, ch, f, t]
                            t = t + 1
                    gk[ch, i, j] += (a0 + a1) + (a2 + a3)


def dwconv2d_forward(xp, k, Py_ssize_t sf, Py_ssize_t st):
    xp = _check(xp, "xp")
    k = _check(k, "k")
    cdef Py_ssize_t fo = (xp.shape[2] - k.shape[1]) // sf + 1
    cdef Py_ssize_t to = (xp.shape[3] - k.shape[2]) // st + 1
    out = np.empty((xp.shape[0], xp.shape[1], fo, to), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _fwd[float](xp, k, out, sf, st)
    else:
        _fwd[double](xp, k, out, sf, st)
    return out


def dwconv2d_backward_x(g, k, Py_ssize_t sf, Py_ssize_t st, Py_ssize_t fp, Py_ssize_t tp):
    g = _check(g, "g")
    k = _check(k, "k")
    gx = np.zeros((g.shape[0], g.shape[1], fp, tp), dtype=g.dtype)
    if g.dtype == np.float32:
        _bwd_x[float](g, k, gx, sf, st)
    else:
        _bwd_x[double](g, k, gx, sf, st)
    return gx


def dwconv2d_backward_k(xp, g, Py_ssize_t sf, Py_ssize_t st, Py_ssize_t kf, Py_ssize_t kt):
    xp = _check(xp, "xp")
    g = _check(g, "g")
    gk = np.zeros((xp.shape[1], kf, kt), dtype=g.dtype)
    if g.dtype == np.float32:
        _bwd_k[float](xp, g, gk, sf, st)
    else:
        _bwd_k[double](xp, g, gk, sf, st)
    return gk
