"""Differentiable operations on :class:`~fcanet.tensor.Tensor`.

Conventions shared by everything here:

* convolutions are cross-correlations (no kernel flip),
* "same" padding pads with zeros, split symmetrically with the extra sample
  on the high-index side, so output length is ``ceil(in / stride)``,
* an op never mutates its inputs and always returns a fresh array,
* dtype in == dtype out (mixing float32 and float64 operands is an error),
* global average pools accumulate in float64 and cast back, so pooling a
  constant input returns that constant exactly.

Convolution hot loops are delegated to :mod:`fcanet.kernels` (compiled
extension when available, NumPy fallback otherwise).
"""

import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import erf as sp_erf

from . import kernels
from .errors import ArgumentError, ShapeError
from .tensor import Tensor, apply_op

# ---------------------------------------------------------------------------
# helpers


def _check_float(t: Tensor, op: str, name: str) -> None:
    if not isinstance(t, Tensor):
        raise ArgumentError(f"{op}: {name} must be a Tensor, got {type(t).__name__}")
    if t.data.dtype not in (np.float32, np.float64):
        raise ArgumentError(f"{op}: {name} must be float32/float64, got {t.data.dtype}")


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ArgumentError(f"{op}: mixed dtypes {sorted(map(str, dtypes))}")


def same_pad(size: int, k: int, stride: int) -> Tuple[int, int]:
    """Zero-padding (low, high) so output length is ceil(size/stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo


def _conv_out(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - k) // stride + 1


# ---------------------------------------------------------------------------
# arithmetic / shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_float(a, "add", "a")
    _check_float(b, "add", "b")
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    fwd = lambda: a.data + b.data
    bwd = lambda g: (g, g)
    return apply_op("add", (a, b), fwd(), bwd, fwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_float(a, "mul", "a")
    _check_float(b, "mul", "b")
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    fwd = lambda: a.data * b.data
    bwd = lambda g: (g * b.data, g * a.data)
    return apply_op("mul", (a, b), fwd(), bwd, fwd)


def scale(x: Tensor, c: float) -> Tensor:
    _check_float(x, "scale", "x")
    c = float(c)
    fwd = lambda: x.data * c
    bwd = lambda g: (g * c,)
    return apply_op("scale", (x,), fwd(), bwd, fwd)


def reshape(x: Tensor, shape) -> Tensor:
    _check_float(x, "reshape", "x")
    shape = tuple(int(s) for s in shape)
    old = x.shape
    fwd = lambda: np.ascontiguousarray(x.data.reshape(shape))
    bwd = lambda g: (np.ascontiguousarray(g.reshape(old)),)
    return apply_op("reshape", (x,), fwd(), bwd, fwd)


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    _check_float(x, "moveaxis", "x")
    fwd = lambda: np.ascontiguousarray(np.moveaxis(x.data, src, dst))
    bwd = lambda g: (np.ascontiguousarray(np.moveaxis(g, dst, src)),)
    return apply_op("moveaxis", (x,), fwd(), bwd, fwd)


def sum_all(x: Tensor) -> Tensor:
    _check_float(x, "sum_all", "x")
    fwd = lambda: np.asarray(x.data.sum(), dtype=x.dtype)
    bwd = lambda g: (np.broadcast_to(g, x.shape).copy(),)
    return apply_op("sum_all", (x,), fwd(), bwd, fwd)


def mean_all(x: Tensor) -> Tensor:
    _check_float(x, "mean_all", "x")
    inv = 1.0 / x.data.size
    fwd = lambda: np.asarray(x.data.mean(), dtype=x.dtype)
    bwd = lambda g: (np.broadcast_to(g * inv, x.shape).astype(x.dtype, copy=True),)
    return apply_op("mean_all", (x,), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# activations


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function (branch on sign)."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Tensor) -> Tensor:
    _check_float(x, "relu", "x")
    fwd = lambda: np.maximum(x.data, 0)
    bwd = lambda g: (g * (x.data > 0), )
    return apply_op("relu", (x,), fwd(), bwd, fwd)


def sigmoid(x: Tensor) -> Tensor:
    _check_float(x, "sigmoid", "x")
    fwd = lambda: _sigmoid_stable(x.data)
    s = fwd()
    bwd = lambda g: (g * s * (1.0 - s),)
    return apply_op("sigmoid", (x,), s, bwd, fwd)


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x) (a.k.a. SiLU)."""
    _check_float(x, "swish", "x")
    def fwd():
        return x.data * _sigmoid_stable(x.data)
    s = _sigmoid_stable(x.data)
    bwd = lambda g: (g * (s * (1.0 + x.data * (1.0 - s))),)
    return apply_op("swish", (x,), x.data * s, bwd, fwd)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form: x * Phi(x)."""
    _check_float(x, "gelu", "x")

    def cdf(v):
        # python-float constants so float32 inputs stay float32
        return 0.5 * (1.0 + sp_erf(v / math.sqrt(2.0)))

    def fwd():
        return x.data * cdf(x.data)

    phi = np.exp(-0.5 * x.data ** 2) / math.sqrt(2.0 * math.pi)
    c = cdf(x.data)
    bwd = lambda g: (g * (c + x.data * phi),)
    return apply_op("gelu", (x,), x.data * c, bwd, fwd)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "swish": swish, "gelu": gelu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ArgumentError(
            f"activation: unknown kind {kind!r}, expected one of "
            f"{sorted(_ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# linear / pointwise


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: (..., D_in) -> (..., D_out)."""
    _check_float(x, "linear", "x")
    _check_float(w, "linear", "w")
    if w.ndim != 2:
        raise ShapeError(f"linear: w must be 2-d (D_out, D_in), got {w.shape}")
    d_out, d_in = w.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: x last axis {x.shape[-1]} != D_in {d_in}")
    inputs = [x, w]
    if b is not None:
        _check_float(b, "linear", "b")
        if b.shape != (d_out,):
            raise ShapeError(f"linear: b must have shape ({d_out},), got {b.shape}")
        inputs.append(b)
    _check_same_dtype("linear", *inputs)

    def fwd():
        out = x.data @ w.data.T
        if b is not None:
            out = out + b.data
        return out

    def bwd(g):
        g2 = g.reshape(-1, d_out)
        x2 = x.data.reshape(-1, d_in)
        gx = (g2 @ w.data).reshape(x.shape)
        gw = g2.T @ x2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return apply_op("linear", tuple(inputs), fwd(), bwd, fwd)


def pointwise_conv(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
                   batched: Optional[bool] = None) -> Tensor:
    """1x1 convolution: mixes channels at every spatial position.

    ``x`` is (C_in, *spatial) or (N, C_in, *spatial); ``w`` is (C_out, C_in).
    When ``batched`` is None the channel axis is inferred from C_in (pass it
    explicitly if batch size could equal C_in).
    """
    _check_float(x, "pointwise_conv", "x")
    _check_float(w, "pointwise_conv", "w")
    if w.ndim != 2:
        raise ShapeError(f"pointwise_conv: w must be (C_out, C_in), got {w.shape}")
    c_out, c_in = w.shape
    if batched is None:
        if x.ndim >= 1 and x.shape[0] == c_in:
            batched = False
        elif x.ndim >= 2 and x.shape[1] == c_in:
            batched = True
        else:
            raise ShapeError(
                f"pointwise_conv: no axis of size C_in={c_in} in leading "
                f"positions of x {x.shape}")
    ch_axis = 1 if batched else 0
    if x.ndim < ch_axis + 1 or x.shape[ch_axis] != c_in:
        raise ShapeError(
            f"pointwise_conv: x {x.shape} has no C_in={c_in} at axis {ch_axis}")
    inputs = [x, w]
    if b is not None:
        _check_float(b, "pointwise_conv", "b")
        if b.shape != (c_out,):
            raise ShapeError(f"pointwise_conv: b must be ({c_out},), got {b.shape}")
        inputs.append(b)
    _check_same_dtype("pointwise_conv", *inputs)

    n_spatial = x.ndim - ch_axis - 1
    bshape = (1,) * ch_axis + (c_out,) + (1,) * n_spatial
    sub_x = "nc..." if batched else "c..."
    sub_o = "no..." if batched else "o..."

    def fwd():
        out = np.einsum(f"oc,{sub_x}->{sub_o}", w.data, x.data)
        if b is not None:
            out = out + b.data.reshape(bshape)
        return np.ascontiguousarray(out)

    def bwd(g):
        gx = np.ascontiguousarray(np.einsum(f"oc,{sub_o}->{sub_x}", w.data, g))
        contract = tuple(i for i in range(x.ndim) if i != ch_axis)
        gw = np.tensordot(g, x.data, axes=(contract, contract))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=contract)

    return apply_op("pointwise_conv", tuple(inputs), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# depthwise convolutions


def depthwise_conv2d(x: Tensor, k: Tensor, stride: Tuple[int, int] = (1, 1),
                     padding: str = "same") -> Tensor:
    """Per-channel 2-d convolution. x: (C, F, T) or (N, C, F, T); k: (C, kf, kt)."""
    _check_float(x, "depthwise_conv2d", "x")
    _check_float(k, "depthwise_conv2d", "k")
    _check_same_dtype("depthwise_conv2d", x, k)
    if k.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: k must be (C, kf, kt), got {k.shape}")
    if x.ndim not in (3, 4):
        raise ShapeError(
            f"depthwise_conv2d: x must be (C, F, T) or (N, C, F, T), got {x.shape}")
    if padding not in ("same", "valid"):
        raise ArgumentError(f"depthwise_conv2d: bad padding {padding!r}")
    sf, st = int(stride[0]), int(stride[1])
    if sf < 1 or st < 1:
        raise ArgumentError(f"depthwise_conv2d: strides must be >= 1, got {stride}")
    batched = x.ndim == 4
    c, kf, kt = k.shape
    xs = x.shape if batched else (1,) + x.shape
    if xs[1] != c:
        raise ShapeError(
            f"depthwise_conv2d: x has {xs[1]} channels but k has {c}")
    f_in, t_in = xs[2], xs[3]
    if padding == "same":
        pf = same_pad(f_in, kf, sf)
        pt = same_pad(t_in, kt, st)
    else:
        if f_in < kf or t_in < kt:
            raise ShapeError(
                f"depthwise_conv2d: valid padding needs input >= kernel, "
                f"got {(f_in, t_in)} vs {(kf, kt)}")
        pf = pt = (0, 0)
    fp, tp = f_in + pf[0] + pf[1], t_in + pt[0] + pt[1]

    def pad_input():
        x4 = x.data if batched else x.data[None]
        return np.ascontiguousarray(
            np.pad(x4, ((0, 0), (0, 0), pf, pt)))

    def fwd():
        out = kernels.active.dwconv2d_forward(
            pad_input(), np.ascontiguousarray(k.data), sf, st)
        return out if batched else out[0]

    xp = pad_input()
    out_data = kernels.active.dwconv2d_forward(
        xp, np.ascontiguousarray(k.data), sf, st)

    def bwd(g):
        g4 = np.ascontiguousarray(g if batched else g[None])
        gx = gk = None
        if x.requires_grad:
            gxp = kernels.active.dwconv2d_backward_x(
                g4, np.ascontiguousarray(k.data), sf, st, fp, tp)
            gx = np.ascontiguousarray(
                gxp[:, :, pf[0]:pf[0] + f_in, pt[0]:pt[0] + t_in])
            if not batched:
                gx = gx[0]
        if k.requires_grad:
            gk = kernels.active.dwconv2d_backward_k(xp, g4, sf, st, kf, kt)
        return gx, gk

    return apply_op("depthwise_conv2d", (x, k),
                    out_data if batched else out_data[0], bwd, fwd)


def depthwise_conv1d(x: Tensor, k: Tensor, stride: int = 1,
                     padding: str = "same") -> Tensor:
    """Per-channel 1-d convolution over the last axis.

    x: (C, T) or (N, C, T); k: (C, kt).  Implemented as a height-1 2-d
    depthwise convolution so both backends are reused unchanged.
    """
    _check_float(x, "depthwise_conv1d", "x")
    _check_float(k, "depthwise_conv1d", "k")
    if k.ndim != 2:
        raise ShapeError(f"depthwise_conv1d: k must be (C, kt), got {k.shape}")
    if x.ndim not in (2, 3):
        raise ShapeError(
            f"depthwise_conv1d: x must be (C, T) or (N, C, T), got {x.shape}")
    c, kt = k.shape
    batched = x.ndim == 3
    xr = reshape(x, x.shape[:-1] + (1, x.shape[-1]))
    kr = reshape(k, (c, 1, kt))
    out = depthwise_conv2d(xr, kr, stride=(1, int(stride)), padding=padding)
    return reshape(out, out.shape[:-2] + (out.shape[-1],))


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Learnable scale/shift plus running statistics for one BN layer."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32, name: str = "bn"):
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True,
                            name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True,
                           name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Normalize over all axes except the channel axis (axis 1).

    ``mode="train"`` uses batch statistics (population variance) and updates
    the running estimates once per call, at graph-construction time — a
    later tape replay does not touch them.  ``mode="eval"`` uses the stored
    running statistics.
    """
    _check_float(x, "batch_norm", "x")
    if mode not in ("train", "eval"):
        raise ArgumentError(f"batch_norm: mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim < 2:
        raise ShapeError(f"batch_norm: x must be (N, C, ...), got {x.shape}")
    if x.shape[0] == 0:
        raise ArgumentError("batch_norm: batch of size 0")
    c = x.shape[1]
    if c != state.channels:
        raise ShapeError(f"batch_norm: x has {c} channels, state has {state.channels}")
    _check_same_dtype("batch_norm", x, state.gamma, state.beta)
    gamma, beta, eps = state.gamma, state.beta, state.eps
    axes = (0,) + tuple(range(2, x.ndim))
    cshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.data.size // c

    def batch_stats(arr):
        mu = arr.mean(axis=axes, dtype=np.float64)
        var = ((arr - mu.reshape(cshape)) ** 2).mean(axis=axes, dtype=np.float64)
        return mu.astype(arr.dtype), var.astype(arr.dtype)

    if mode == "train":
        mu, var = batch_stats(x.data)
        mom = state.momentum
        state.running_mean = ((1 - mom) * state.running_mean + mom * mu).astype(
            x.dtype)
        state.running_var = ((1 - mom) * state.running_var + mom * var).astype(
            x.dtype)
    else:
        mu, var = state.running_mean, state.running_var

    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(cshape)) * ivar.reshape(cshape)

    def fwd():
        if mode == "train":
            mu_f, var_f = batch_stats(x.data)
        else:
            mu_f, var_f = state.running_mean, state.running_var
        iv = 1.0 / np.sqrt(var_f + eps)
        xh = (x.data - mu_f.reshape(cshape)) * iv.reshape(cshape)
        return gamma.data.reshape(cshape) * xh + beta.data.reshape(cshape)

    out_data = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)

    def bwd(g):
        gxhat = g * gamma.data.reshape(cshape)
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if mode == "eval":
            gx = gxhat * ivar.reshape(cshape)
        else:
            s1 = gxhat.sum(axis=axes).reshape(cshape)
            s2 = (gxhat * xhat).sum(axis=axes).reshape(cshape)
            gx = (ivar.reshape(cshape) / m) * (m * gxhat - s1 - xhat * s2)
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return apply_op("batch_norm", (x, gamma, beta), out_data, bwd, fwd)


# ---------------------------------------------------------------------------
# pooling and broadcast scaling


def global_average_pool(x: Tensor) -> Tensor:
    """(N, C, F, T) -> (N, C); float64 accumulation, cast back to x dtype."""
    _check_float(x, "global_average_pool", "x")
    if x.ndim != 4:
        raise ShapeError(f"global_average_pool: x must be (N, C, F, T), got {x.shape}")
    inv = 1.0 / (x.shape[2] * x.shape[3])
    fwd = lambda: np.mean(x.data, axis=(2, 3), dtype=np.float64).astype(x.dtype)
    def bwd(g):
        return (np.broadcast_to((g * inv)[:, :, None, None], x.shape)
                .astype(x.dtype, copy=True),)
    return apply_op("global_average_pool", (x,), fwd(), bwd, fwd)


def average_pool_time(x: Tensor) -> Tensor:
    """(N, C, F, T) or (C, F, T) -> mean over the time axis."""
    _check_float(x, "average_pool_time", "x")
    if x.ndim not in (3, 4):
        raise ShapeError(
            f"average_pool_time: x must be (C, F, T) or (N, C, F, T), got {x.shape}")
    inv = 1.0 / x.shape[-1]
    fwd = lambda: np.mean(x.data, axis=-1, dtype=np.float64).astype(x.dtype)
    def bwd(g):
        return (np.broadcast_to((g * inv)[..., None], x.shape)
                .astype(x.dtype, copy=True),)
    return apply_op("average_pool_time", (x,), fwd(), bwd, fwd)


def broadcast_scale(x: Tensor, w: Tensor) -> Tensor:
    """Multiply x by w, where w's shape is a leading prefix of x's shape.

    Covers per-channel gating ((N,C) x (N,C,F,T)) and per-channel-frequency
    gating ((N,C,F) x (N,C,F,T)).
    """
    _check_float(x, "broadcast_scale", "x")
    _check_float(w, "broadcast_scale", "w")
    _check_same_dtype("broadcast_scale", x, w)
    if w.ndim >= x.ndim or x.shape[:w.ndim] != w.shape:
        raise ShapeError(
            f"broadcast_scale: w shape {w.shape} is not a strict prefix of "
            f"x shape {x.shape}")
    extra = tuple(range(w.ndim, x.ndim))
    wshape = w.shape + (1,) * (x.ndim - w.ndim)
    fwd = lambda: x.data * w.data.reshape(wshape)
    def bwd(g):
        gx = g * w.data.reshape(wshape)
        gw = (g * x.data).sum(axis=extra)
        return gx, gw
    return apply_op("broadcast_scale", (x, w), fwd(), bwd, fwd)


def repeat_channels(x: Tensor, m: int) -> Tensor:
    """(N, 1, ...) -> (N, m, ...) by copying; gradient sums over the copies."""
    _check_float(x, "repeat_channels", "x")
    if x.ndim < 2 or x.shape[1] != 1:
        raise ShapeError(f"repeat_channels: x must be (N, 1, ...), got {x.shape}")
    m = int(m)
    if m < 1:
        raise ArgumentError(f"repeat_channels: m must be >= 1, got {m}")
    fwd = lambda: np.repeat(x.data, m, axis=1)
    bwd = lambda g: (g.sum(axis=1, keepdims=True),)
    return apply_op("repeat_channels", (x,), fwd(), bwd, fwd)


def sum_channels(x: Tensor) -> Tensor:
    """Sum over the channel axis, keeping it: (N, C, ...) -> (N, 1, ...)."""
    _check_float(x, "sum_channels", "x")
    if x.ndim < 2:
        raise ShapeError(f"sum_channels: x must be (N, C, ...), got {x.shape}")
    fwd = lambda: x.data.sum(axis=1, keepdims=True)
    bwd = lambda g: (np.broadcast_to(g, x.shape).copy(),)
    return apply_op("sum_channels", (x,), fwd(), bwd, fwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias: x (N, C, ...) + b (C,)."""
    _check_float(x, "add_bias", "x")
    _check_float(b, "add_bias", "b")
    _check_same_dtype("add_bias", x, b)
    if x.ndim < 2 or b.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: x {x.shape} vs b {b.shape}")
    cshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    fwd = lambda: x.data + b.data.reshape(cshape)
    bwd = lambda g: (g, g.sum(axis=axes))
    return apply_op("add_bias", (x, b), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: Tensor, target_weights) -> Tensor:
    """Mean cross-entropy between softmax(logits) and per-class weights.

    ``target_weights`` is (N, K) with rows summing to 1 (one-hot or mixup
    blends).  Returns a scalar tensor; the gradient w.r.t. logits is
    (softmax - weights) / N.
    """
    _check_float(logits, "softmax_cross_entropy", "logits")
    w = np.asarray(target_weights, dtype=logits.dtype)
    if logits.ndim != 2:
        raise ShapeError(
            f"softmax_cross_entropy: logits must be (N, K), got {logits.shape}")
    if w.shape != logits.shape:
        raise ShapeError(
            f"softmax_cross_entropy: weights {w.shape} != logits {logits.shape}")
    if np.any(w < 0):
        raise ArgumentError("softmax_cross_entropy: negative target weight")
    sums = w.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-4):
        raise ArgumentError(
            "softmax_cross_entropy: target weight rows must sum to 1")
    n = logits.shape[0]

    def fwd():
        z = logits.data
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        per = lse - (w * z).sum(axis=1)
        return np.asarray(per.mean(), dtype=z.dtype)

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)

    def bwd(g):
        return (g * (probs - w) / n,)

    return apply_op("softmax_cross_entropy", (logits,), fwd(), bwd, fwd)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Stable softmax for plain arrays (prediction-time helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)
