"""Finite-difference verification of analytic gradients.

``grad_check`` compares tape gradients against central differences.  The
loss builder ``f`` must rebuild its graph from the current parameter values
on every call — the checker perturbs ``p.data`` in place between calls.
Use float64 parameters; float32 finite differences drown in rounding noise.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .errors import ArgumentError
from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_coords: int
    worst_param: str
    worst_index: tuple
    worst_analytic: float
    worst_numeric: float

    def __str__(self):
        return (f"max_rel_err={self.max_rel_err:.3e} over {self.n_coords} coords "
                f"(worst: {self.worst_param}{list(self.worst_index)} "
                f"analytic={self.worst_analytic:.6e} numeric={self.worst_numeric:.6e})")


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5, max_coords_per_param: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> GradCheckReport:
    """Return the worst relative error between analytic and numeric grads.

    Relative error per coordinate is |a - n| / max(1, |a|): coordinates with
    gradients of order one are held to a relative tolerance, while near-zero
    gradients (which central differences cannot resolve below the loss's own
    floating-point noise floor) degrade gracefully to an absolute tolerance.
    Before measuring anything the checker evaluates ``f`` twice and requires
    bit-identical results; a nondeterministic loss makes finite differences
    meaningless, so that raises an error marking the check unusable.
    """
    params = list(params)
    first = f().data
    second = f().data
    if first.tobytes() != second.tobytes():
        raise ArgumentError(
            "grad_check unusable: loss function is not deterministic "
            "(two evaluations differ bit-wise)")

    for p in params:
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ArgumentError(f"grad_check: loss must be scalar, got {loss.shape}")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = GradCheckReport(0.0, 0, "", (), 0.0, 0.0)
    n_checked = 0
    for pi, p in enumerate(params):
        coords = list(np.ndindex(p.data.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            pick = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in pick]
        for idx in coords:
            orig = p.data[idx]
            p.data[idx] = orig + eps
            lp = float(f().data)
            p.data[idx] = orig - eps
            lm = float(f().data)
            p.data[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            a = float(analytic[pi][idx])
            rel = abs(a - numeric) / max(1.0, abs(a))
            n_checked += 1
            if rel > worst.max_rel_err:
                name = p.name or f"param{pi}"
                worst = GradCheckReport(rel, 0, name, idx, a, numeric)
    worst.n_coords = n_checked
    return worst


# ---------------------------------------------------------------------------
# ready-made cases (used by the CLI gradcheck command and the test suite)


def primitive_cases(seed: int):
    """Return (name, loss_builder, params) for every differentiable primitive.

    Each loss is Σ(out * W) with a fixed random W, so every output element
    gets a distinct sensitivity and repeated calls are bit-identical.
    """
    rng = np.random.default_rng(seed)

    def t(shape, away_from_zero=False):
        a = rng.standard_normal(shape)
        if away_from_zero:
            a = a + 0.2 * np.sign(a) + (a == 0) * 0.2
        return Tensor(a, requires_grad=True)

    cases = []

    def case(name, build_out, params):
        w = Tensor(rng.standard_normal(build_out().shape))
        cases.append((name, lambda: ops.sum_all(ops.mul(build_out(), w)), params))

    x, y = t((3, 4)), t((3, 4))
    case("add", lambda: ops.add(x, y), [x, y])

    x2, y2 = t((2, 5)), t((2, 5))
    case("mul", lambda: ops.mul(x2, y2), [x2, y2])

    xs = t((4, 3))
    case("scale", lambda: ops.scale(xs, -1.7), [xs])

    xr = t((2, 3, 4))
    case("reshape", lambda: ops.reshape(xr, (4, 6)), [xr])

    xm = t((2, 3, 4))
    case("moveaxis", lambda: ops.moveaxis(xm, 1, 2), [xm])

    xsum = t((3, 5))
    cases.append(("sum_all", lambda: ops.sum_all(xsum), [xsum]))

    xmean = t((4, 2))
    cases.append(("mean_all", lambda: ops.mean_all(xmean), [xmean]))

    for kind in ("relu", "sigmoid", "swish", "gelu"):
        xa = t((3, 6), away_from_zero=(kind == "relu"))
        case(kind, lambda xa=xa, kind=kind: ops.activation(xa, kind), [xa])

    xl, wl, bl = t((5, 3)), t((4, 3)), t((4,))
    case("linear", lambda: ops.linear(xl, wl, bl), [xl, wl, bl])

    xp, wp, bp = t((2, 3, 4, 5)), t((6, 3)), t((6,))
    case("pointwise_conv",
         lambda: ops.pointwise_conv(xp, wp, bp, batched=True), [xp, wp, bp])

    xpu, wpu = t((3, 4, 5)), t((2, 3))
    case("pointwise_conv_unbatched",
         lambda: ops.pointwise_conv(xpu, wpu, batched=False), [xpu, wpu])

    xc, kc = t((2, 3, 6, 7)), t((3, 3, 3))
    case("depthwise_conv2d", lambda: ops.depthwise_conv2d(xc, kc), [xc, kc])

    xc2, kc2 = t((2, 2, 7, 8)), t((2, 3, 3))
    case("depthwise_conv2d_stride2",
         lambda: ops.depthwise_conv2d(xc2, kc2, stride=(2, 2)), [xc2, kc2])

    xcv, kcv = t((2, 2, 6, 6)), t((2, 3, 3))
    case("depthwise_conv2d_valid",
         lambda: ops.depthwise_conv2d(xcv, kcv, padding="valid"), [xcv, kcv])

    x1, k1 = t((2, 3, 9)), t((3, 5))
    case("depthwise_conv1d", lambda: ops.depthwise_conv1d(x1, k1), [x1, k1])

    xb = t((4, 3, 2, 5))
    bn_tr = ops.BatchNormState(3, dtype=np.float64)
    bn_tr.gamma.data = rng.standard_normal(3) + 1.5
    bn_tr.beta.data = rng.standard_normal(3)
    case("batch_norm_train", lambda: ops.batch_norm(xb, bn_tr, "train"),
         [xb, bn_tr.gamma, bn_tr.beta])

    xbe = t((3, 2, 4))
    bn_ev = ops.BatchNormState(2, dtype=np.float64)
    bn_ev.running_mean = rng.standard_normal(2) * 0.3
    bn_ev.running_var = 0.5 + rng.random(2)
    bn_ev.gamma.data = rng.standard_normal(2) + 1.0
    case("batch_norm_eval", lambda: ops.batch_norm(xbe, bn_ev, "eval"),
         [xbe, bn_ev.gamma, bn_ev.beta])

    xg = t((2, 3, 4, 5))
    case("global_average_pool", lambda: ops.global_average_pool(xg), [xg])

    xgt = t((2, 3, 4, 5))
    case("average_pool_time", lambda: ops.average_pool_time(xgt), [xgt])

    xw, ww = t((2, 3, 4, 5)), t((2, 3))
    case("broadcast_scale", lambda: ops.broadcast_scale(xw, ww), [xw, ww])

    xw3, ww3 = t((2, 3, 4, 5)), t((2, 3, 4))
    case("broadcast_scale_cf", lambda: ops.broadcast_scale(xw3, ww3), [xw3, ww3])

    xrep = t((2, 1, 3, 4))
    case("repeat_channels", lambda: ops.repeat_channels(xrep, 3), [xrep])

    xsc = t((2, 4, 3, 2))
    case("sum_channels", lambda: ops.sum_channels(xsc), [xsc])

    xab, bab = t((2, 3, 4)), t((3,))
    case("add_bias", lambda: ops.add_bias(xab, bab), [xab, bab])

    zlog = t((4, 6))
    wrows = rng.random((4, 6))
    wrows /= wrows.sum(axis=1, keepdims=True)
    cases.append(("softmax_cross_entropy",
                  lambda: ops.softmax_cross_entropy(zlog, wrows), [zlog]))

    return cases


def model_cases(seed: int):
    """(name, loss_builder, params) for tiny end-to-end networks.

    Covers every attention kind and placement on the reduced architecture.
    BatchNorm runs in eval mode with randomized running statistics so the
    loss is a fixed differentiable function of the parameters.
    """
    from .model import INSERT_PLACEMENTS, build_network, tiny_config

    combos = [(att, place) for att in ("se", "eca", "c2d")
              for place in INSERT_PLACEMENTS]
    combos.append(("none", "none"))
    cases = []
    for i, (att, place) in enumerate(combos):
        rng = np.random.default_rng(seed + 1000 + i)
        cfg = tiny_config(attention=att, placement=place)
        net = build_network(cfg, seed=seed + i, dtype=np.float64)
        net.eval()
        for _, state in net.bn_states():
            state.running_mean = rng.standard_normal(state.channels) * 0.2
            state.running_var = 0.5 + rng.random(state.channels)
        x = Tensor(rng.standard_normal((2, cfg.in_channels, cfg.in_freq,
                                        cfg.in_time)), requires_grad=True,
                   name="input")
        onehot = np.zeros((2, cfg.n_classes))
        onehot[0, rng.integers(cfg.n_classes)] = 1.0
        onehot[1, rng.integers(cfg.n_classes)] = 1.0

        def loss_fn(net=net, x=x, onehot=onehot):
            return ops.softmax_cross_entropy(net(x), onehot)

        params = [x] + [p for _, p in net.named_params()]
        cases.append((f"model[{att}/{place}]", loss_fn, params))
    return cases
