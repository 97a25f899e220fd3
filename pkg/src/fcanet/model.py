"""Network architecture: ConvMixer-style blocks with lightweight attention.

Layout (all convolutions stride 1, same padding)::

    input (N, 1, F, T)
      stem: pointwise conv 1 -> c_stem
      n_pre  pre-conv blocks   (temporal DWS conv + BN + Swish)
      n_blocks mixer blocks    (see ConvMixerBlock)
      n_post post-conv blocks  (temporal DWS conv + BN + Swish)
      global average pool over (F, T) -> linear -> logits (N, n_classes)

Attention modules (SE / ECA / C2D) can be inserted after each pre block
("pre"), each mixer block ("all"), each post block ("post") or once before
the classifier ("final").  Depthwise kernels never carry a bias; pointwise
convolutions and linear layers do.

Footprint accounting (returned by :func:`count_footprint`): parameters are
every trainable scalar; multiply-accumulates count one MAC per multiply in
convolutions and linear layers, with BN, activations, pooling and gating
rescales counted as zero.
"""

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .ops import BatchNormState
from .seeding import derive_seed
from .tensor import Tensor

ATTENTION_KINDS = ("none", "se", "eca", "c2d")
# placements that actually insert modules; "none" disables attention outright
INSERT_PLACEMENTS = ("pre", "post", "all", "final")
PLACEMENTS = INSERT_PLACEMENTS + ("none",)


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    in_freq: int = 40
    in_time: int = 101
    c_stem: int = 3
    n_pre: int = 1
    n_blocks: int = 5
    c_blk: int = 3
    k_freq: int = 5
    k_time: int = 5
    k_time1d: int = 9
    r_mix: float = 1.0
    n_post: int = 1
    attention: str = "c2d"
    placement: str = "all"
    r_se: int = 8
    c2d_mid: int = 4
    n_classes: int = 12

    def validate(self) -> None:
        positive = ("in_channels", "in_freq", "in_time", "c_stem", "n_pre",
                    "n_blocks", "c_blk", "k_freq", "k_time", "k_time1d",
                    "n_post", "r_se", "c2d_mid", "n_classes")
        for attr in positive:
            v = getattr(self, attr)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"model config: {attr} must be a positive "
                                  f"integer, got {v!r}")
        if not (0 < self.r_mix <= 4):
            raise ConfigError(f"model config: r_mix must be in (0, 4], got {self.r_mix}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"model config: attention must be one of "
                              f"{ATTENTION_KINDS}, got {self.attention!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"model config: placement must be one of "
                              f"{PLACEMENTS}, got {self.placement!r}")
        if (self.placement == "none") != (self.attention == "none"):
            raise ConfigError(
                f"model config: placement 'none' and attention 'none' go "
                f"together (got attention={self.attention!r}, "
                f"placement={self.placement!r})")


def tiny_config(attention: str = "c2d", placement: str = "all") -> ModelConfig:
    """Reduced architecture for gradient checks and fast tests."""
    return ModelConfig(in_freq=8, in_time=12, c_stem=4, n_pre=1, n_blocks=2,
                       c_blk=8, k_freq=3, k_time=3, k_time1d=3, r_mix=0.5,
                       n_post=1, attention=attention, placement=placement,
                       r_se=4, c2d_mid=2)


def _mix_hidden(r: float, size: int) -> int:
    return max(1, int(round(r * size)))


def eca_kernel_size(channels: int) -> int:
    """Nearest odd integer to log2(C)/2 + 1/2; ties round down; at least 1."""
    t = math.log2(channels) / 2.0 + 0.5
    lo = int(math.floor(t))
    if lo % 2 == 0:
        lo -= 1
    hi = lo + 2
    if lo < 1:
        return max(1, hi) if hi >= 1 else 1
    return lo if (t - lo) <= (hi - t) else hi


# ---------------------------------------------------------------------------
# module machinery


class Module:
    """Minimal composable layer: owns tensors, children, and a MAC estimate."""

    def __init__(self, name: str):
        self.name = name
        self.training = True
        self._children: List["Module"] = []
        self._params: List[Tuple[str, Tensor]] = []
        self._bn: List[BatchNormState] = []

    def child(self, m: "Module") -> "Module":
        self._children.append(m)
        return m

    def param(self, name: str, t: Tensor) -> Tensor:
        t.name = f"{self.name}.{name}"
        self._params.append((name, t))
        return t

    def bn_state(self, state: BatchNormState) -> BatchNormState:
        self._bn.append(state)
        return state

    def named_params(self):
        for name, t in self._params:
            yield f"{self.name}.{name}", t
        for c in self._children:
            yield from c.named_params()

    def bn_states(self):
        for st in self._bn:
            yield self.name, st
        for c in self._children:
            yield from c.bn_states()

    def train(self) -> None:
        self.training = True
        for c in self._children:
            c.train()

    def eval(self) -> None:
        self.training = False
        for c in self._children:
            c.eval()

    def param_count(self) -> int:
        return sum(t.data.size for _, t in self.named_params())

    def own_macs(self) -> int:
        return 0

    def mac_count(self) -> int:
        return self.own_macs() + sum(c.mac_count() for c in self._children)

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def _uniform(rng, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _zeros(shape, dtype) -> np.ndarray:
    # biases start at zero so a freshly initialized classifier emits
    # near-uniform class probabilities (initial CE ~ ln n_classes)
    return np.zeros(shape, dtype=dtype)


class PointwiseConv(Module):
    def __init__(self, rng, name, c_in, c_out, fsize, tsize, dtype, bias=True):
        super().__init__(name)
        self.w = self.param("w", Tensor(_uniform(rng, c_in, (c_out, c_in), dtype),
                                        requires_grad=True))
        self.b = None
        if bias:
            self.b = self.param("b", Tensor(_zeros((c_out,), dtype),
                                            requires_grad=True))
        self._macs = c_in * c_out * fsize * tsize

    def own_macs(self) -> int:
        return self._macs

    def forward(self, x):
        return ops.pointwise_conv(x, self.w, self.b, batched=True)


class DepthwiseConv2d(Module):
    """Per-channel (kf, kt) convolution, stride 1, same padding, no bias."""

    def __init__(self, rng, name, channels, kf, kt, fsize, tsize, dtype):
        super().__init__(name)
        self.k = self.param("k", Tensor(
            _uniform(rng, kf * kt, (channels, kf, kt), dtype), requires_grad=True))
        self._macs = channels * kf * kt * fsize * tsize

    def own_macs(self) -> int:
        return self._macs

    def forward(self, x):
        return ops.depthwise_conv2d(x, self.k)


class BatchNorm(Module):
    def __init__(self, name, channels, dtype):
        super().__init__(name)
        self.state = self.bn_state(BatchNormState(channels, dtype=dtype,
                                                  name=name))
        self._params.append(("gamma", self.state.gamma))
        self._params.append(("beta", self.state.beta))

    def forward(self, x):
        return ops.batch_norm(x, self.state, "train" if self.training else "eval")


class Linear(Module):
    def __init__(self, rng, name, d_in, d_out, dtype, positions=1):
        super().__init__(name)
        self.w = self.param("w", Tensor(_uniform(rng, d_in, (d_out, d_in), dtype),
                                        requires_grad=True))
        self.b = self.param("b", Tensor(_zeros((d_out,), dtype),
                                        requires_grad=True))
        self._macs = d_in * d_out * positions

    def own_macs(self) -> int:
        return self._macs

    def forward(self, x):
        return ops.linear(x, self.w, self.b)


class DWSConv2d(Module):
    """Depthwise (kf, kt) followed by pointwise channel mixing."""

    def __init__(self, rng, name, channels, kf, kt, fsize, tsize, dtype):
        super().__init__(name)
        self.dw = self.child(DepthwiseConv2d(rng, f"{name}.dw", channels, kf, kt,
                                             fsize, tsize, dtype))
        self.pw = self.child(PointwiseConv(rng, f"{name}.pw", channels, channels,
                                           fsize, tsize, dtype))

    def forward(self, x):
        return self.pw(self.dw(x))


class ConvBlock(Module):
    """Temporal DWS conv + BN + Swish (the pre/post blocks)."""

    def __init__(self, rng, name, c_in, c_out, k_time1d, fsize, tsize, dtype):
        super().__init__(name)
        self.dw = self.child(DepthwiseConv2d(rng, f"{name}.dw", c_in, 1, k_time1d,
                                             fsize, tsize, dtype))
        self.pw = self.child(PointwiseConv(rng, f"{name}.pw", c_in, c_out,
                                           fsize, tsize, dtype))
        self.bn = self.child(BatchNorm(f"{name}.bn", c_out, dtype))

    def forward(self, x):
        return ops.swish(self.bn(self.pw(self.dw(x))))


class MixerMlp(Module):
    """Two-layer MLP applied along the last axis, weights shared elsewhere."""

    def __init__(self, rng, name, d, hidden, positions, dtype):
        super().__init__(name)
        self.fc1 = self.child(Linear(rng, f"{name}.fc1", d, hidden, dtype,
                                     positions=positions))
        self.fc2 = self.child(Linear(rng, f"{name}.fc2", hidden, d, dtype,
                                     positions=positions))

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class Mixer(Module):
    """Position mixing: temporal MLP (per channel/frequency, along T) plus
    frequency MLP (per channel/time, along F); the two results are summed."""

    def __init__(self, rng, name, channels, fsize, tsize, r_mix, dtype):
        super().__init__(name)
        ht = _mix_hidden(r_mix, tsize)
        hf = _mix_hidden(r_mix, fsize)
        self.temporal = self.child(MixerMlp(rng, f"{name}.t", tsize, ht,
                                            channels * fsize, dtype))
        self.freq = self.child(MixerMlp(rng, f"{name}.f", fsize, hf,
                                        channels * tsize, dtype))

    def forward(self, x):
        yt = self.temporal(x)
        xf = ops.moveaxis(x, 2, 3)            # (N, C, T, F)
        yf = ops.moveaxis(self.freq(xf), 2, 3)
        return ops.add(yt, yf)


class ConvMixerBlock(Module):
    """Residual block: two 2-d DWS convs, two temporal DWS convs with BN,
    and a position mixer; output = x + y1 + mixer(y2)."""

    def __init__(self, rng, name, channels, cfg: ModelConfig, dtype):
        super().__init__(name)
        fs, ts = cfg.in_freq, cfg.in_time
        self.f = self.child(DWSConv2d(rng, f"{name}.f", channels, cfg.k_freq,
                                      cfg.k_time, fs, ts, dtype))
        self.f1 = self.child(DWSConv2d(rng, f"{name}.f1", channels, cfg.k_freq,
                                       cfg.k_time, fs, ts, dtype))
        self.f2a = self.child(DWSConv2d1d(rng, f"{name}.f2a", channels,
                                          cfg.k_time1d, fs, ts, dtype))
        self.bn_a = self.child(BatchNorm(f"{name}.bn_a", channels, dtype))
        self.f2b = self.child(DWSConv2d1d(rng, f"{name}.f2b", channels,
                                          cfg.k_time1d, fs, ts, dtype))
        self.bn_b = self.child(BatchNorm(f"{name}.bn_b", channels, dtype))
        self.mixer = self.child(Mixer(rng, f"{name}.mix", channels, fs, ts,
                                      cfg.r_mix, dtype))

    def forward(self, x):
        z = ops.swish(self.f1(ops.swish(self.f(x))))
        y1 = ops.swish(self.bn_a(self.f2a(z)))
        y2 = ops.swish(self.bn_b(self.f2b(y1)))
        return ops.add(ops.add(x, y1), self.mixer(y2))


class DWSConv2d1d(Module):
    """Temporal depthwise (1, kt) conv followed by pointwise mixing."""

    def __init__(self, rng, name, channels, kt, fsize, tsize, dtype):
        super().__init__(name)
        self.dw = self.child(DepthwiseConv2d(rng, f"{name}.dw", channels, 1, kt,
                                             fsize, tsize, dtype))
        self.pw = self.child(PointwiseConv(rng, f"{name}.pw", channels, channels,
                                           fsize, tsize, dtype))

    def forward(self, x):
        return self.pw(self.dw(x))


# ---------------------------------------------------------------------------
# attention modules


class SEAttention(Module):
    """Squeeze-and-excitation: GAP -> bottleneck MLP -> sigmoid channel gate."""

    def __init__(self, rng, name, channels, r_se, dtype):
        super().__init__(name)
        hidden = max(1, channels // r_se)
        self.fc1 = self.child(Linear(rng, f"{name}.fc1", channels, hidden, dtype))
        self.fc2 = self.child(Linear(rng, f"{name}.fc2", hidden, channels, dtype))

    def forward(self, x):
        s = ops.global_average_pool(x)
        gate = ops.sigmoid(self.fc2(ops.relu(self.fc1(s))))
        return ops.broadcast_scale(x, gate)


class ECAAttention(Module):
    """Efficient channel attention: 1-d conv across the channel axis."""

    def __init__(self, rng, name, channels, dtype):
        super().__init__(name)
        self.ksize = eca_kernel_size(channels)
        self.k = self.param("k", Tensor(
            _uniform(rng, self.ksize, (1, self.ksize), dtype), requires_grad=True))
        self._macs = channels * self.ksize

    def own_macs(self) -> int:
        return self._macs

    def forward(self, x):
        n, c = x.shape[0], x.shape[1]
        s = ops.global_average_pool(x)                 # (N, C)
        s = ops.reshape(s, (n, 1, c))                  # single "channel" of length C
        a = ops.depthwise_conv1d(s, self.k)
        gate = ops.sigmoid(ops.reshape(a, (n, c)))
        return ops.broadcast_scale(x, gate)


class C2DAttention(Module):
    """Channel-frequency attention from the time-pooled (C, F) map.

    The pooled map is treated as a one-channel image, passed through a
    3x3 conv -> BN -> ReLU -> 3x3 conv -> sigmoid, and the resulting (C, F)
    gate rescales the input across time.
    """

    def __init__(self, rng, name, channels, fsize, mid, dtype):
        super().__init__(name)
        self.mid = mid
        self.k1 = self.param("k1", Tensor(_uniform(rng, 9, (mid, 3, 3), dtype),
                                          requires_grad=True))
        self.b1 = self.param("b1", Tensor(_zeros((mid,), dtype),
                                          requires_grad=True))
        self.bn = self.child(BatchNorm(f"{name}.bn", mid, dtype))
        self.k2 = self.param("k2", Tensor(_uniform(rng, 9 * mid, (mid, 3, 3), dtype),
                                          requires_grad=True))
        self.b2 = self.param("b2", Tensor(_zeros((1,), dtype),
                                          requires_grad=True))
        # two full 3x3 convs (1->mid and mid->1) on the (C, F) plane
        self._macs = 18 * mid * channels * fsize

    def own_macs(self) -> int:
        return self._macs

    def forward(self, x):
        n, c, f = x.shape[0], x.shape[1], x.shape[2]
        z = ops.average_pool_time(x)                   # (N, C, F)
        z = ops.reshape(z, (n, 1, c, f))
        h = ops.repeat_channels(z, self.mid)
        h = ops.add_bias(ops.depthwise_conv2d(h, self.k1), self.b1)
        h = ops.relu(self.bn(h))
        # mid -> 1 full conv == depthwise taps summed over channels
        g = ops.add_bias(ops.sum_channels(ops.depthwise_conv2d(h, self.k2)),
                         self.b2)
        gate = ops.reshape(ops.sigmoid(g), (n, c, f))
        return ops.broadcast_scale(x, gate)


def make_attention(rng, name: str, cfg: ModelConfig, dtype) -> Optional[Module]:
    if cfg.attention == "none":
        return None
    if cfg.attention == "se":
        return SEAttention(rng, name, cfg.c_blk, cfg.r_se, dtype)
    if cfg.attention == "eca":
        return ECAAttention(rng, name, cfg.c_blk, dtype)
    if cfg.attention == "c2d":
        return C2DAttention(rng, name, cfg.c_blk, cfg.in_freq, cfg.c2d_mid, dtype)
    raise ConfigError(f"unknown attention kind {cfg.attention!r}")


# ---------------------------------------------------------------------------
# full network


class Network(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        super().__init__("net")
        self.config = cfg
        self.dtype = dtype
        rng = np.random.default_rng(derive_seed(seed, "model-init"))
        fs, ts = cfg.in_freq, cfg.in_time

        def site_attention(site: str) -> Optional[Module]:
            # attention weights come from a per-site stream so the backbone
            # init is identical across attention variants of the same seed
            att_rng = np.random.default_rng(
                derive_seed(seed, "attention-init", site))
            att = make_attention(att_rng, site, cfg, dtype)
            if att is not None:
                self.child(att)
            return att

        self.stem = self.child(PointwiseConv(rng, "net.stem", cfg.in_channels,
                                             cfg.c_stem, fs, ts, dtype))
        self.pre: List[Module] = []
        self.pre_att: List[Optional[Module]] = []
        c_in = cfg.c_stem
        for i in range(cfg.n_pre):
            self.pre.append(self.child(ConvBlock(
                rng, f"net.pre{i}", c_in, cfg.c_blk, cfg.k_time1d, fs, ts, dtype)))
            c_in = cfg.c_blk
            self.pre_att.append(site_attention(f"net.pre{i}.att")
                                if cfg.placement == "pre" else None)

        self.blocks: List[Module] = []
        self.block_att: List[Optional[Module]] = []
        for i in range(cfg.n_blocks):
            self.blocks.append(self.child(ConvMixerBlock(
                rng, f"net.blk{i}", cfg.c_blk, cfg, dtype)))
            self.block_att.append(site_attention(f"net.blk{i}.att")
                                  if cfg.placement == "all" else None)

        self.post: List[Module] = []
        self.post_att: List[Optional[Module]] = []
        for i in range(cfg.n_post):
            self.post.append(self.child(ConvBlock(
                rng, f"net.post{i}", cfg.c_blk, cfg.c_blk, cfg.k_time1d,
                fs, ts, dtype)))
            self.post_att.append(site_attention(f"net.post{i}.att")
                                 if cfg.placement == "post" else None)

        self.final_att = (site_attention("net.final.att")
                          if cfg.placement == "final" else None)

        self.head = self.child(Linear(rng, "net.head", cfg.c_blk,
                                      cfg.n_classes, dtype))

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        want = (cfg.in_channels, cfg.in_freq, cfg.in_time)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(
                f"network input must be (N, {want[0]}, {want[1]}, {want[2]}), "
                f"got {x.shape}")
        h = self.stem(x)
        for blk, att in zip(self.pre, self.pre_att):
            h = blk(h)
            if att is not None:
                h = att(h)
        for blk, att in zip(self.blocks, self.block_att):
            h = blk(h)
            if att is not None:
                h = att(h)
        for blk, att in zip(self.post, self.post_att):
            h = blk(h)
            if att is not None:
                h = att(h)
        if self.final_att is not None:
            h = self.final_att(h)
        pooled = ops.global_average_pool(h)
        return self.head(pooled)


def build_network(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Network:
    return Network(cfg, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# footprint accounting


@dataclass
class FootprintReport:
    params: int
    macs: int
    by_module: List[Tuple[str, int, int]]

    def __str__(self):
        return f"params={self.params} macs={self.macs}"


def count_footprint(net: Network) -> FootprintReport:
    rows = [(child.name, child.param_count(), child.mac_count())
            for child in net._children]
    return FootprintReport(params=net.param_count(), macs=net.mac_count(),
                           by_module=rows)


def footprint_table(base: ModelConfig):
    """Footprints of the attention/placement grid plus the plain baseline.

    Returns rows of (attention, placement, params, macs).  The baseline row
    has attention "none" and placement "-".
    """
    rows = []
    none_cfg = replace(base, attention="none", placement="none")
    net = build_network(none_cfg, seed=0)
    rep = count_footprint(net)
    rows.append(("none", "-", rep.params, rep.macs))
    for att in ("se", "eca", "c2d"):
        for place in INSERT_PLACEMENTS:
            cfg = replace(base, attention=att, placement=place)
            rep = count_footprint(build_network(cfg, seed=0))
            rows.append((att, place, rep.params, rep.macs))
    return rows
