"""Architecture tests: config validation, footprint oracles, attention behavior."""

from dataclasses import replace

import numpy as np
import pytest

from fcanet.errors import ConfigError, ShapeError
from fcanet.model import (
    C2DAttention,
    ConvBlock,
    ConvMixerBlock,
    DepthwiseConv2d,
    ECAAttention,
    Mixer,
    ModelConfig,
    PointwiseConv,
    SEAttention,
    build_network,
    count_footprint,
    eca_kernel_size,
    footprint_table,
    make_attention,
    tiny_config,
)
from fcanet.tensor import Tensor


def zero_params(module):
    for _, p in module.named_params():
        p.data[...] = 0.0


def attention_sites(net):
    slots = list(net.pre_att) + list(net.block_att) + list(net.post_att)
    slots.append(net.final_att)
    return [m for m in slots if m is not None]


# ---------------------------------------------------------------------------
# config validation


def test_default_config_is_valid():
    ModelConfig().validate()


@pytest.mark.parametrize("field", ["in_freq", "c_stem", "n_blocks", "r_se",
                                   "n_classes"])
def test_positive_int_fields_rejected_when_nonpositive(field):
    cfg = replace(ModelConfig(), **{field: 0})
    with pytest.raises(ConfigError, match=field):
        cfg.validate()


def test_non_integer_field_rejected():
    with pytest.raises(ConfigError, match="c_blk"):
        replace(ModelConfig(), c_blk=2.5).validate()


@pytest.mark.parametrize("r", [0.0, -1.0, 4.5])
def test_r_mix_range_enforced(r):
    with pytest.raises(ConfigError, match="r_mix"):
        replace(ModelConfig(), r_mix=r).validate()


def test_unknown_attention_and_placement_rejected():
    with pytest.raises(ConfigError, match="attention"):
        replace(ModelConfig(), attention="simple").validate()
    with pytest.raises(ConfigError, match="placement"):
        replace(ModelConfig(), placement="everywhere").validate()


def test_none_attention_and_none_placement_must_pair():
    # disabling one side without the other leaves the config ambiguous
    with pytest.raises(ConfigError, match="none"):
        replace(ModelConfig(), attention="none", placement="all").validate()
    with pytest.raises(ConfigError, match="none"):
        replace(ModelConfig(), attention="se", placement="none").validate()
    replace(ModelConfig(), attention="none", placement="none").validate()


# ---------------------------------------------------------------------------
# footprint accounting: hand-counted oracles


def test_conv_block_param_hand_count():
    # depthwise (8,1,5) = 40, pointwise 8*16+16 = 144, BN 2*16 = 32 -> 216
    rng = np.random.default_rng(0)
    blk = ConvBlock(rng, "blk", 8, 16, 5, 4, 10, np.float32)
    assert blk.param_count() == 216


def test_pointwise_conv_mac_hand_count():
    # 4 in * 8 out * 10 positions = 320 multiplies
    rng = np.random.default_rng(0)
    pw = PointwiseConv(rng, "pw", 4, 8, 2, 5, np.float32)
    assert pw.own_macs() == 320


def test_temporal_depthwise_mac_hand_count():
    # 4 channels * 3 taps * 10 positions = 120 multiplies
    rng = np.random.default_rng(0)
    dw = DepthwiseConv2d(rng, "dw", 4, 1, 3, 1, 10, np.float32)
    assert dw.own_macs() == 120


@pytest.mark.parametrize("channels,expected", [
    (1, 1), (2, 1), (3, 1), (4, 1),
    (8, 1),        # log2(8)/2 + 0.5 = 2.0 is equidistant; ties round down
    (16, 3),
    (64, 3),       # log2(64)/2 + 0.5 = 3.5 -> nearest odd below
    (128, 3),      # 4.0 is another tie
    (256, 5),
])
def test_eca_kernel_size_table(channels, expected):
    assert eca_kernel_size(channels) == expected


def test_attention_param_counts_per_site():
    rng = np.random.default_rng(0)
    cfg = ModelConfig()          # c_blk=3, r_se=8, c2d_mid=4, in_freq=40
    se = make_attention(rng, "a", replace(cfg, attention="se"), np.float32)
    eca = make_attention(rng, "a", replace(cfg, attention="eca"), np.float32)
    c2d = make_attention(rng, "a", replace(cfg, attention="c2d"), np.float32)
    # SE bottleneck hidden = max(1, 3 // 8) = 1: fc1 (1x3)+1, fc2 (3x1)+3
    assert se.param_count() == 10
    assert eca.param_count() == 1          # single tap at 3 channels
    assert c2d.param_count() == 21 * cfg.c2d_mid + 1
    assert c2d.mac_count() == 18 * cfg.c2d_mid * cfg.c_blk * cfg.in_freq


def test_footprint_table_grid_relations():
    cfg = ModelConfig()
    rows = footprint_table(cfg)
    assert len(rows) == 13
    assert rows[0][:2] == ("none", "-")
    table = {(att, place): (p, m) for att, place, p, m in rows}
    base_p, base_m = table[("none", "-")]
    for att in ("se", "eca", "c2d"):
        dp = table[(att, "final")][0] - base_p    # one inserted site
        dm = table[(att, "final")][1] - base_m
        assert dp > 0
        # pre and post each add n_pre == n_post == 1 site; "all" adds n_blocks
        assert table[(att, "pre")] == (base_p + dp, base_m + dm)
        assert table[(att, "post")] == (base_p + dp, base_m + dm)
        assert table[(att, "all")] == (base_p + cfg.n_blocks * dp,
                                       base_m + cfg.n_blocks * dm)


def test_default_footprint_frozen_values():
    rep = count_footprint(build_network(ModelConfig(), seed=0))
    assert (rep.params, rep.macs) == (121309, 22283436)
    rep0 = count_footprint(build_network(
        replace(ModelConfig(), attention="none", placement="none"), seed=0))
    assert (rep0.params, rep0.macs) == (120884, 22240236)


def test_count_footprint_module_rows_sum_to_totals():
    net = build_network(tiny_config(), seed=1)
    rep = count_footprint(net)
    assert rep.params == sum(p for _, p, _ in rep.by_module)
    assert rep.macs == sum(m for _, _, m in rep.by_module)
    assert rep.params == net.param_count()
    assert rep.params == sum(t.data.size for _, t in net.named_params())


def test_named_params_are_unique():
    net = build_network(tiny_config(), seed=0)
    names = [name for name, _ in net.named_params()]
    assert len(names) == len(set(names))


# ---------------------------------------------------------------------------
# structure: where attention lands


@pytest.mark.parametrize("placement,count_for", [
    ("pre", lambda cfg: cfg.n_pre),
    ("post", lambda cfg: cfg.n_post),
    ("all", lambda cfg: cfg.n_blocks),
    ("final", lambda cfg: 1),
])
def test_insertion_counts(placement, count_for):
    cfg = tiny_config(attention="se", placement=placement)
    net = build_network(cfg, seed=0)
    assert len(attention_sites(net)) == count_for(cfg)


def test_no_insertions_for_baseline():
    net = build_network(tiny_config(attention="none", placement="none"), seed=0)
    assert attention_sites(net) == []
    assert not any(".att" in name for name, _ in net.named_params())


@pytest.mark.parametrize("kind,cls", [
    ("se", SEAttention), ("eca", ECAAttention), ("c2d", C2DAttention)])
def test_attention_kind_maps_to_class(kind, cls):
    net = build_network(tiny_config(attention=kind, placement="all"), seed=0)
    assert all(isinstance(m, cls) for m in attention_sites(net))


def test_backbone_init_shared_across_attention_variants():
    # same seed must give bit-identical non-attention weights so ablations
    # compare architectures, not initializations
    base = dict(build_network(tiny_config("none", "none"), seed=3).named_params())
    for kind in ("se", "eca", "c2d"):
        variant = dict(build_network(tiny_config(kind, "all"), seed=3)
                       .named_params())
        extra = set(variant) - set(base)
        assert extra and all(".att" in name for name in extra)
        for name, tensor in base.items():
            np.testing.assert_array_equal(tensor.data, variant[name].data)


def test_build_determinism_and_seed_sensitivity():
    a = dict(build_network(tiny_config(), seed=11).named_params())
    b = dict(build_network(tiny_config(), seed=11).named_params())
    c = dict(build_network(tiny_config(), seed=12).named_params())
    assert set(a) == set(b) == set(c)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any(not np.array_equal(a[name].data, c[name].data) for name in a)


# ---------------------------------------------------------------------------
# forward semantics


def test_forward_logit_shape_and_dtype(rng):
    net = build_network(tiny_config(), seed=0)
    x = Tensor(rng.standard_normal((3, 1, 8, 12)).astype(np.float32))
    out = net(x)
    assert out.shape == (3, 12)
    assert out.data.dtype == np.float32


def test_forward_rejects_wrong_shapes(rng):
    net = build_network(tiny_config(), seed=0)
    with pytest.raises(ShapeError, match="network input"):
        net(Tensor(np.zeros((2, 1, 9, 12), dtype=np.float32)))
    with pytest.raises(ShapeError, match="network input"):
        net(Tensor(np.zeros((1, 8, 12), dtype=np.float32)))


def test_train_eval_mode_propagates():
    net = build_network(tiny_config(), seed=0)
    assert net.blocks[0].bn_a.training
    net.eval()
    assert not net.blocks[0].bn_a.training
    assert not net.head.training
    net.train()
    assert net.blocks[0].bn_a.training


def test_zeroed_mixer_block_is_identity(rng):
    # with every weight at zero the residual path is all that remains
    cfg = tiny_config()
    blk = ConvMixerBlock(np.random.default_rng(0), "blk", cfg.c_blk, cfg,
                         np.float32)
    zero_params(blk)
    x = Tensor(rng.uniform(0.1, 1.0, (2, cfg.c_blk, cfg.in_freq,
                                      cfg.in_time)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_zeroed_mixer_outputs_zero(rng):
    mix = Mixer(np.random.default_rng(0), "m", 3, 5, 7, 1.0, np.float32)
    zero_params(mix)
    x = Tensor(rng.standard_normal((2, 3, 5, 7)).astype(np.float32))
    assert np.all(mix(x).data == 0.0)


# ---------------------------------------------------------------------------
# attention gate behavior


def tiny_att(kind):
    cfg = tiny_config(attention=kind, placement="final")
    att = make_attention(np.random.default_rng(5), "att", cfg, np.float32)
    return cfg, att


@pytest.mark.parametrize("kind", ["se", "eca", "c2d"])
def test_zero_weight_attention_halves_input(kind, rng):
    # sigmoid(0) = 1/2 exactly, so a zeroed gate path must emit 0.5 * x
    cfg, att = tiny_att(kind)
    zero_params(att)
    for _ in range(4):
        x = rng.standard_normal((2, cfg.c_blk, cfg.in_freq,
                                 cfg.in_time)).astype(np.float32)
        out = att(Tensor(x))
        np.testing.assert_array_equal(out.data, 0.5 * x)


@pytest.mark.parametrize("kind", ["se", "eca", "c2d"])
def test_gate_weights_strictly_inside_unit_interval(kind):
    # feeding all-ones exposes the raw gate since out = gate * 1
    cfg, att = tiny_att(kind)
    x = Tensor(np.ones((2, cfg.c_blk, cfg.in_freq, cfg.in_time),
                       dtype=np.float32))
    gate = att(x).data
    assert np.all(gate > 0.0)
    assert np.all(gate < 1.0)


def test_se_gate_depends_only_on_channel_means(rng):
    cfg, att = tiny_att("se")
    x1 = rng.uniform(0.5, 1.5, (2, cfg.c_blk, cfg.in_freq,
                                cfg.in_time)).astype(np.float32)
    # shuffling within each (sample, channel) plane preserves the squeeze
    x2 = x1.reshape(2, cfg.c_blk, -1).copy()
    for n in range(2):
        for c in range(cfg.c_blk):
            rng.shuffle(x2[n, c])
    x2 = x2.reshape(x1.shape)
    g1 = att(Tensor(x1)).data / x1
    g2 = att(Tensor(x2)).data / x2
    np.testing.assert_allclose(g1, g2, rtol=1e-4)


def test_c2d_gate_constant_along_time(rng):
    cfg, att = tiny_att("c2d")
    x = rng.uniform(0.5, 1.5, (2, cfg.c_blk, cfg.in_freq,
                               cfg.in_time)).astype(np.float32)
    ratio = att(Tensor(x)).data / x
    np.testing.assert_allclose(
        ratio, np.broadcast_to(ratio[..., :1], ratio.shape), rtol=1e-5)
    assert np.ptp(ratio[0, :, :, 0]) > 1e-4     # but it does vary over (c, f)


def test_attention_preserves_shape(rng):
    for kind in ("se", "eca", "c2d"):
        cfg, att = tiny_att(kind)
        x = Tensor(rng.standard_normal((3, cfg.c_blk, cfg.in_freq,
                                        cfg.in_time)).astype(np.float32))
        assert att(x).shape == x.shape
