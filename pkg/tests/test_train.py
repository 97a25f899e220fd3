"""Optimizer, schedule, and training-loop tests."""

import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_model_config
from fcanet.data import (SILENCE_MARKER, build_manifest, label_id,
                         load_dataset, load_noise_bank)
from fcanet.errors import ArgumentError, ConfigError, NumericAbort
from fcanet.features import MfccParams, feature_map
from fcanet.model import build_network
from fcanet.train import (Adam, EpochRecord, TrainPlan, accuracy,
                          clean_features, fit, history_csv, lr_at, predict,
                          prepare_item, train_epoch)
from fcanet.tensor import Tensor


@pytest.fixture(scope="module")
def bundle(corpus):
    entries = build_manifest(corpus["speech"])
    bank = load_noise_bank(corpus["noise"], 16000)
    return load_dataset(entries, corpus["speech"], bank, MfccParams(),
                        seed=3, silence_fraction=0.1)


@pytest.fixture(scope="module")
def small_bundle(bundle):
    return replace(bundle, train=bundle.train[:10], val=bundle.val[:4])


def params_of(*arrays):
    out = []
    for i, a in enumerate(arrays):
        out.append((f"p{i}", Tensor(np.asarray(a, dtype=np.float64),
                                    requires_grad=True)))
    return out


# ---------------------------------------------------------------------------
# plan validation


def test_default_plan_is_valid():
    TrainPlan()


@pytest.mark.parametrize("kw", [
    dict(batch_size=0),
    dict(max_epochs=0),
    dict(lr0=0.0),
    dict(lr0=-1.0),
    dict(lr_decay=0.0),
    dict(lr_decay=1.5),
    dict(schedule="linear"),
    dict(stage_epochs=()),
    dict(stage_epochs=(5, 0)),
    dict(mixup_alpha=-0.1),
    dict(patience=30, max_epochs=30),
])
def test_plan_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        TrainPlan(**kw)


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_moves_by_lr():
    # bias correction makes the very first update lr * g / (|g| + eps)
    g = np.array([1.0, -2.0, 0.5])
    params = params_of([0.0, 0.0, 0.0])
    params[0][1].grad = g.copy()
    opt = Adam(params)
    opt.step(0.01)
    np.testing.assert_allclose(params[0][1].data, -0.01 * np.sign(g),
                               rtol=1e-6)


def test_adam_matches_reference_over_steps(rng):
    b1, b2, eps = 0.9, 0.999, 1e-8
    p_ref = rng.standard_normal(6)
    params = params_of(p_ref)
    opt = Adam(params, beta1=b1, beta2=b2, eps=eps)
    m = np.zeros_like(p_ref)
    v = np.zeros_like(p_ref)
    for t in range(1, 6):
        g = rng.standard_normal(6)
        params[0][1].grad = g.copy()
        opt.step(0.003)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p_ref = p_ref - 0.003 * (m / (1 - b1 ** t)) / (
            np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(params[0][1].data, p_ref, rtol=1e-12)


def test_adam_missing_grad_decays_moments():
    params = params_of([0.0])
    p = params[0][1]
    opt = Adam(params)
    p.grad = np.array([1.0])
    opt.step(0.01)
    after_first = p.data.copy()
    p.grad = None
    opt.step(0.01)
    # moments shrank but were not reset, so the parameter keeps drifting
    np.testing.assert_allclose(opt.m[0], 0.9 * 0.1 * 1.0, rtol=1e-12)
    np.testing.assert_allclose(opt.v[0], 0.999 * 0.001 * 1.0, rtol=1e-12)
    assert p.data[0] != after_first[0]


def test_adam_rejects_nonpositive_lr():
    opt = Adam(params_of([1.0]))
    with pytest.raises(ArgumentError, match="lr"):
        opt.step(0.0)


def test_adam_aborts_on_nonfinite_gradient():
    params = params_of([1.0])
    params[0][1].grad = np.array([np.nan])
    with pytest.raises(NumericAbort, match="gradient in p0"):
        Adam(params).step(0.01)


def test_adam_aborts_on_parameter_overflow():
    p = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
    p.grad = np.ones(1, dtype=np.float32)
    with np.errstate(over="ignore"):
        with pytest.raises(NumericAbort, match="parameter w"):
            Adam([("w", p)]).step(1e39)


def test_adam_zero_grad_clears_params():
    params = params_of([1.0], [2.0])
    for _, p in params:
        p.grad = np.ones(1)
    Adam(params).zero_grad()
    assert all(p.grad is None for _, p in params)


# ---------------------------------------------------------------------------
# learning-rate schedules


def test_step_decay_schedule_values():
    plan = TrainPlan()     # lr0=0.005, decay 0.85 every 4 epochs after 5
    for epoch in (1, 2, 5, 6, 8):
        assert lr_at(epoch, plan) == pytest.approx(0.005, rel=1e-12)
    assert lr_at(9, plan) == pytest.approx(0.00425, rel=1e-12)
    assert lr_at(12, plan) == pytest.approx(0.00425, rel=1e-12)
    assert lr_at(13, plan) == pytest.approx(0.0036125, rel=1e-12)


def test_cosine_restart_schedule_values():
    plan = TrainPlan(schedule="cosine_warm_restarts", lr0=0.004,
                     restart_period=10, restart_mult=2)
    assert lr_at(1, plan) == pytest.approx(0.004, rel=1e-12)
    assert lr_at(6, plan) == pytest.approx(0.002, rel=1e-12)   # cos(pi/2)
    assert lr_at(11, plan) == pytest.approx(0.004, rel=1e-12)  # first restart
    assert lr_at(21, plan) == pytest.approx(0.002, rel=1e-12)  # mid 20-cycle
    assert lr_at(31, plan) == pytest.approx(0.004, rel=1e-12)  # second restart
    # strictly decreasing within a cycle
    vals = [lr_at(e, plan) for e in range(1, 11)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_lr_at_rejects_epoch_zero():
    with pytest.raises(ArgumentError, match="epoch"):
        lr_at(0, TrainPlan())


# ---------------------------------------------------------------------------
# per-item preparation


def test_prepare_item_shape_and_determinism(bundle):
    plan = TrainPlan(seed=9)
    sample = next(s for s in bundle.train
                  if s.label != label_id(SILENCE_MARKER))
    a = prepare_item(sample, 3, plan, bundle, epoch=2)
    b = prepare_item(sample, 3, plan, bundle, epoch=2)
    assert a.shape == (1, bundle.mfcc.n_mfcc, bundle.mfcc.n_frames())
    assert a.dtype == np.float32
    np.testing.assert_array_equal(a, b)
    c = prepare_item(sample, 3, plan, bundle, epoch=3)
    assert not np.array_equal(a, c)


def test_prepare_item_stage_zero_is_clean(bundle):
    # stage 0 only ever draws the clean condition; with augmentation off the
    # features must equal the plain feature map
    plan = TrainPlan(seed=9, time_shift_ms=0.0, spec_mask_max=0)
    sample = bundle.train[0]
    feat = prepare_item(sample, 0, plan, bundle, epoch=1)
    np.testing.assert_array_equal(feat, feature_map(sample.samples,
                                                    bundle.mfcc))


def test_prepare_item_never_mixes_silence(bundle):
    plan = TrainPlan(seed=9, time_shift_ms=0.0, spec_mask_max=0)
    silence = next(s for s in bundle.train
                   if s.label == label_id(SILENCE_MARKER))
    clean = feature_map(silence.samples, bundle.mfcc)
    for epoch in range(1, 9):
        np.testing.assert_array_equal(
            prepare_item(silence, 3, plan, bundle, epoch=epoch), clean)


def test_prepare_item_mixes_speech_at_late_stage(bundle):
    plan = TrainPlan(seed=9, time_shift_ms=0.0, spec_mask_max=0)
    sample = next(s for s in bundle.train
                  if s.label != label_id(SILENCE_MARKER))
    clean = feature_map(sample.samples, bundle.mfcc)
    assert any(
        not np.array_equal(prepare_item(sample, 3, plan, bundle, epoch=e),
                           clean)
        for e in range(1, 9))


# ---------------------------------------------------------------------------
# evaluation helpers


def test_predict_and_accuracy(small_bundle):
    net = build_network(small_model_config(), seed=1)
    feats = clean_features(small_bundle.val, small_bundle.mfcc)
    labels = np.array([s.label for s in small_bundle.val])
    pred = predict(net, feats, batch_size=2)
    assert pred.shape == (len(small_bundle.val),)
    acc = accuracy(net, feats, labels, batch_size=2)
    assert 0.0 <= acc <= 1.0
    assert acc == pytest.approx(float(np.mean(pred == labels)))


def test_accuracy_rejects_empty_set():
    net = build_network(small_model_config(), seed=1)
    with pytest.raises(ArgumentError, match="empty"):
        accuracy(net, np.zeros((0, 1, 40, 101), dtype=np.float32),
                 np.zeros(0))


# ---------------------------------------------------------------------------
# fit


def fast_plan(**kw):
    base = dict(batch_size=4, max_epochs=2, patience=1,
                stage_epochs=(1, 1, 1, 1), seed=7)
    base.update(kw)
    return TrainPlan(**base)


def test_fit_requires_nonempty_splits(small_bundle):
    net = build_network(small_model_config(), seed=1)
    with pytest.raises(ConfigError, match="empty"):
        fit(net, fast_plan(), replace(small_bundle, train=[]))
    with pytest.raises(ConfigError, match="empty"):
        fit(net, fast_plan(), replace(small_bundle, val=[]))


def test_fit_is_deterministic(small_bundle):
    plan = fast_plan()

    def run():
        net = build_network(small_model_config(), seed=2)
        return fit(net, plan, small_bundle)

    r1, r2 = run(), run()
    assert r1.best_checkpoint == r2.best_checkpoint
    assert r1.best_epoch == r2.best_epoch
    masked = [(h.epoch, h.stage, h.lr, h.train_loss, h.train_acc, h.val_acc)
              for h in r1.history]
    assert masked == [(h.epoch, h.stage, h.lr, h.train_loss, h.train_acc,
                       h.val_acc) for h in r2.history]


def test_fit_restores_best_epoch_weights(small_bundle):
    from fcanet import checkpoint
    net = build_network(small_model_config(), seed=2)
    result = fit(net, fast_plan(), small_bundle)
    assert checkpoint.dump_bytes(net) == result.best_checkpoint
    assert result.best_epoch >= 1
    assert len(result.history) <= fast_plan().max_epochs


def test_fit_stops_after_patience_without_improvement(small_bundle):
    # an lr this small cannot move the weights, so epoch 1 stays the best
    plan = fast_plan(lr0=1e-12, max_epochs=10, patience=2,
                     stage_epochs=(10,), mixup_alpha=0.0)
    net = build_network(small_model_config(), seed=2)
    result = fit(net, plan, small_bundle)
    assert result.stopped_early
    assert result.best_epoch == 1
    assert len(result.history) == 1 + plan.patience


def test_train_epoch_requires_items(small_bundle):
    net = build_network(small_model_config(), seed=1)
    opt = Adam(net.named_params())
    with pytest.raises(ConfigError, match="empty"):
        train_epoch(net, opt, fast_plan(), replace(small_bundle, train=[]),
                    epoch=1, stage=0, lr=0.001)


# ---------------------------------------------------------------------------
# history serialization


def test_history_csv_format():
    rows = [EpochRecord(1, 0, 0.005, 1.23456789, 0.5, 0.25, 1.5),
            EpochRecord(2, 1, 0.00425, 0.9, 0.75, 0.5, 2.0)]
    text = history_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "epoch,stage,lr,train_loss,train_acc,val_acc,seconds"
    assert lines[1] == "1,0,0.005,1.234568,0.500000,0.250000,1.500"
    assert lines[2] == "2,1,0.00425,0.900000,0.750000,0.500000,2.000"
    assert text.endswith("\n")
