"""Dataset plumbing: splits, manifests, SNR mixing, curriculum, mixup."""

import os

import numpy as np
import pytest

import synth
from fcanet import data as D
from fcanet.errors import ArgumentError, DataError
from fcanet.features import PEAK_LIMIT, MfccParams


# ---------------------------------------------------------------------------
# labels / splits / manifest


def test_label_vocabulary():
    assert D.LABELS == ("up", "down", "left", "right", "yes", "no", "on",
                        "off", "go", "stop", "silence", "unknown")
    assert D.label_id("yes") == 4
    assert D.label_id("bird") == D.label_id("marvin") == 11   # unknown bucket
    assert D.label_id(D.SILENCE_MARKER) == 10


def test_assign_split_is_deterministic_and_take_invariant():
    a = D.assign_split("alpha_nohash_0.wav", 10.0, 10.0)
    b = D.assign_split("alpha_nohash_7.wav", 10.0, 10.0)
    assert a == b                       # same speaker, different takes
    assert a == D.assign_split("alpha_nohash_0.wav", 10.0, 10.0)


def test_assign_split_proportions():
    counts = {"train": 0, "val": 0, "test": 0}
    for i in range(4000):
        counts[D.assign_split(f"spk{i:05d}_nohash_0.wav", 10.0, 10.0)] += 1
    assert 0.07 < counts["val"] / 4000 < 0.13
    assert 0.07 < counts["test"] / 4000 < 0.13


def test_build_manifest_counts_and_roundtrip(tmp_path):
    speech = tmp_path / "speech"
    synth.make_speech_dir(str(speech), ("yes", "no"), 6, seed=1)
    synth.make_noise_dir(str(speech / "_background_noise_"), seed=1)
    entries = D.build_manifest(str(speech), 10.0, 10.0)
    assert len(entries) == 12           # noise dir is skipped
    assert all(e.path.endswith(".wav") for e in entries)
    path = tmp_path / "manifest.tsv"
    D.save_manifest(entries, str(path))
    with open(path) as fh:
        assert sum(1 for _ in fh) == len(entries)
    assert D.load_manifest(str(path)) == entries


def test_build_manifest_missing_dir_raises(tmp_path):
    with pytest.raises(DataError):
        D.build_manifest(str(tmp_path / "nope"), 10.0, 10.0)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError):
        D.build_manifest(str(empty), 10.0, 10.0)


# ---------------------------------------------------------------------------
# noise bank / SNR mixing


def noise_bank(tmp_path, seed=0):
    noise_dir = tmp_path / "noise"
    synth.make_noise_dir(str(noise_dir), seed=seed)
    return D.load_noise_bank(str(noise_dir), 16000)


def test_mix_at_snr_hits_target_exactly():
    rng = np.random.default_rng(0)
    for _ in range(50):
        speech = rng.uniform(-0.5, 0.5, 16000)
        noise = rng.uniform(-0.8, 0.8, 16000)
        for snr in (20.0, 0.0, -5.0, -10.0):
            r = D.mix_at_snr(speech, noise, snr)
            got = D.measured_snr_db(r.speech_part, r.noise_part)
            assert abs(got - snr) <= 1e-9
            assert np.abs(r.mixed).max() <= PEAK_LIMIT + 1e-12


def test_mix_rescale_preserves_snr_and_peak():
    rng = np.random.default_rng(1)
    speech = rng.uniform(-0.9, 0.9, 16000)
    noise = rng.uniform(-0.9, 0.9, 16000)
    r = D.mix_at_snr(speech, noise, -10.0)
    assert r.peak_scale < 1.0           # clipping did occur pre-rescale
    assert np.abs(r.mixed).max() == pytest.approx(PEAK_LIMIT, rel=1e-12)
    np.testing.assert_allclose(r.mixed, r.speech_part + r.noise_part,
                               atol=1e-15)


def test_mix_rejects_silent_speech():
    with pytest.raises(DataError):
        D.mix_at_snr(np.zeros(16000), np.ones(16000), 0.0)


def test_sample_noise_segment_rejects_silence(tmp_path):
    silent_dir = tmp_path / "silent"
    silent_dir.mkdir()
    from fcanet.features import write_wav
    write_wav(str(silent_dir / "z.wav"), np.zeros(48000), 16000)
    bank = D.load_noise_bank(str(silent_dir), 16000)
    with pytest.raises(DataError):
        D.sample_noise_segment(bank, 16000, np.random.default_rng(0))


def test_sample_noise_segment_tiles_short_noise(tmp_path):
    short_dir = tmp_path / "short"
    short_dir.mkdir()
    from fcanet.features import write_wav
    write_wav(str(short_dir / "s.wav"),
              np.random.default_rng(3).uniform(-0.5, 0.5, 4000), 16000)
    bank = D.load_noise_bank(str(short_dir), 16000)
    seg = D.sample_noise_segment(bank, 16000, np.random.default_rng(0))
    assert seg.size == 16000
    assert (seg ** 2).mean() > 0


# ---------------------------------------------------------------------------
# curriculum


def test_stage_pools_match_schedule():
    assert [c.name for c in D.stage_pool(0)] == ["clean"]
    assert [c.name for c in D.stage_pool(1)] == ["clean", "snr+0dB"]
    assert [c.name for c in D.stage_pool(2)] == ["clean", "snr+0dB", "snr-5dB"]
    assert [c.name for c in D.stage_pool(3)] == ["clean", "snr+0dB",
                                                 "snr-5dB", "snr-10dB"]
    with pytest.raises(ArgumentError):
        D.stage_pool(4)


def test_stage_for_epoch_boundaries():
    lengths = (10, 10, 10, 170)
    assert D.stage_for_epoch(0, lengths) == 0
    assert D.stage_for_epoch(9, lengths) == 0
    assert D.stage_for_epoch(10, lengths) == 1
    assert D.stage_for_epoch(24, lengths) == 2    # 1-based epoch 25
    assert D.stage_for_epoch(30, lengths) == 3
    assert D.stage_for_epoch(10_000, lengths) == 3


def test_draw_condition_is_roughly_uniform():
    rng = np.random.default_rng(4)
    counts = {}
    n = 20_000
    for _ in range(n):
        c = D.draw_condition(3, rng)
        counts[c.name] = counts.get(c.name, 0) + 1
    assert set(counts) == {"clean", "snr+0dB", "snr-5dB", "snr-10dB"}
    for v in counts.values():
        assert abs(v / n - 0.25) < 0.02


def test_eval_condition_names():
    assert D.eval_condition_names() == ["clean", "snr+20dB", "snr+0dB",
                                        "snr-5dB", "snr-10dB"]


# ---------------------------------------------------------------------------
# mixup / one-hot


def test_mixup_alpha_zero_is_identity():
    x = np.random.default_rng(5).standard_normal((6, 3))
    w = D.one_hot([0, 1, 2, 0, 1, 2], 3)
    fx, fw, lam, perm = D.mixup(x, w, 0.0, np.random.default_rng(0))
    assert lam == 1.0
    np.testing.assert_array_equal(fx, x)
    np.testing.assert_array_equal(perm, np.arange(6))


def test_mixup_convex_combination():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((5, 4)).astype(np.float32)
    w = D.one_hot([0, 1, 2, 3, 0], 4)
    fx, fw, lam, perm = D.mixup(x, w, 0.4, rng)
    assert 0.0 <= lam <= 1.0
    np.testing.assert_allclose(fx, lam * x + (1 - lam) * x[perm], atol=1e-6)
    np.testing.assert_allclose(fw.sum(axis=1), 1.0, atol=1e-6)
    with pytest.raises(ArgumentError):
        D.mixup(x, w[:3], 0.4, rng)


def test_one_hot_validates_range():
    out = D.one_hot([0, 11], 12)
    assert out.shape == (2, 12)
    assert out[0, 0] == 1.0 and out[1, 11] == 1.0
    with pytest.raises(ArgumentError):
        D.one_hot([12], 12)


# ---------------------------------------------------------------------------
# dataset assembly / eval sets


def test_load_dataset_pads_and_injects_silence(tmp_path):
    speech = tmp_path / "speech"
    synth.make_speech_dir(str(speech), ("yes", "no"), 10, seed=2,
                          short_every=3)
    bank = noise_bank(tmp_path, seed=2)
    params = MfccParams()
    entries = D.build_manifest(str(speech), 10.0, 10.0)
    bundle = D.load_dataset(entries, str(speech), bank, params, seed=7,
                            silence_fraction=0.1)
    n_files = {"train": 0, "val": 0, "test": 0}
    for e in entries:
        n_files[e.split] += 1
    for split_name in ("train", "val", "test"):
        items = getattr(bundle, split_name)
        n = n_files[split_name]
        want_silence = max(1, round(0.1 * n)) if n else 0
        silences = [s for s in items if s.label == D.label_id(D.SILENCE_MARKER)]
        assert len(items) == n + want_silence
        assert len(silences) == want_silence
        assert all(s.samples.size == params.clip_samples for s in items)
    ids = [s.source_id for s in bundle.train + bundle.val + bundle.test]
    assert len(ids) == len(set(ids))


def test_silence_samples_are_quiet_and_deterministic(tmp_path):
    bank = noise_bank(tmp_path, seed=3)
    params = MfccParams()
    a = D.make_silence_sample(bank, params, seed=42, index=0, split="train")
    b = D.make_silence_sample(bank, params, seed=42, index=0, split="train")
    c = D.make_silence_sample(bank, params, seed=42, index=1, split="train")
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    rms = float(np.sqrt((a.samples ** 2).mean()))
    assert 0.0 < rms < 0.25
    assert np.abs(a.samples).max() <= PEAK_LIMIT


def test_build_eval_sets_snr_and_determinism(tmp_path):
    speech = tmp_path / "speech"
    synth.make_speech_dir(str(speech), ("yes",), 6, seed=4)
    bank = noise_bank(tmp_path, seed=4)
    params = MfccParams()
    entries = [D.ManifestEntry(e.path, e.word, "test")
               for e in D.build_manifest(str(speech), 0.0, 0.0)]
    bundle = D.load_dataset(entries, str(speech), bank, params, seed=9,
                            silence_fraction=0.1)
    sets_a = D.build_eval_sets(bundle.test, bank, params, seed=9)
    sets_b = D.build_eval_sets(bundle.test, bank, params, seed=9)
    assert sorted(sets_a) == sorted(D.eval_condition_names())
    for cond, items in sets_a.items():
        assert len(items) == len(bundle.test)
        for got, ref in zip(items, sets_b[cond]):
            np.testing.assert_array_equal(got.samples, ref.samples)
    # clean items pass speech through untouched
    for item, src in zip(sets_a["clean"], bundle.test):
        np.testing.assert_array_equal(item.samples, src.samples)
    # mixed items hit their target SNR (silence passes through unmixed)
    silence_id = D.label_id(D.SILENCE_MARKER)
    for snr, cond in zip((20.0, 0.0, -5.0, -10.0),
                         ("snr+20dB", "snr+0dB", "snr-5dB", "snr-10dB")):
        for item in sets_a[cond]:
            if item.label == silence_id:
                assert item.speech_part is None
                continue
            got = D.measured_snr_db(item.speech_part, item.noise_part)
            assert abs(got - snr) < 1e-6
