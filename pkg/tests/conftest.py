"""Shared fixtures: synthetic corpora and small run configurations."""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import synth  # noqa: E402

from fcanet.config import RunConfig, save_config  # noqa: E402
from fcanet.model import tiny_config  # noqa: E402


def small_model_config(**overrides):
    """Tiny channel counts but real 40x101 feature geometry."""
    cfg = replace(tiny_config(), in_freq=40, in_time=101)
    return replace(cfg, **overrides) if overrides else cfg


def small_run_config(speech_dir, noise_dir, **train_overrides):
    cfg = RunConfig()
    train = replace(cfg.train, max_epochs=4, stage_epochs=(1, 1, 1, 1),
                    batch_size=8, patience=3, seed=5, **train_overrides)
    return replace(cfg, model=small_model_config(),
                   data=replace(cfg.data, speech_dir=speech_dir,
                                noise_dir=noise_dir),
                   train=train)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Three-word synthetic corpus with background noise."""
    base = tmp_path_factory.mktemp("corpus")
    speech, noise = synth.make_corpus(str(base), words=("yes", "no", "up"),
                                      per_word=12, seed=0)
    return {"base": str(base), "speech": speech, "noise": noise}


@pytest.fixture(scope="session")
def run_cfg_path(corpus, tmp_path_factory):
    cfg = small_run_config(corpus["speech"], corpus["noise"])
    path = tmp_path_factory.mktemp("cfg") / "run.cfg"
    save_config(cfg, str(path))
    return str(path)


@pytest.fixture(scope="session")
def prepared(corpus, run_cfg_path, tmp_path_factory):
    """Output of `fcanet prepare` on the session corpus."""
    from fcanet.cli import main
    out = tmp_path_factory.mktemp("prep")
    rc = main(["prepare", "--config", run_cfg_path, "--out", str(out)])
    assert rc == 0
    return str(out)


@pytest.fixture(scope="session")
def trained(prepared, run_cfg_path, tmp_path_factory):
    """Output of a short `fcanet train` run on the prepared data."""
    from fcanet.cli import main
    out = tmp_path_factory.mktemp("trainrun")
    rc = main(["train", "--config", run_cfg_path, "--data", prepared,
               "--out", str(out)])
    assert rc == 0
    return str(out)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
