"""Command-line interface.

Subcommands::

    prepare    scan corpora, write the manifest and the five eval sets
    train      run the curriculum training loop, write checkpoint + history
    eval       score a checkpoint on every eval condition, write a CSV report
    count      report parameters/MACs for the attention/placement grid
    gradcheck  finite-difference verification of the autodiff core

Exit codes: 0 success, 1 verification failure, 2 configuration or input
error, 3 numeric abort during training.
"""

import argparse
import hashlib
import os
import sys
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np

from . import checkpoint, data as data_mod, train as train_mod
from .config import RunConfig, load_config, save_config
from .errors import ArgumentError, ConfigError, DataError, NumericAbort
from .features import feature_map, read_wav, write_wav
from .gradcheck import grad_check, model_cases, primitive_cases
from .model import build_network, count_footprint, footprint_table
from .seeding import derive_seed

GRAD_TOL = 1e-4


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare(args) -> int:
    cfg = _load_run_config(args)
    if not cfg.data.speech_dir or not cfg.data.noise_dir:
        raise ConfigError("prepare: config must set data.speech_dir and "
                          "data.noise_dir")
    out = _ensure_out(args.out)
    seed = cfg.train.seed

    entries = data_mod.build_manifest(cfg.data.speech_dir, cfg.data.val_pct,
                                      cfg.data.test_pct)
    manifest_path = os.path.join(out, "manifest.tsv")
    data_mod.save_manifest(entries, manifest_path)
    with open(manifest_path, "rb") as fh:
        manifest_digest = _sha256(fh.read())

    bank = data_mod.load_noise_bank(cfg.data.noise_dir,
                                    cfg.features.sample_rate)
    bundle = data_mod.load_dataset(entries, cfg.data.speech_dir, bank,
                                   cfg.features, seed,
                                   cfg.data.silence_fraction)
    eval_sets = data_mod.build_eval_sets(bundle.test, bank, cfg.features, seed)

    counts = {s: 0 for s in ("train", "val", "test")}
    for e in entries:
        counts[e.split] += 1
    print(f"manifest: {len(entries)} files "
          f"(train {counts['train']}, val {counts['val']}, "
          f"test {counts['test']}); sha256 {manifest_digest}")

    for cond in data_mod.eval_condition_names():
        items = eval_sets[cond]
        cond_dir = _ensure_out(os.path.join(out, "eval", cond))
        h = hashlib.sha256()
        with open(os.path.join(cond_dir, "labels.tsv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            for i, item in enumerate(items):
                fname = f"{i:05d}.wav"
                write_wav(os.path.join(cond_dir, fname), item.samples,
                          cfg.features.sample_rate)
                fh.write(f"{fname}\t{item.label}\t{item.source_id}\n")
                with open(os.path.join(cond_dir, fname), "rb") as wf:
                    h.update(fname.encode())
                    h.update(bytes([item.label]))
                    h.update(wf.read())
        print(f"eval[{cond}]: {len(items)} clips; sha256 {h.hexdigest()}")

    save_config(cfg, os.path.join(out, "run.cfg"))
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    manifest_path = os.path.join(args.data, "manifest.tsv")
    if not os.path.isfile(manifest_path):
        raise DataError(f"train: manifest not found at {manifest_path} "
                        f"(run prepare first)")
    if not cfg.data.speech_dir or not cfg.data.noise_dir:
        raise ConfigError("train: config must set data.speech_dir and "
                          "data.noise_dir")
    if (cfg.model.in_freq != cfg.features.n_mfcc
            or cfg.model.in_time != cfg.features.n_frames()):
        raise ConfigError(
            f"train: model input ({cfg.model.in_freq}, {cfg.model.in_time}) "
            f"does not match the feature map "
            f"({cfg.features.n_mfcc}, {cfg.features.n_frames()})")
    out = _ensure_out(args.out)

    entries = data_mod.load_manifest(manifest_path)
    bank = data_mod.load_noise_bank(cfg.data.noise_dir, cfg.features.sample_rate)
    bundle = data_mod.load_dataset(entries, cfg.data.speech_dir, bank,
                                   cfg.features, cfg.train.seed,
                                   cfg.data.silence_fraction)

    net = build_network(cfg.model, seed=cfg.train.seed)
    if args.resume:
        ck_cfg, tensors = checkpoint.load(args.resume)
        if ck_cfg != cfg.model:
            raise ConfigError("train: --resume checkpoint config differs "
                              "from the run config model section")
        checkpoint.restore(net, tensors)

    result = train_mod.fit(net, cfg.train, bundle)

    ckpt_path = os.path.join(out, "best.ckpt")
    with open(ckpt_path, "wb") as fh:
        fh.write(result.best_checkpoint)
    hist_path = os.path.join(out, "history.csv")
    with open(hist_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(train_mod.history_csv(result.history))

    print(f"trained {len(result.history)} epochs"
          f"{' (early stop)' if result.stopped_early else ''}; "
          f"best epoch {result.best_epoch} "
          f"val acc {100.0 * result.best_val_acc:.2f}%")
    print(f"checkpoint: {ckpt_path} sha256 {_sha256(result.best_checkpoint)}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _load_eval_condition(cond_dir: str, params) -> Tuple[np.ndarray, np.ndarray]:
    labels_path = os.path.join(cond_dir, "labels.tsv")
    if not os.path.isfile(labels_path):
        raise DataError(f"eval: missing {labels_path}")
    feats, labels = [], []
    with open(labels_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            fname, label, _source = line.split("\t")
            wav = read_wav(os.path.join(cond_dir, fname), params.sample_rate)
            feats.append(feature_map(wav, params))
            labels.append(int(label))
    if not feats:
        raise DataError(f"eval: empty condition at {cond_dir}")
    return np.stack(feats), np.array(labels)


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    ck_cfg, tensors = checkpoint.load(args.checkpoint)
    net = build_network(ck_cfg, seed=0)
    checkpoint.restore(net, tensors)
    report = count_footprint(net)

    rows: List[Tuple[str, float]] = []
    for cond in data_mod.eval_condition_names():
        cond_dir = os.path.join(args.data, "eval", cond)
        feats, labels = _load_eval_condition(cond_dir, cfg.features)
        acc = train_mod.accuracy(net, feats, labels)
        rows.append((cond, acc))

    lines = ["model,variant,attention,params,macs,condition,accuracy"]
    for cond, acc in rows:
        lines.append(f"fcanet,{ck_cfg.placement},{ck_cfg.attention},"
                     f"{report.params},{report.macs},{cond},{acc:.6f}")
    csv_text = "\n".join(lines) + "\n"
    out = _ensure_out(args.out)
    with open(os.path.join(out, "eval_report.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(csv_text)

    print(f"model: attention={ck_cfg.attention} placement={ck_cfg.placement} "
          f"params={report.params} macs={report.macs}")
    for cond, acc in rows:
        print(f"  {cond:>10}: {100.0 * acc:6.2f}%")
    return 0


# ---------------------------------------------------------------------------
# count


def cmd_count(args) -> int:
    cfg = _load_run_config(args)
    net = build_network(cfg.model, seed=cfg.train.seed)
    rep = count_footprint(net)
    print(f"configured model: attention={cfg.model.attention} "
          f"placement={cfg.model.placement} params={rep.params} "
          f"macs={rep.macs}")

    rows = footprint_table(cfg.model)
    print(f"{'attention':>10} {'placement':>10} {'params':>10} {'macs':>12}")
    for att, place, params, macs in rows:
        print(f"{att:>10} {place:>10} {params:>10} {macs:>12}")

    if args.out:
        out = _ensure_out(args.out)
        lines = ["attention,placement,params,macs"]
        lines += [f"{att},{place},{params},{macs}"
                  for att, place, params, macs in rows]
        with open(os.path.join(out, "footprint.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    cfg = _load_run_config(args)
    seed = cfg.train.seed
    rows = []
    worst = 0.0
    for name, loss_fn, params in primitive_cases(seed):
        rep = grad_check(loss_fn, params, eps=1e-5,
                         max_coords_per_param=args.max_coords,
                         rng=np.random.default_rng(derive_seed(seed, "fd", name)))
        rows.append((name, rep.max_rel_err, rep.n_coords))
        worst = max(worst, rep.max_rel_err)
    for name, loss_fn, params in model_cases(seed):
        rep = grad_check(loss_fn, params, eps=1e-5,
                         max_coords_per_param=args.max_coords,
                         rng=np.random.default_rng(derive_seed(seed, "fd", name)))
        rows.append((name, rep.max_rel_err, rep.n_coords))
        worst = max(worst, rep.max_rel_err)

    for name, err, n in rows:
        status = "ok" if err <= GRAD_TOL else "FAIL"
        print(f"{status:>4}  {name:<32} max_rel_err={err:.3e} ({n} coords)")

    if args.out:
        out = _ensure_out(args.out)
        lines = ["case,max_rel_err,n_coords"]
        lines += [f"{name},{err:.6e},{n}" for name, err, n in rows]
        with open(os.path.join(out, "gradcheck_report.csv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    if worst > GRAD_TOL:
        print(f"gradient check FAILED: worst {worst:.3e} > {GRAD_TOL}",
              file=sys.stderr)
        return 1
    print(f"gradient check passed: worst {worst:.3e} <= {GRAD_TOL}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcanet",
        description="Small-footprint noise-robust keyword spotting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="path to a key=value run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override train.seed from the config")
        p.add_argument("--out", required=out_required,
                       default=None, help="output directory")

    p = sub.add_parser("prepare", help="build manifest and eval sets")
    common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", required=True,
                   help="directory produced by `prepare`")
    p.add_argument("--resume", default=None,
                   help="checkpoint to initialize weights from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the eval sets")
    common(p)
    p.add_argument("--data", required=True,
                   help="directory produced by `prepare`")
    p.add_argument("--checkpoint", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("count", help="report parameter/MAC footprints")
    common(p, out_required=False)
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p, out_required=False)
    p.add_argument("--max-coords", type=int, default=25,
                   help="sampled coordinates per parameter (default 25)")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
