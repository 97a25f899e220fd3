"""Training loop: Adam, learning-rate schedules, curriculum, early stopping.

One epoch: shuffle the train split, and per item (seeded by the item's
stable id, so batch composition never affects augmentation) draw a noise
condition from the current curriculum stage, mix, time-shift, extract
MFCCs, spec-mask; then mixup per batch, forward, cross-entropy, backward,
Adam step.  Validation runs on clean audio unless configured otherwise.

Everything is deterministic given (plan, data): repeated runs produce
bit-identical checkpoints and metrics.
"""

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint, ops
from .data import (SILENCE_MARKER, DataBundle, Sample, draw_condition,
                   label_id, mix_at_snr, mixup, one_hot, sample_noise_segment,
                   stage_for_epoch)
from .errors import ArgumentError, ConfigError, NumericAbort
from .features import feature_map, spec_augment, time_shift
from .model import Network
from .seeding import derive_seed
from .tensor import Tensor, backward, no_grad

SCHEDULES = ("step_decay", "cosine_warm_restarts")


@dataclass(frozen=True)
class TrainPlan:
    batch_size: int = 128
    lr0: float = 0.005
    lr_decay: float = 0.85
    lr_decay_every: int = 4
    lr_decay_after: int = 5
    schedule: str = "step_decay"
    restart_period: int = 10
    restart_mult: int = 2
    max_epochs: int = 200
    patience: int = 20
    min_improvement: float = 1e-6
    stage_epochs: Tuple[int, ...] = (10, 10, 10, 170)
    seed: int = 0
    mixup_alpha: float = 0.2
    time_shift_ms: float = 100.0
    spec_mask_max: int = 25
    noisy_validation: bool = False

    def __post_init__(self):
        for attr in ("batch_size", "lr_decay_every", "lr_decay_after",
                     "restart_period", "restart_mult", "max_epochs", "patience"):
            v = getattr(self, attr)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"train plan: {attr} must be a positive "
                                  f"integer, got {v!r}")
        if self.lr0 <= 0:
            raise ConfigError(f"train plan: lr0 must be > 0, got {self.lr0}")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError(f"train plan: lr_decay must be in (0, 1], "
                              f"got {self.lr_decay}")
        if self.patience >= self.max_epochs:
            raise ConfigError(f"train plan: patience ({self.patience}) must be "
                              f"< max_epochs ({self.max_epochs})")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"train plan: schedule must be one of "
                              f"{SCHEDULES}, got {self.schedule!r}")
        if (not self.stage_epochs
                or any(int(s) < 1 for s in self.stage_epochs)):
            raise ConfigError("train plan: stage_epochs must be a nonempty "
                              "tuple of positive ints")
        if self.mixup_alpha < 0 or self.spec_mask_max < 0 or self.time_shift_ms < 0:
            raise ConfigError("train plan: augmentation knobs must be >= 0")


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam over named parameters."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        if lr <= 0:
            raise ArgumentError(f"adam step: lr must be > 0, got {lr}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                # unused parameter this step: moments decay, no fresh signal
                self.m[i] *= self.beta1
                self.v[i] *= self.beta2
            else:
                if not np.all(np.isfinite(g)):
                    raise NumericAbort(f"non-finite gradient in {name}")
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            update = lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = p.data - update
            if not np.all(np.isfinite(p.data)):
                raise NumericAbort(f"non-finite parameter {name} after update")


def lr_at(epoch: int, plan: TrainPlan) -> float:
    """Learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise ArgumentError(f"lr_at: epoch must be >= 1, got {epoch}")
    if plan.schedule == "step_decay":
        k = max(0, epoch - plan.lr_decay_after) // plan.lr_decay_every
        return plan.lr0 * plan.lr_decay ** k
    # cosine_warm_restarts: decay to zero within each cycle; cycle length
    # starts at restart_period and multiplies at every restart
    e = epoch - 1
    period = plan.restart_period
    while e >= period:
        e -= period
        period *= plan.restart_mult
    return 0.5 * plan.lr0 * (1.0 + math.cos(math.pi * e / period))


# ---------------------------------------------------------------------------
# batch preparation


def _silence_id() -> int:
    return label_id(SILENCE_MARKER)


def prepare_item(sample: Sample, stage: int, plan: TrainPlan,
                 data: DataBundle, epoch: int) -> np.ndarray:
    """Augmented (1, n_mfcc, T) float32 features for one training item."""
    rng = np.random.default_rng(
        derive_seed(plan.seed, "augment", epoch, sample.source_id))
    wav = sample.samples
    cond = draw_condition(stage, rng)
    if (cond.kind == "snr" and sample.label != _silence_id()
            and float(np.mean(wav ** 2)) > 0.0):
        seg = sample_noise_segment(data.noise, wav.size, rng)
        wav = mix_at_snr(wav, seg, cond.snr_db).mixed
    if plan.time_shift_ms > 0:
        shift_ms = float(rng.uniform(-plan.time_shift_ms, plan.time_shift_ms))
        shift = int(round(shift_ms * data.mfcc.sample_rate / 1000.0))
        wav = time_shift(wav, shift)
    feat = feature_map(wav, data.mfcc)
    if plan.spec_mask_max > 0:
        feat = spec_augment(feat, rng, plan.spec_mask_max)
    return feat


def clean_features(items: Sequence[Sample], params) -> np.ndarray:
    return np.stack([feature_map(s.samples, params) for s in items])


def predict(net: Network, feats: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class ids for a stack of feature maps (eval mode, no grads)."""
    net.eval()
    out = []
    with no_grad():
        for b0 in range(0, len(feats), batch_size):
            logits = net(Tensor(feats[b0:b0 + batch_size]))
            out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(net: Network, feats: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    if len(feats) == 0:
        raise ArgumentError("accuracy: empty evaluation set")
    pred = predict(net, feats, batch_size)
    return float(np.mean(pred == np.asarray(labels)))


def train_epoch(net: Network, optimizer: Adam, plan: TrainPlan,
                data: DataBundle, epoch: int, stage: int, lr: float,
                clean_cache: Optional[Tuple[np.ndarray, np.ndarray]] = None
                ) -> Tuple[float, float]:
    """One optimization pass; returns (mean loss, clean-forward accuracy)."""
    items = data.train
    if not items:
        raise ConfigError("train_epoch: training split is empty")
    order = np.random.default_rng(
        derive_seed(plan.seed, "order", epoch)).permutation(len(items))
    n_classes = net.config.n_classes
    net.train()
    loss_sum = 0.0
    for b0 in range(0, len(items), plan.batch_size):
        batch = [items[i] for i in order[b0:b0 + plan.batch_size]]
        feats = np.stack([prepare_item(s, stage, plan, data, epoch)
                          for s in batch])
        labels = one_hot([s.label for s in batch], n_classes)
        if plan.mixup_alpha > 0:
            rng_b = np.random.default_rng(
                derive_seed(plan.seed, "mixup", epoch, b0))
            feats, labels, _, _ = mixup(feats, labels, plan.mixup_alpha, rng_b)
        logits = net(Tensor(feats))
        loss = ops.softmax_cross_entropy(logits, labels)
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise NumericAbort("non-finite training loss")
        optimizer.zero_grad()
        backward(loss)
        optimizer.step(lr)
        loss_sum += lval * len(batch)
    mean_loss = loss_sum / len(items)

    if clean_cache is None:
        feats = clean_features(items, data.mfcc)
        labels = np.array([s.label for s in items])
    else:
        feats, labels = clean_cache
    train_acc = accuracy(net, feats, labels, plan.batch_size)
    net.train()
    return mean_loss, train_acc


def _validation_features(data: DataBundle, plan: TrainPlan, epoch: int,
                         stage: int) -> np.ndarray:
    """Per-epoch noisy validation features (only when noisy_validation)."""
    feats = []
    for s in data.val:
        rng = np.random.default_rng(
            derive_seed(plan.seed, "val-augment", epoch, s.source_id))
        wav = s.samples
        cond = draw_condition(stage, rng)
        if (cond.kind == "snr" and s.label != _silence_id()
                and float(np.mean(wav ** 2)) > 0.0):
            seg = sample_noise_segment(data.noise, wav.size, rng)
            wav = mix_at_snr(wav, seg, cond.snr_db).mixed
        feats.append(feature_map(wav, data.mfcc))
    return np.stack(feats)


# ---------------------------------------------------------------------------
# fit


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float


@dataclass
class FitResult:
    history: List[EpochRecord]
    best_epoch: int
    best_val_acc: float
    best_checkpoint: bytes
    stopped_early: bool


def fit(net: Network, plan: TrainPlan, data: DataBundle) -> FitResult:
    """Train with curriculum + early stopping; leaves `net` at the best epoch."""
    if not data.train:
        raise ConfigError("fit: training split is empty")
    if not data.val:
        raise ConfigError("fit: validation split is empty")
    optimizer = Adam(net.named_params())
    train_cache = (clean_features(data.train, data.mfcc),
                   np.array([s.label for s in data.train]))
    val_labels = np.array([s.label for s in data.val])
    val_cache = (None if plan.noisy_validation
                 else clean_features(data.val, data.mfcc))

    history: List[EpochRecord] = []
    best_epoch, best_acc = 0, -1.0
    best_blob: Optional[bytes] = None
    stopped_early = False
    for epoch in range(1, plan.max_epochs + 1):
        t0 = time.perf_counter()
        stage = stage_for_epoch(epoch - 1, plan.stage_epochs)
        lr = lr_at(epoch, plan)
        train_loss, train_acc = train_epoch(net, optimizer, plan, data, epoch,
                                            stage, lr, clean_cache=train_cache)
        val_feats = (val_cache if val_cache is not None
                     else _validation_features(data, plan, epoch, stage))
        val_acc = accuracy(net, val_feats, val_labels, plan.batch_size)
        seconds = time.perf_counter() - t0
        history.append(EpochRecord(epoch, stage, lr, train_loss, train_acc,
                                   val_acc, seconds))
        if val_acc > best_acc + plan.min_improvement:
            best_acc = val_acc
            best_epoch = epoch
            best_blob = checkpoint.dump_bytes(net)
        elif epoch - best_epoch >= plan.patience:
            stopped_early = True
            break

    assert best_blob is not None
    _, tensors = checkpoint.parse_bytes(best_blob)
    checkpoint.restore(net, tensors)
    return FitResult(history=history, best_epoch=best_epoch,
                     best_val_acc=best_acc, best_checkpoint=best_blob,
                     stopped_early=stopped_early)


def history_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,stage,lr,train_loss,train_acc,val_acc,seconds"]
    for r in history:
        lines.append(f"{r.epoch},{r.stage},{r.lr:.8g},{r.train_loss:.6f},"
                     f"{r.train_acc:.6f},{r.val_acc:.6f},{r.seconds:.3f}")
    return "\n".join(lines) + "\n"
