"""Dataset plumbing: labels, manifests, noise mixing, curriculum, mixup.

The task is 12-way classification: ten target words, "silence", and
"unknown" (any other word in the corpus).  Noise robustness comes from
mixing utterances with background noise at controlled SNRs; training walks
a curriculum whose condition pool grows harder stage by stage:

    stage 0: [clean]
    stage 1: [clean, 0 dB]
    stage 2: [clean, 0 dB, -5 dB]
    stage 3: [clean, 0 dB, -5 dB, -10 dB]

All randomness is driven by generators seeded via
:func:`fcanet.seeding.derive_seed`, keyed on stable identifiers (clip ids,
condition names), so results never depend on iteration order.
"""

import hashlib
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, DataError
from .features import PEAK_LIMIT, MfccParams, pad_or_trim, read_wav
from .seeding import derive_seed

TARGET_WORDS = ("up", "down", "left", "right", "yes", "no", "on", "off",
                "go", "stop")
SILENCE_LABEL = "silence"
UNKNOWN_LABEL = "unknown"
LABELS = TARGET_WORDS + (SILENCE_LABEL, UNKNOWN_LABEL)
SILENCE_MARKER = "_silence_"

EVAL_SNRS = (20.0, 0.0, -5.0, -10.0)


def label_id(word: str) -> int:
    """Map a raw word (or the silence marker) to a class id."""
    if word == SILENCE_MARKER or word == SILENCE_LABEL:
        return LABELS.index(SILENCE_LABEL)
    if word in TARGET_WORDS:
        return TARGET_WORDS.index(word)
    return LABELS.index(UNKNOWN_LABEL)


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: str          # relative to the speech dir, or "_silence_:<n>"
    word: str
    split: str         # train | val | test


_MAX_HASH = 2 ** 27 - 1


def assign_split(filename: str, val_pct: float, test_pct: float) -> str:
    """Stable split assignment keyed on the speaker portion of the filename.

    Files from the same speaker (the part before "_nohash_") always land in
    the same split, so no speaker straddles train and test.
    """
    base = os.path.basename(filename)
    core = re.sub(r"_nohash_.*$", "", base)
    h = int(hashlib.sha1(core.encode("utf-8")).hexdigest(), 16)
    pct = (h % (_MAX_HASH + 1)) * (100.0 / _MAX_HASH)
    if pct < val_pct:
        return "val"
    if pct < val_pct + test_pct:
        return "test"
    return "train"


def build_manifest(speech_dir: str, val_pct: float = 10.0,
                   test_pct: float = 10.0) -> List[ManifestEntry]:
    """Scan <speech_dir>/<word>/*.wav into manifest entries.

    If the corpus ships validation_list.txt / testing_list.txt, those
    assignments are used; otherwise the stable hash split applies.
    """
    if not os.path.isdir(speech_dir):
        raise DataError(f"speech dir not found: {speech_dir}")

    def read_list(name):
        p = os.path.join(speech_dir, name)
        if not os.path.isfile(p):
            return None
        with open(p, "r", encoding="utf-8") as fh:
            return {line.strip().replace("\\", "/") for line in fh if line.strip()}

    val_list = read_list("validation_list.txt")
    test_list = read_list("testing_list.txt")

    entries = []
    for word in sorted(os.listdir(speech_dir)):
        word_dir = os.path.join(speech_dir, word)
        if not os.path.isdir(word_dir) or word.startswith("_"):
            continue
        for fname in sorted(os.listdir(word_dir)):
            if not fname.endswith(".wav"):
                continue
            rel = f"{word}/{fname}"
            if val_list is not None and test_list is not None:
                split = ("val" if rel in val_list
                         else "test" if rel in test_list else "train")
            else:
                split = assign_split(fname, val_pct, test_pct)
            entries.append(ManifestEntry(path=rel, word=word, split=split))
    if not entries:
        raise DataError(f"no WAV files under {speech_dir}")
    return entries


def save_manifest(entries: Sequence[ManifestEntry], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(f"{e.path}\t{e.word}\t{e.split}\n")


def load_manifest(path: str) -> List[ManifestEntry]:
    entries = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{ln}: expected 3 tab-separated "
                                    f"fields, got {len(parts)}")
                entries.append(ManifestEntry(*parts))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return entries


# ---------------------------------------------------------------------------
# noise bank and SNR mixing


@dataclass
class NoiseBank:
    names: List[str]
    waves: List[np.ndarray]

    def __len__(self):
        return len(self.waves)


def load_noise_bank(noise_dir: str, sample_rate: int) -> NoiseBank:
    if not os.path.isdir(noise_dir):
        raise DataError(f"noise dir not found: {noise_dir}")
    names, waves = [], []
    for fname in sorted(os.listdir(noise_dir)):
        if not fname.endswith(".wav"):
            continue
        names.append(fname)
        waves.append(read_wav(os.path.join(noise_dir, fname), sample_rate))
    if not waves:
        raise DataError(f"no noise WAV files under {noise_dir}")
    return NoiseBank(names, waves)


def sample_noise_segment(bank: NoiseBank, length: int,
                         rng: np.random.Generator, max_tries: int = 10
                         ) -> np.ndarray:
    """Random `length`-sample crop from the bank; rejects silent segments.

    Short noise files are tiled before cropping.  After `max_tries` silent
    draws the bank is considered unusable.
    """
    for _ in range(max_tries):
        idx = int(rng.integers(0, len(bank)))
        wav = bank.waves[idx]
        if wav.size < length:
            reps = -(-length // wav.size)
            wav = np.tile(wav, reps)
        start = int(rng.integers(0, wav.size - length + 1))
        seg = wav[start:start + length]
        if np.mean(seg ** 2) > 0.0:
            return seg.copy()
    raise DataError(
        f"could not draw a non-silent noise segment in {max_tries} tries")


@dataclass
class MixResult:
    mixed: np.ndarray
    speech_part: np.ndarray
    noise_part: np.ndarray
    noise_gain: float
    peak_scale: float  # 1.0 when no clipping rescale was needed


def measured_snr_db(speech_part: np.ndarray, noise_part: np.ndarray) -> float:
    ps = float(np.mean(np.asarray(speech_part) ** 2))
    pn = float(np.mean(np.asarray(noise_part) ** 2))
    if ps <= 0.0 or pn <= 0.0:
        raise ArgumentError("measured_snr_db: zero-power component")
    return 10.0 * np.log10(ps / pn)


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> MixResult:
    """Scale `noise` so the mixture hits `snr_db`, then guard against clipping.

    Power is the mean square over the full clip.  If the mixture peak
    exceeds the int16-safe limit, mixture and both components are rescaled
    jointly, which leaves the SNR untouched.
    """
    s = np.asarray(speech, dtype=np.float64)
    n = np.asarray(noise, dtype=np.float64)
    if s.shape != n.shape:
        raise ArgumentError(f"mix_at_snr: length mismatch {s.shape} vs {n.shape}")
    ps = float(np.mean(s ** 2))
    pn = float(np.mean(n ** 2))
    if ps <= 0.0:
        raise DataError("mix_at_snr: speech is silent")
    if pn <= 0.0:
        raise DataError("mix_at_snr: noise segment is silent")
    gain = float(np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0))))
    speech_part = s
    noise_part = gain * n
    mixed = speech_part + noise_part
    peak = float(np.max(np.abs(mixed)))
    scale = 1.0
    if peak > PEAK_LIMIT:
        scale = PEAK_LIMIT / peak
        mixed = mixed * scale
        speech_part = speech_part * scale
        noise_part = noise_part * scale
    return MixResult(mixed, speech_part, noise_part, gain, scale)


# ---------------------------------------------------------------------------
# curriculum


@dataclass(frozen=True)
class MixCondition:
    kind: str                 # "clean" | "snr"
    snr_db: float = 0.0

    @property
    def name(self) -> str:
        if self.kind == "clean":
            return "clean"
        return f"snr{self.snr_db:+g}dB"


CLEAN = MixCondition("clean")
CURRICULUM_SNRS = (0.0, -5.0, -10.0)


def stage_pool(stage: int) -> Tuple[MixCondition, ...]:
    """Condition pool for a curriculum stage (0 = clean only)."""
    if not 0 <= stage <= len(CURRICULUM_SNRS):
        raise ArgumentError(f"stage_pool: stage must be 0..3, got {stage}")
    return (CLEAN,) + tuple(MixCondition("snr", s)
                            for s in CURRICULUM_SNRS[:stage])


def draw_condition(stage: int, rng: np.random.Generator) -> MixCondition:
    pool = stage_pool(stage)
    return pool[int(rng.integers(0, len(pool)))]


def stage_for_epoch(epoch: int, stage_lengths: Sequence[int]) -> int:
    """Stage index for a 0-based epoch; epochs beyond the schedule clamp."""
    if epoch < 0:
        raise ArgumentError(f"stage_for_epoch: epoch must be >= 0, got {epoch}")
    if not stage_lengths:
        raise ArgumentError("stage_for_epoch: empty stage schedule")
    acc = 0
    for i, length in enumerate(stage_lengths):
        acc += int(length)
        if epoch < acc:
            return min(i, len(CURRICULUM_SNRS))
    return min(len(stage_lengths) - 1, len(CURRICULUM_SNRS))


# ---------------------------------------------------------------------------
# mixup


def mixup(features: np.ndarray, label_weights: np.ndarray, alpha: float,
          rng: np.random.Generator):
    """Batch-level mixup: one λ ~ Beta(alpha, alpha) for the whole batch.

    Returns (mixed_features, mixed_weights, lam, permutation).  alpha <= 0
    disables mixing (identity).
    """
    x = np.asarray(features)
    w = np.asarray(label_weights)
    if x.shape[0] != w.shape[0]:
        raise ArgumentError(
            f"mixup: batch size mismatch {x.shape[0]} vs {w.shape[0]}")
    if alpha <= 0.0:
        return x, w, 1.0, np.arange(x.shape[0])
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(x.shape[0])
    fx = lam * x + (1.0 - lam) * x[perm]
    fw = lam * w + (1.0 - lam) * w[perm]
    return fx.astype(x.dtype, copy=False), fw.astype(w.dtype, copy=False), lam, perm


def one_hot(labels: Sequence[int], n_classes: int,
            dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    for i, lbl in enumerate(labels):
        if not 0 <= lbl < n_classes:
            raise ArgumentError(f"one_hot: label {lbl} out of range")
        out[i, lbl] = 1.0
    return out


# ---------------------------------------------------------------------------
# clip loading


@dataclass
class Sample:
    samples: np.ndarray     # float64, exactly clip_samples long
    label: int
    source_id: str


@dataclass
class DataBundle:
    train: List[Sample]
    val: List[Sample]
    test: List[Sample]
    noise: NoiseBank
    mfcc: MfccParams

    def split(self, name: str) -> List[Sample]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ArgumentError(f"unknown split {name!r}") from None


def make_silence_sample(bank: NoiseBank, params: MfccParams, seed: int,
                        index: int, split: str) -> Sample:
    """A one-second noise crop scaled to a modest RMS, labeled silence."""
    rng = np.random.default_rng(derive_seed(seed, "silence", split, index))
    seg = sample_noise_segment(bank, params.clip_samples, rng)
    rms = float(np.sqrt(np.mean(seg ** 2)))
    target = float(rng.uniform(0.02, 0.2))
    seg = seg * (target / rms)
    peak = float(np.max(np.abs(seg)))
    if peak > PEAK_LIMIT:
        seg = seg * (PEAK_LIMIT / peak)
    return Sample(samples=seg, label=label_id(SILENCE_MARKER),
                  source_id=f"{SILENCE_MARKER}:{split}:{index}")


def load_dataset(entries: Sequence[ManifestEntry], speech_dir: str,
                 bank: NoiseBank, params: MfccParams, seed: int,
                 silence_fraction: float = 0.1) -> DataBundle:
    """Read every manifest clip, pad to one second, and add silence items."""
    splits: Dict[str, List[Sample]] = {"train": [], "val": [], "test": []}
    for e in entries:
        if e.split not in splits:
            raise DataError(f"manifest entry {e.path}: bad split {e.split!r}")
        wav = read_wav(os.path.join(speech_dir, e.path), params.sample_rate)
        wav = pad_or_trim(wav, params.clip_samples)
        splits[e.split].append(Sample(samples=wav, label=label_id(e.word),
                                      source_id=e.path))
    for split, items in splits.items():
        n_sil = max(1, int(round(silence_fraction * len(items)))) if items else 0
        for i in range(n_sil):
            items.append(make_silence_sample(bank, params, seed, i, split))
    return DataBundle(train=splits["train"], val=splits["val"],
                      test=splits["test"], noise=bank, mfcc=params)


# ---------------------------------------------------------------------------
# evaluation sets


@dataclass
class EvalItem:
    samples: np.ndarray
    label: int
    source_id: str
    speech_part: Optional[np.ndarray] = None
    noise_part: Optional[np.ndarray] = None


def eval_condition_names() -> List[str]:
    return ["clean"] + [MixCondition("snr", s).name for s in EVAL_SNRS]


def build_eval_sets(test_items: Sequence[Sample], bank: NoiseBank,
                    params: MfccParams, seed: int
                    ) -> Dict[str, List[EvalItem]]:
    """Fixed eval sets: the clean test split plus one noisy copy per SNR.

    Noise draws are keyed on (seed, condition, clip id), so sets are
    reproducible item-by-item.  Silence clips pass through unmixed — they
    have no speech power to anchor an SNR.
    """
    silence = label_id(SILENCE_MARKER)
    sets: Dict[str, List[EvalItem]] = {}
    sets["clean"] = [EvalItem(s.samples.copy(), s.label, s.source_id)
                     for s in test_items]
    for snr in EVAL_SNRS:
        cond = MixCondition("snr", snr)
        items = []
        for s in test_items:
            if s.label == silence:
                items.append(EvalItem(s.samples.copy(), s.label, s.source_id))
                continue
            rng = np.random.default_rng(
                derive_seed(seed, "eval", cond.name, s.source_id))
            seg = sample_noise_segment(bank, s.samples.size, rng)
            mix = mix_at_snr(s.samples, seg, snr)
            items.append(EvalItem(mix.mixed, s.label, s.source_id,
                                  speech_part=mix.speech_part,
                                  noise_part=mix.noise_part))
        sets[cond.name] = items
    return sets
