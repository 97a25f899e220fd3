"""Flat key=value run configuration.

One UTF-8 document carries every knob, namespaced by section::

    model.c_blk = 3
    features.n_fft = 400
    data.speech_dir = /corpora/speech
    train.lr0 = 0.005

Lines starting with ``#`` are comments.  Unknown keys are rejected by name;
``parse(serialize(cfg)) == cfg`` holds exactly (floats round-trip via repr).
"""

from dataclasses import dataclass, field, fields, replace


from .errors import ConfigError
from .features import MfccParams
from .model import ModelConfig
from .train import TrainPlan


@dataclass(frozen=True)
class DataConfig:
    speech_dir: str = ""
    noise_dir: str = ""
    val_pct: float = 10.0
    test_pct: float = 10.0
    silence_fraction: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    features: MfccParams = field(default_factory=MfccParams)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainPlan = field(default_factory=TrainPlan)


_SECTIONS = ("model", "features", "data", "train")
_SECTION_TYPES = {"model": ModelConfig, "features": MfccParams,
                  "data": DataConfig, "train": TrainPlan}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str, default) -> object:
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return low == "true"
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p for p in text.split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    return text


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = "
                         f"{_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    defaults = {s: _SECTION_TYPES[s]() for s in _SECTIONS}
    known = {s: {f.name for f in fields(defaults[s])} for s in _SECTIONS}
    updates = {s: {} for s in _SECTIONS}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected key = value, "
                              f"got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"config line {ln}: unknown config key {key!r}")
        section, name = key.split(".", 1)
        if section not in _SECTIONS or name not in known[section]:
            raise ConfigError(f"config line {ln}: unknown config key {key!r}")
        default = getattr(defaults[section], name)
        try:
            updates[section][name] = _parse_value(value, default)
        except ValueError as exc:
            raise ConfigError(f"config line {ln}: bad value for {key}: "
                              f"{exc}") from exc
    built = {}
    for section in _SECTIONS:
        try:
            built[section] = replace(defaults[section], **updates[section])
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config section {section}: {exc}") from exc
    cfg = RunConfig(**built)
    cfg.model.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))
