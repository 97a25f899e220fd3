"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"FCAN" | version | config_len | config bytes (UTF-8 key=value lines)
    | tensor_count | per tensor: name_len | name | rank | dims... | f32 data

Stored tensors are the trainable parameters plus BatchNorm running
statistics, in deterministic traversal order.  Values are always written as
32-bit floats, so a float32 network round-trips bit-exactly.
"""

import io
import struct
from dataclasses import fields
from typing import Dict, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelConfig, Network, build_network

MAGIC = b"FCAN"
VERSION = 1


def _config_block(cfg: ModelConfig) -> bytes:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(ModelConfig)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _field_type(f):
    if isinstance(f.type, str):
        return {"int": int, "float": float, "str": str}[f.type]
    return f.type


def _parse_config_block(blob: bytes) -> ModelConfig:
    kwargs = {}
    types = {f.name: _field_type(f) for f in fields(ModelConfig)}
    for ln in blob.decode("utf-8").splitlines():
        if not ln.strip():
            continue
        if "=" not in ln:
            raise DataError(f"checkpoint config: bad line {ln!r}")
        key, value = ln.split("=", 1)
        if key not in types:
            raise DataError(f"checkpoint config: unknown key {key!r}")
        kwargs[key] = types[key](value)
    cfg = ModelConfig(**kwargs)
    cfg.validate()
    return cfg


def named_tensors(net: Network):
    """Parameters plus BN running stats, in deterministic order."""
    for name, p in net.named_params():
        yield name, p.data
    for prefix, st in net.bn_states():
        yield f"{prefix}.running_mean", st.running_mean
        yield f"{prefix}.running_var", st.running_var


def dump_bytes(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_block = _config_block(net.config)
    buf.write(struct.pack("<I", len(cfg_block)))
    buf.write(cfg_block)
    tensors = list(named_tensors(net))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save(path, net: Network) -> None:
    blob = dump_bytes(net)
    with open(path, "wb") as fh:
        fh.write(blob)


def parse_bytes(blob: bytes) -> Tuple[ModelConfig, Dict[str, np.ndarray]]:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise DataError("checkpoint truncated")
        out = view[pos:pos + n]
        pos += n
        return out

    def u32():
        return struct.unpack("<I", take(4))[0]

    if bytes(take(4)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version = u32()
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    cfg = _parse_config_block(bytes(take(u32())))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = np.array(arr)  # own the memory
    if pos != len(view):
        raise DataError("checkpoint has trailing bytes")
    return cfg, tensors


def load(path) -> Tuple[ModelConfig, Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_bytes(blob)


def restore(net: Network, tensors: Dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into `net` (names and shapes must match)."""
    expected = dict(named_tensors(net))
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise ConfigError(
            f"checkpoint does not match model: missing={missing[:3]} "
            f"extra={extra[:3]}")
    params = dict(net.named_params())
    bn = {}
    for prefix, st in net.bn_states():
        bn[f"{prefix}.running_mean"] = (st, "running_mean")
        bn[f"{prefix}.running_var"] = (st, "running_var")
    for name, arr in tensors.items():
        if expected[name].shape != arr.shape:
            raise ConfigError(
                f"checkpoint tensor {name}: shape {arr.shape} != "
                f"model shape {expected[name].shape}")
        value = arr.astype(net.dtype)
        if name in params:
            params[name].data = value
        else:
            st, attr = bn[name]
            setattr(st, attr, value)


def build_from_bytes(blob: bytes, dtype=np.float32) -> Network:
    cfg, tensors = parse_bytes(blob)
    net = build_network(cfg, seed=0, dtype=dtype)
    restore(net, tensors)
    return net


def load_network(path, dtype=np.float32) -> Network:
    cfg, tensors = load(path)
    net = build_network(cfg, seed=0, dtype=dtype)
    restore(net, tensors)
    return net
