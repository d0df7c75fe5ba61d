"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ADSR"  u16 version=1  u64 config fingerprint  u32 parameter count
    per parameter: u16 name length, UTF-8 name, 4 x u32 dims, float32 values

A training checkpoint appends an optimizer section in the same conventions::

    b"OPTM"  u64 step  u32 parameter count
    per parameter: u16 name length, UTF-8 name, 4 x u32 dims,
                   float32 first moments, float32 second moments

The config itself is not stored; readers either supply it or recover it by
matching the fingerprint against every configuration consistent with the
stored parameter names and shapes.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Mapping, Optional

import numpy as np

from .model import FUSIONS, SCALES, VARIANTS, ModelConfig, ParameterSet, init_parameters, parameter_shapes

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "OptimizerSnapshot",
    "config_from_parameters",
    "load_checkpoint",
    "save_checkpoint",
]

MAGIC = b"ADSR"
OPT_MAGIC = b"OPTM"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class OptimizerSnapshot:
    step: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict[str, np.ndarray]
    optimizer: Optional[OptimizerSnapshot] = None

    def parameter_set(self) -> ParameterSet:
        params = init_parameters(self.config, seed=0)
        params.load_arrays(self.arrays)
        return params


def _write_entry(fh: BinaryIO, name: str, *arrays: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    shape = arrays[0].shape
    if len(shape) != 4:
        raise CheckpointError(f"parameter {name!r} is not 4-D: {shape}")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<4I", *shape))
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype=_LE_F32).tobytes())


def _read_exact(fh: BinaryIO, n: int, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return data


def _read_entry(fh: BinaryIO, path, count: int = 1):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, path))
    name = _read_exact(fh, name_len, path).decode("utf-8")
    shape = struct.unpack("<4I", _read_exact(fh, 16, path))
    size = int(np.prod(shape))
    arrays = [
        np.frombuffer(_read_exact(fh, 4 * size, path), dtype=_LE_F32).reshape(shape).astype(np.float32)
        for _ in range(count)
    ]
    return name, arrays


def save_checkpoint(path, config: ModelConfig, params: Mapping, optimizer: Optional[OptimizerSnapshot] = None) -> Path:
    """Write ``params`` (tensors or arrays) and optionally optimizer state."""
    path = Path(path)
    arrays = {name: np.asarray(getattr(p, "data", p)) for name, p in params.items()}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HQI", VERSION, config.fingerprint(), len(arrays)))
            for name, a in arrays.items():
                _write_entry(fh, name, a)
            if optimizer is not None:
                fh.write(OPT_MAGIC)
                fh.write(struct.pack("<QI", optimizer.step, len(arrays)))
                for name in arrays:
                    _write_entry(fh, name, optimizer.first_moment[name], optimizer.second_moment[name])
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc
    return path


def config_from_parameters(shapes: Mapping[str, tuple], fingerprint: int) -> ModelConfig:
    """Find the config whose fingerprint and parameter layout match."""
    k_values = {int(n.split(".kernel")[1].split(".")[0]) for n in shapes if ".kernel" in n}
    K = max(k_values) + 1 if k_values else 4
    reductions = {64 // s[0] for n, s in shapes.items() if n.endswith("attn.squeeze.weight")} or {4}
    for scale, variant, fusion, reduction in itertools.product(SCALES, VARIANTS, FUSIONS, sorted(reductions)):
        config = ModelConfig(scale=scale, variant=variant, K=K, fusion=fusion, reduction=reduction)
        if config.fingerprint() == fingerprint and parameter_shapes(config) == dict(shapes):
            return config
    raise CheckpointError("no known model configuration matches the checkpoint fingerprint")


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> Checkpoint:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc.strerror or exc}") from exc
    with fh:
        if _read_exact(fh, 4, path) != MAGIC:
            raise CheckpointError(f"{path}: not an ADSR checkpoint (bad magic)")
        version, fingerprint, count = struct.unpack("<HQI", _read_exact(fh, 14, path))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        if config is not None and config.fingerprint() != fingerprint:
            raise CheckpointError(f"{path}: config fingerprint mismatch (checkpoint was written for a different model)")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, (a,) = _read_entry(fh, path)
            arrays[name] = a
        optimizer = None
        tag = fh.read(4)
        if tag == OPT_MAGIC:
            step, opt_count = struct.unpack("<QI", _read_exact(fh, 12, path))
            m, v = {}, {}
            for _ in range(opt_count):
                name, (mi, vi) = _read_entry(fh, path, count=2)
                m[name], v[name] = mi, vi
            optimizer = OptimizerSnapshot(step, m, v)
        elif tag:
            raise CheckpointError(f"{path}: unexpected trailing data")
    if config is None:
        config = config_from_parameters({n: a.shape for n, a in arrays.items()}, fingerprint)
    return Checkpoint(config, arrays, optimizer)
