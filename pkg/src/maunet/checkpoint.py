"""Binary checkpoint format.

Layout, all integers little-endian::

    b"MAUNET01"
    u32 config_len, config_len bytes of UTF-8 run-config text
    repeated until EOF:
        u32 name_len, name (UTF-8)
        u8 dtype code (0 = float32, 1 = float64)
        u8 ndim, ndim x u32 dims
        payload: prod(dims) little-endian values
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import TrainConfig, parse_config, serialize_config
from .errors import ConfigError, CorruptionError, IncompatibilityError, VersionError
from .model import MAUNet, ModelConfig, build
from .rng import RngState

MAGIC = b"MAUNET01"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    model_config: ModelConfig
    train_config: TrainConfig


def encode(arrays: Mapping[str, np.ndarray], model_config: ModelConfig, train_config: TrainConfig) -> bytes:
    parts = [MAGIC]
    text = serialize_config(model_config, train_config).encode("utf-8")
    parts += [struct.pack("<I", len(text)), text]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ConfigError(f"tensor {name!r}: cannot store dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self) -> bool:
        return self.pos == len(self.buf)


def decode(buf: bytes) -> Checkpoint:
    if buf[: len(MAGIC)] != MAGIC:
        raise VersionError(f"bad checkpoint header {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    r = _Reader(buf)
    r.pos = len(MAGIC)
    (n,) = r.unpack("<I", "config length")
    try:
        model_config, train_config = parse_config(r.take(n, "config block").decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as e:
        raise CorruptionError(f"unreadable config block: {e}") from e
    arrays: dict[str, np.ndarray] = {}
    while not r.done:
        (name_len,) = r.unpack("<I", "name length")
        name = r.take(name_len, "tensor name").decode("utf-8", errors="strict")
        code, ndim = r.unpack("<BB", f"header of {name!r}")
        if code not in _DTYPES:
            raise CorruptionError(f"tensor {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name!r}")
        dt = _DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        payload = r.take(count * dt.itemsize, f"payload of {name!r}")
        if name in arrays:
            raise CorruptionError(f"tensor {name!r} appears twice")
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    return Checkpoint(arrays, model_config, train_config)


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], model_config: ModelConfig,
                    train_config: TrainConfig | None = None) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    data = encode(arrays, model_config, train_config or TrainConfig())
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def save_model(path, model: MAUNet, train_config: TrainConfig | None = None) -> None:
    save_checkpoint(path, model.params.arrays(), model.config, train_config)


def load_model(path) -> tuple[MAUNet, TrainConfig]:
    """Rebuild the network from the stored config and load its tensors."""
    ckpt = load_checkpoint(path)
    dtypes = {a.dtype for a in ckpt.arrays.values()}
    if len(dtypes) > 1:
        raise IncompatibilityError(f"checkpoint mixes dtypes {sorted(map(str, dtypes))}")
    dtype = dtypes.pop() if dtypes else np.dtype(np.float32)
    model = build(ckpt.model_config, RngState(0), dtype=dtype)
    model.params.load_arrays(ckpt.arrays)
    return model, ckpt.train_config
