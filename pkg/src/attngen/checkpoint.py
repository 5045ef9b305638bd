"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"ATNG"                      magic
    u32 version                  currently 1
    u32 n, n bytes UTF-8         metadata block, one "key=value" per line
    u32 count                    number of array records
    count x record:
        u32 n, n bytes UTF-8     record name, e.g. "param:conv1.weight"
        u32 rank
        rank x u64               extents
        prod(extents) x f32      values, C order

Record prefixes are ``param:``, ``buffer:`` (BN running statistics),
``adam_m:``, ``adam_v:`` and ``adam_step:`` (rank 0). Generator states and
scalar bookkeeping live in the metadata block.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from attngen.errors import CheckpointFormatError, CheckpointVersionError, ShapeError
from attngen.model import AttnGenConfig, AttnGenModel, _expected_shapes, buffer_shapes, init_model

MAGIC = b"ATNG"
VERSION = 1


@dataclass
class ModelCheckpoint:
    meta: "OrderedDict[str, str]" = field(default_factory=OrderedDict)
    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @property
    def best_val_acc(self):
        return float(self.meta.get("best_val_acc", "nan"))

    @property
    def epoch(self):
        return int(self.meta.get("epoch", "0"))

    def model_config(self) -> AttnGenConfig:
        kwargs = {}
        for key, value in self.meta.items():
            if key.startswith("model."):
                kwargs[key[len("model."):]] = value
        return config_from_strings(AttnGenConfig, kwargs)

    def rng_state(self, name):
        text = self.meta.get(f"rng.{name}")
        if text is None:
            return None
        return tuple(int(w, 16) for w in text.split(","))

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<I", VERSION)]
        meta = "".join(f"{k}={v}\n" for k, v in self.meta.items()).encode("utf-8")
        out.append(struct.pack("<I", len(meta)))
        out.append(meta)
        out.append(struct.pack("<I", len(self.arrays)))
        for name, arr in self.arrays.items():
            encoded = name.encode("utf-8")
            out.append(struct.pack("<I", len(encoded)))
            out.append(encoded)
            out.append(struct.pack("<I", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelCheckpoint":
        reader = _Reader(blob)
        if reader.take(4) != MAGIC:
            raise CheckpointFormatError("bad magic bytes; not an ATNG checkpoint")
        version = reader.u32()
        if version != VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
        meta = OrderedDict()
        try:
            text = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("metadata block is not valid UTF-8") from None
        for line in text.splitlines():
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointFormatError(f"malformed metadata line {line!r}")
            meta[key] = value
        arrays = OrderedDict()
        for _ in range(reader.u32()):
            name = reader.take(reader.u32()).decode("utf-8", errors="strict")
            rank = reader.u32()
            shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
            n = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        if reader.remaining():
            raise CheckpointFormatError(f"{reader.remaining()} trailing bytes after the last record")
        return cls(meta, arrays)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def remaining(self):
        return len(self.blob) - self.pos


def save_checkpoint(checkpoint: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(checkpoint.to_bytes())


def load_checkpoint(path) -> ModelCheckpoint:
    return ModelCheckpoint.from_bytes(Path(path).read_bytes())


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def config_from_strings(cls, values: dict):
    """Instantiate dataclass ``cls`` from string values using field defaults' types."""
    import dataclasses

    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in values.items():
        if key not in fields:
            raise KeyError(key)
        default = fields[key].default
        kwargs[key] = parse_value(text, default)
    return cls(**kwargs)


def parse_value(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        lowered = text.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    return text


def snapshot(model: AttnGenModel, meta: dict) -> ModelCheckpoint:
    """Copy the model's parameters, BN statistics and Adam state."""
    ck_meta = OrderedDict((f"model.{k}", format_value(v)) for k, v in model.config.to_dict().items())
    for key, value in meta.items():
        ck_meta[key] = format_value(value)
    arrays = OrderedDict()
    for name, p in model.params.items():
        arrays[f"param:{name}"] = p.data.astype(np.float32)
    for name, buf in model.buffers.items():
        arrays[f"buffer:{name}"] = buf.astype(np.float32)
    for name, p in model.params.items():
        arrays[f"adam_m:{name}"] = p.adam_m.astype(np.float32)
        arrays[f"adam_v:{name}"] = p.adam_v.astype(np.float32)
        arrays[f"adam_step:{name}"] = np.array(p.step_count, dtype=np.float32)
    return ModelCheckpoint(ck_meta, arrays)


def load_into(model: AttnGenModel, checkpoint: ModelCheckpoint) -> AttnGenModel:
    """Copy checkpoint state into ``model`` after validating every shape.

    Nothing is modified unless all records are present and shaped correctly.
    """
    staged = []
    for name, p in model.params.items():
        for prefix, target in (("param", p.data), ("adam_m", p.adam_m), ("adam_v", p.adam_v)):
            key = f"{prefix}:{name}"
            if key not in checkpoint.arrays:
                raise ShapeError(f"checkpoint has no record for parameter {name!r} ({key})")
            arr = checkpoint.arrays[key]
            if arr.shape != target.shape:
                raise ShapeError(f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {target.shape}")
            staged.append((target, arr))
    for name, buf in model.buffers.items():
        arr = checkpoint.arrays.get(f"buffer:{name}")
        if arr is None or arr.shape != buf.shape:
            got = None if arr is None else arr.shape
            raise ShapeError(f"buffer {name!r}: checkpoint shape {got} != model shape {buf.shape}")
        staged.append((buf, arr))
    for target, arr in staged:
        target[...] = arr
    for name, p in model.params.items():
        p.step_count = int(checkpoint.arrays.get(f"adam_step:{name}", np.array(0.0)))
    return model


def restore_model(checkpoint: ModelCheckpoint, config: AttnGenConfig = None) -> AttnGenModel:
    config = config or checkpoint.model_config()
    return load_into(init_model(config, seed=0), checkpoint)


def expected_records(config: AttnGenConfig):
    names = [f"param:{n}" for n in _expected_shapes(config)]
    names += [f"buffer:{n}" for n in buffer_shapes(config)]
    return names
