"""Flat little-endian binary format for parameters, optimizer moments and buffers.

Layout::

    magic    4s   b"BWEC"
    version  u32  FORMAT_VERSION
    count    u32  number of entries
    entries  count times:
        name_len u32, name utf-8
        kind     u8   0 = parameter, 1 = buffer (e.g. batch-norm running stats)
        ndim     u32, dims u32 * ndim
        steps    u64  Adam step count (0 for buffers)
        values   f32 * n
        adam_m   f32 * n   (parameters only)
        adam_v   f32 * n   (parameters only)
    meta_len u32, meta utf-8 JSON (may be empty)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"BWEC"
FORMAT_VERSION = 1

PARAMETER = 0
BUFFER = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Entry:
    name: str
    kind: int
    values: np.ndarray
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    steps: int = 0


@dataclass
class CheckpointData:
    entries: list[Entry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def by_name(self) -> dict[str, Entry]:
        return {e.name: e for e in self.entries}


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def encode(ckpt: CheckpointData) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(ckpt.entries))]
    for e in ckpt.entries:
        name = e.name.encode("utf-8")
        shape = np.shape(e.values)
        parts.append(struct.pack("<I", len(name)) + name)
        parts.append(struct.pack("<BI", e.kind, len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
        parts.append(struct.pack("<Q", e.steps))
        parts.append(_f32(e.values))
        if e.kind == PARAMETER:
            parts.append(_f32(e.adam_m if e.adam_m is not None else np.zeros(shape)))
            parts.append(_f32(e.adam_v if e.adam_v is not None else np.zeros(shape)))
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated while reading {what} "
                                  f"(need {n} bytes at offset {self.pos}, file has {len(self.buf)})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, n, shape, what):
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float32).reshape(shape)


def decode(buf: bytes) -> CheckpointData:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported (expected {FORMAT_VERSION})")
    entries = []
    for i in range(count):
        (name_len,) = r.unpack("<I", f"entry {i} name length")
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        kind, ndim = r.unpack("<BI", f"{name} header")
        if kind not in (PARAMETER, BUFFER):
            raise CheckpointError(f"{name}: unknown entry kind {kind}")
        shape = r.unpack(f"<{ndim}I", f"{name} shape")
        (steps,) = r.unpack("<Q", f"{name} step count")
        n = int(np.prod(shape)) if shape else 1
        values = r.floats(n, shape, f"{name} values")
        m = v = None
        if kind == PARAMETER:
            m = r.floats(n, shape, f"{name} adam_m")
            v = r.floats(n, shape, f"{name} adam_v")
        entries.append(Entry(name, kind, values, m, v, steps))
    (meta_len,) = r.unpack("<I", "metadata length")
    raw = r.take(meta_len, "metadata")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint metadata")
    try:
        meta = json.loads(raw.decode("utf-8")) if raw else {}
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    return CheckpointData(entries, meta)


def save_parameters(path, params, buffers=None, meta=None):
    """Write ``params`` (list of :class:`Parameter`) and named ``buffers`` to ``path``."""
    entries = [Entry(p.name, PARAMETER, p.data, p.adam_m, p.adam_v, p.step_count) for p in params]
    for name, arr in (buffers or {}).items():
        entries.append(Entry(name, BUFFER, np.asarray(arr)))
    with open(path, "wb") as fh:
        fh.write(encode(CheckpointData(entries, meta or {})))


def load_file(path) -> CheckpointData:
    with open(path, "rb") as fh:
        return decode(fh.read())


def restore_parameters(params, ckpt: CheckpointData):
    """Copy values, moments and step counts into matching parameters by name."""
    found = ckpt.by_name()
    for p in params:
        e = found.get(p.name)
        if e is None or e.kind != PARAMETER:
            raise CheckpointError(f"checkpoint has no parameter {p.name!r}")
        if e.values.shape != p.shape:
            raise CheckpointError(f"{p.name}: shape {e.values.shape} != expected {p.shape}")
        p.tensor.data[...] = e.values
        p.adam_m[...] = e.adam_m
        p.adam_v[...] = e.adam_v
        p.step_count = int(e.steps)
