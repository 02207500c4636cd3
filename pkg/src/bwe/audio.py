"""Stereo audio clips and a small RIFF/WAVE reader and writer.

Supports PCM 16-bit and IEEE 32-bit float, one or two channels, 44.1 kHz.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE_HZ = 44100

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Malformed or unsupported WAV file.

    ``chunk`` names the RIFF chunk at fault (``"RIFF"``, ``"fmt "`` or
    ``"data"``) when the problem can be attributed to one.
    """

    def __init__(self, message, chunk=None, path=None):
        self.chunk = chunk
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message}")


@dataclass
class AudioClip:
    """Stereo float samples, shape ``(2, n)``."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            s = np.stack([s, s])
        if s.ndim != 2 or s.shape[0] != 2:
            raise ValueError(f"expected stereo samples of shape (2, n), got {s.shape}")
        self.samples = s

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def slice(self, start, stop) -> AudioClip:
        return AudioClip(self.samples[:, start:stop], self.sample_rate_hz)


def _read_chunks(data: bytes, path):
    if len(data) < 12:
        raise WavError("file too short for a RIFF header", "RIFF", path)
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavError("not a RIFF/WAVE file", "RIFF", path)
    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavError(f"{cid.decode('latin-1')!r} chunk truncated "
                           f"({len(body)} of {size} bytes)", cid.decode("latin-1"), path)
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def load_wav(path, expected_rate=SAMPLE_RATE_HZ) -> AudioClip:
    """Read a WAV file into a stereo clip with values in [-1, 1]."""
    path = Path(path)
    chunks = _read_chunks(path.read_bytes(), path)
    if b"fmt " not in chunks:
        raise WavError("missing 'fmt ' chunk", "fmt ", path)
    if b"data" not in chunks:
        raise WavError("missing 'data' chunk", "data", path)
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise WavError("'fmt ' chunk too short", "fmt ", path)
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _FORMAT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels not in (1, 2):
        raise WavError(f"unsupported channel count {channels}", "fmt ", path)
    if rate != expected_rate:
        raise WavError(f"sample rate {rate} Hz, expected {expected_rate} Hz", "fmt ", path)

    raw = chunks[b"data"]
    if tag == _FORMAT_PCM and bits == 16:
        pcm = np.frombuffer(raw[:len(raw) - len(raw) % 2], dtype="<i2")
        x = pcm.astype(np.float64) / 32768.0
    elif tag == _FORMAT_FLOAT and bits == 32:
        x = np.frombuffer(raw[:len(raw) - len(raw) % 4], dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"unsupported encoding (format tag {tag}, {bits} bits)", "fmt ", path)
    x = x[:len(x) - len(x) % channels].reshape(-1, channels).T
    if channels == 1:
        warnings.warn(f"{path}: mono file duplicated to stereo", stacklevel=2)
        x = np.vstack([x, x])
    return AudioClip(np.ascontiguousarray(x), rate)


def save_wav(clip: AudioClip, path, encoding="pcm16"):
    """Write a stereo clip as 16-bit PCM (``"pcm16"``) or 32-bit float (``"float32"``)."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if encoding == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, bits = _FORMAT_PCM, 16
    elif encoding == "float32":
        q = x.astype("<f4")
        tag, bits = _FORMAT_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    payload = q.T.tobytes()
    channels = x.shape[0]
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, clip.sample_rate_hz,
                      clip.sample_rate_hz * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\0"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
