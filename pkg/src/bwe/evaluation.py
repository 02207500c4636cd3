"""SNR measurement, song-level chunked inference, split reports and spectrograms."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .audio import AudioClip, WavError
from .autograd import Tensor
from .data import CHUNK_LEN, DatasetManifest
from .filters import DB_FLOOR, SosCascade, design_lowpass, filter_array

log = logging.getLogger(__name__)

WINDOW = 1024
HOP = 512
PGM_RANGE_DB = (-100.0, 0.0)
REPORT_COLUMNS = ["song_id", "condition", "input_snr_db", "output_snr_db", "delta_snr_db"]


class EvaluationError(ValueError):
    pass


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, AudioClip) else x, dtype=np.float64)


def snr(reference, estimate) -> float:
    """``10 log10(|x|^2 / |x - x_hat|^2)`` over all channels jointly; ``inf`` for an exact match."""
    x, y = _samples(reference), _samples(estimate)
    if x.shape != y.shape:
        raise EvaluationError(f"snr: shape mismatch {x.shape} vs {y.shape}")
    signal = float(np.sum(x * x))
    if signal == 0.0:
        raise EvaluationError("snr: reference is all zeros")
    err = x - y
    noise = float(np.sum(err * err))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / noise)


def exact_mean(values) -> float:
    """Correctly rounded arithmetic mean; ``inf`` if any value is infinite."""
    values = list(values)
    if not values:
        return math.nan
    if any(math.isinf(v) or math.isnan(v) for v in values):
        return float(np.mean(values))
    return float(sum(Fraction(v) for v in values) / len(values))


def chunked_inference(net, song, chunk_len=CHUNK_LEN, max_batch=16) -> np.ndarray:
    """Run ``net`` in eval mode over non-overlapping chunks and stitch the outputs.

    The last chunk is zero-padded to ``chunk_len``; the result is cropped
    back to the song length. The network's mode is restored afterwards.
    """
    x = np.asarray(song.samples if isinstance(song, AudioClip) else song)
    n = x.shape[-1]
    if n == 0:
        raise EvaluationError("chunked_inference: empty song")
    chunks = -(-n // chunk_len)
    padded = np.zeros((2, chunks * chunk_len), dtype=net.dtype)
    padded[:, :n] = x
    batch = padded.reshape(2, chunks, chunk_len).transpose(1, 0, 2)
    was_training = net.training
    net.eval()
    try:
        outs = [net(Tensor(np.ascontiguousarray(batch[i:i + max_batch]))).data
                for i in range(0, chunks, max_batch)]
    finally:
        net.training = was_training
    y = np.concatenate(outs).transpose(1, 0, 2).reshape(2, chunks * chunk_len)
    return np.ascontiguousarray(y[:, :n])


@dataclass
class SongRow:
    song_id: str
    condition: str
    input_snr_db: float
    output_snr_db: float

    @property
    def delta_snr_db(self) -> float:
        if math.isinf(self.input_snr_db) and self.input_snr_db == self.output_snr_db:
            return 0.0
        return self.output_snr_db - self.input_snr_db


@dataclass
class EvalReport:
    condition: str
    rows: list[SongRow]
    skipped: list[str] = field(default_factory=list)

    @property
    def mean_input_snr_db(self) -> float:
        return exact_mean(r.input_snr_db for r in self.rows)

    @property
    def mean_output_snr_db(self) -> float:
        return exact_mean(r.output_snr_db for r in self.rows)

    @property
    def mean_delta_snr_db(self) -> float:
        return exact_mean(r.delta_snr_db for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r.song_id, r.condition, _fmt(r.input_snr_db), _fmt(r.output_snr_db),
                            _fmt(r.delta_snr_db)])
            w.writerow(["MEAN", self.condition, _fmt(self.mean_input_snr_db),
                        _fmt(self.mean_output_snr_db), _fmt(self.mean_delta_snr_db)])
            for name in self.skipped:
                w.writerow([f"# skipped {name}", self.condition, "", "", ""])

    @classmethod
    def read_csv(cls, path) -> tuple[EvalReport, dict[str, float]]:
        """Parse a report; also returns the stored MEAN row for cross-checking."""
        rows, skipped, means, condition = [], [], {}, ""
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                sid = rec["song_id"]
                condition = rec["condition"]
                if sid.startswith("# skipped "):
                    skipped.append(sid[len("# skipped "):])
                elif sid == "MEAN":
                    means = {k: float(rec[k]) for k in REPORT_COLUMNS[2:]}
                else:
                    rows.append(SongRow(sid, condition, float(rec["input_snr_db"]),
                                        float(rec["output_snr_db"])))
        return cls(condition, rows, skipped), means


def _fmt(v: float) -> str:
    # repr round-trips exactly; float("inf") parses the sentinel back
    return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(float(v)))


def evaluate_split(net, manifest: DatasetManifest, condition_filter, condition="seen",
                   chunk_len=CHUNK_LEN) -> EvalReport:
    """Per-song input/output SNR of ``net`` on one filter condition.

    Unreadable files are skipped with a warning and listed in the report.
    """
    if len(manifest) == 0:
        raise EvaluationError("evaluate_split: manifest is empty")
    cascade = condition_filter if isinstance(condition_filter, SosCascade) else design_lowpass(condition_filter)
    rows, skipped = [], []
    for i, entry in enumerate(manifest.entries):
        try:
            clip = manifest.clip(i)
        except (OSError, WavError) as exc:
            log.warning("skipping %s: %s", entry.path, exc)
            skipped.append(entry.path.stem)
            continue
        target = clip.samples
        # the input SNR uses exactly what the network sees
        source = filter_array(cascade, target).astype(net.dtype)
        output = chunked_inference(net, source, chunk_len)
        rows.append(SongRow(entry.path.stem, condition, snr(target, source), snr(target, output)))
    rows.sort(key=lambda r: r.song_id)
    return EvalReport(condition, rows, skipped)


# -- spectrograms --

def hann(n=WINDOW) -> np.ndarray:
    """Periodic Hann window (overlap-adds to a constant at hop n/2)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_count(length, window=WINDOW, hop=HOP) -> int:
    return (length - window) // hop + 1


@dataclass
class Spectrogram:
    """Frame-by-bin magnitudes in dB, rows are frames."""

    db: np.ndarray
    sample_rate_hz: int
    window: int = WINDOW
    hop: int = HOP

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.fft.rfftfreq(self.window, 1.0 / self.sample_rate_hz)

    def write_csv(self, path):
        np.savetxt(path, self.db, delimiter=",", fmt="%.6f",
                   header=",".join(f"{f:.2f}" for f in self.freqs_hz), comments="")

    def write_pgm(self, path, db_range=PGM_RANGE_DB):
        lo, hi = db_range
        scaled = np.clip((self.db - lo) / (hi - lo), 0.0, 1.0)
        # frequency on the vertical axis, high frequencies at the top
        img = np.round(255 * scaled.T[::-1]).astype(np.uint8)
        height, width = img.shape
        Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode() + img.tobytes())


def _magnitudes(clip, window=WINDOW, hop=HOP) -> np.ndarray:
    x = _samples(clip)
    mono = x.mean(axis=0) if x.ndim == 2 else x
    if mono.size < window:
        raise EvaluationError(f"spectrogram needs at least {window} samples, got {mono.size}")
    w = hann(window)
    frames = np.lib.stride_tricks.sliding_window_view(mono, window)[::hop]
    # 2/sum(w) makes a full-scale sine read 0 dB
    return np.abs(np.fft.rfft(frames * w, axis=-1)) * (2.0 / w.sum())


def _to_db(mag) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(20 * np.log10(mag), DB_FLOOR)


def spectrogram(clip, sample_rate_hz=None) -> Spectrogram:
    """Hann-1024, hop-512 log-magnitude spectrogram of the channel average."""
    rate = sample_rate_hz or (clip.sample_rate_hz if isinstance(clip, AudioClip) else 44100)
    return Spectrogram(_to_db(_magnitudes(clip)), rate)


def diff_spectrogram(a, b, sample_rate_hz=None) -> Spectrogram:
    """dB of ``|mag_a - mag_b|``, the absolute difference of linear magnitudes."""
    rate = sample_rate_hz or (a.sample_rate_hz if isinstance(a, AudioClip) else 44100)
    ma, mb = _magnitudes(a), _magnitudes(b)
    if ma.shape != mb.shape:
        raise EvaluationError(f"diff_spectrogram: shape mismatch {ma.shape} vs {mb.shape}")
    return Spectrogram(_to_db(np.abs(ma - mb)), rate)
