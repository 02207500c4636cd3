"""Training pairs, validation excerpts and a synthetic desk-scale corpus.

Real corpora are described by a manifest: a text file with one
``split<TAB>path`` line per WAV file. Relative paths resolve against the
manifest's own directory.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE_HZ, AudioClip, WavError, load_wav, save_wav
from .filters import (
    FilterSpec,
    Setting,
    SosCascade,
    design_lowpass,
    filter_array,
    training_filter_bank,
    unseen_filter,
)

log = logging.getLogger(__name__)

CHUNK_LEN = 8192
HIGH_BAND_HZ = 11025.0


class DataError(ValueError):
    pass


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"

    @classmethod
    def parse(cls, value) -> Split:
        if isinstance(value, Split):
            return value
        key = str(value).strip().lower()
        aliases = {"train": cls.TRAIN, "training": cls.TRAIN, "validation": cls.VALIDATION,
                   "valid": cls.VALIDATION, "val": cls.VALIDATION, "test": cls.TEST}
        if key not in aliases:
            raise DataError(f"unknown split {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class ManifestEntry:
    split: Split
    path: Path
    num_samples: int | None = None

    @property
    def duration_s(self) -> float | None:
        return None if self.num_samples is None else self.num_samples / SAMPLE_RATE_HZ


class DatasetManifest:
    """Split-tagged list of WAV files with a per-manifest clip cache."""

    def __init__(self, entries, source: Path | None = None):
        self.entries = list(entries)
        self.source = source
        self._cache: dict[Path, AudioClip] = {}
        self.check_disjoint()

    def __len__(self):
        return len(self.entries)

    def check_disjoint(self):
        owner = {}
        for e in self.entries:
            key = e.path.resolve()
            if owner.setdefault(key, e.split) != e.split:
                raise DataError(f"{e.path} is listed in both {owner[key].value} and {e.split.value}")

    def split(self, split) -> DatasetManifest:
        split = Split.parse(split)
        sub = DatasetManifest([e for e in self.entries if e.split is split], self.source)
        sub._cache = self._cache
        return sub

    def paths(self) -> list[Path]:
        return [e.path for e in self.entries]

    def clip(self, index: int) -> AudioClip:
        path = self.entries[index].path
        if path not in self._cache:
            self._cache[path] = load_wav(path)
        return self._cache[path]

    def clips(self) -> list[AudioClip]:
        return [self.clip(i) for i in range(len(self.entries))]

    @classmethod
    def read(cls, path) -> DatasetManifest:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'split<TAB>path'")
            split, file = parts[0], Path(parts[1].strip())
            if not file.is_absolute():
                file = path.parent / file
            try:
                entries.append(ManifestEntry(Split.parse(split), file))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        return cls(entries, path)

    def write(self, path):
        path = Path(path)
        lines = []
        for e in self.entries:
            try:
                shown = e.path.relative_to(path.parent)
            except ValueError:
                shown = e.path
            lines.append(f"{e.split.value}\t{shown.as_posix()}")
        path.write_text("\n".join(lines) + "\n")


@dataclass
class AugmentationPolicy:
    """Filters used to make band-limited training inputs."""

    setting: Setting
    specs: list[FilterSpec]
    cascades: list[SosCascade] = field(repr=False, default_factory=list)

    def __post_init__(self):
        self.setting = Setting.parse(self.setting)
        if not self.cascades:
            self.cascades = [design_lowpass(s) for s in self.specs]
        expected = 1 if self.setting is Setting.SINGLE_FILTER else 8
        if len(self.specs) != expected:
            raise DataError(f"{self.setting.value} setting needs {expected} filters, got {len(self.specs)}")

    @classmethod
    def from_setting(cls, setting) -> AugmentationPolicy:
        return cls(Setting.parse(setting), training_filter_bank(setting))

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.specs]


@dataclass(frozen=True)
class Draw:
    file_index: int
    offset: int
    filter_index: int


def _eligible(manifest: DatasetManifest, chunk_len: int) -> list[int]:
    ok = [i for i in range(len(manifest)) if manifest.clip(i).num_samples >= chunk_len]
    if not ok:
        raise DataError(f"no training file has at least {chunk_len} samples")
    return ok


def draw_training_example(manifest, policy: AugmentationPolicy, rng: np.random.Generator,
                          chunk_len=CHUNK_LEN):
    """One ``(input, target, draw)`` with ``(2, chunk_len)`` float arrays.

    File, offset and filter are each uniform; files shorter than the chunk
    are skipped.
    """
    eligible = _eligible(manifest, chunk_len)
    file_index = eligible[int(rng.integers(len(eligible)))]
    clip = manifest.clip(file_index)
    offset = int(rng.integers(clip.num_samples - chunk_len + 1))
    filter_index = int(rng.integers(len(policy.cascades)))
    target = clip.samples[:, offset:offset + chunk_len]
    source = filter_array(policy.cascades[filter_index], target)
    log.debug("draw file=%s offset=%d filter=%s", manifest.entries[file_index].path.name,
              offset, policy.specs[filter_index].label)
    return source, np.array(target, dtype=np.float64), Draw(file_index, offset, filter_index)


def sample_training_pair(manifest, policy, rng, chunk_len=CHUNK_LEN):
    """Tensor-shaped ``(1, 2, chunk_len)`` input and target."""
    from .autograd import Tensor

    source, target, _ = draw_training_example(manifest, policy, rng, chunk_len)
    return Tensor(source[None].astype(np.float32)), Tensor(target[None].astype(np.float32))


def sample_batch(manifest, policy, rng, batch_size, chunk_len=CHUNK_LEN, dtype=np.float32):
    inputs, targets, draws = [], [], []
    for _ in range(batch_size):
        x, y, d = draw_training_example(manifest, policy, rng, chunk_len)
        inputs.append(x)
        targets.append(y)
        draws.append(d)
    return np.stack(inputs).astype(dtype), np.stack(targets).astype(dtype), draws


@dataclass
class Excerpt:
    name: str
    filter_label: str
    source: np.ndarray
    target: np.ndarray


def validation_excerpts(clips, filters, names=None, start_s=8.0, length_s=8.0,
                        sample_rate_hz=SAMPLE_RATE_HZ) -> list[Excerpt]:
    """Band-limited/full-band excerpt pairs ``[start_s, start_s + length_s)``.

    A single filter is applied to every song; with several, song ``i`` gets
    filter ``i`` (cycling when there are more songs than filters).
    """
    filters = list(filters)
    if not filters:
        raise DataError("validation needs at least one filter")
    cascades = [f if isinstance(f, SosCascade) else design_lowpass(f) for f in filters]
    start = int(round(start_s * sample_rate_hz))
    stop = start + int(round(length_s * sample_rate_hz))
    names = names or [f"song{i:02d}" for i in range(len(clips))]
    out = []
    for i, clip in enumerate(clips):
        if clip.num_samples < stop:
            raise DataError(f"{names[i]}: {clip.num_samples} samples, excerpt needs {stop}")
        cascade = cascades[i % len(cascades)]
        target = np.array(clip.samples[:, start:stop], dtype=np.float64)
        out.append(Excerpt(names[i], cascade.label, filter_array(cascade, target), target))
    return out


@dataclass
class ValidationSet:
    seen: list[Excerpt]
    unseen: list[Excerpt]


def build_validation_set(manifest: DatasetManifest, policy: AugmentationPolicy,
                         start_s=8.0, length_s=8.0) -> ValidationSet:
    clips = manifest.clips()
    names = [p.stem for p in manifest.paths()]
    seen = validation_excerpts(clips, policy.cascades, names, start_s, length_s)
    unseen = validation_excerpts(clips, [unseen_filter()], names, start_s, length_s)
    return ValidationSet(seen, unseen)


# -- synthetic corpus --

@dataclass
class SyntheticSpec:
    train_clips: int = 100
    validation_clips: int = 8
    test_clips: int = 20
    clip_seconds: float = 3.0
    # long enough for [8 s, 16 s) validation excerpts
    validation_seconds: float = 16.0
    min_partials: int = 4
    max_partials: int = 12
    f0_range_hz: tuple[float, float] = (80.0, 1000.0)
    max_partial_hz: float = 20000.0
    min_high_band_fraction: float = 0.08
    # partial amplitude ~ harmonic_number ** -amplitude_decay
    amplitude_decay: float = 1.5
    noise_db: float = -40.0
    peak: float = 0.9
    sample_rate_hz: int = SAMPLE_RATE_HZ


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-RMS noise with a 1/f power spectrum, shaped in the frequency domain."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spectrum.size, dtype=float)
    f[0] = 1.0
    spectrum /= np.sqrt(f)
    spectrum[0] = 0.0
    x = np.fft.irfft(spectrum, n)
    return x / np.sqrt(np.mean(x ** 2))


def synth_clip(rng: np.random.Generator, num_samples: int, spec: SyntheticSpec) -> np.ndarray:
    """A stereo harmonic tone with some partials above the high-band edge, plus pink noise."""
    fs = spec.sample_rate_hz
    f0 = rng.uniform(*spec.f0_range_hz)
    top = int(spec.max_partial_hz // f0)
    first_high = int(HIGH_BAND_HZ // f0) + 1
    count = int(rng.integers(spec.min_partials, spec.max_partials + 1))
    n_high = max(1, count // 4)
    low = rng.choice(np.arange(2, first_high), size=min(count - 1 - n_high, first_high - 2),
                     replace=False)
    high = rng.choice(np.arange(first_high, top + 1), size=min(n_high, top + 1 - first_high),
                      replace=False)
    harmonics = np.concatenate([[1], np.sort(low), np.sort(high)]).astype(int)
    amps = rng.uniform(0.3, 1.0, harmonics.size) * harmonics.astype(float) ** -spec.amplitude_decay
    is_high = harmonics * f0 > HIGH_BAND_HZ
    e_high, e_all = np.sum(amps[is_high] ** 2), np.sum(amps ** 2)
    want = spec.min_high_band_fraction
    if e_high / e_all < want:
        # solve g^2 e_high / (g^2 e_high + e_low) = want for the high-band gain g
        e_low = e_all - e_high
        amps[is_high] *= np.sqrt(want * e_low / ((1 - want) * e_high))

    t = np.arange(num_samples) / fs
    out = np.zeros((2, num_samples))
    for h, a in zip(harmonics, amps):
        pan = rng.uniform(0.25, 0.75)
        phases = rng.uniform(0, 2 * np.pi, 2)
        tone = 2 * np.pi * h * f0 * t
        out[0] += a * np.sqrt(2 * (1 - pan)) * np.sin(tone + phases[0])
        out[1] += a * np.sqrt(2 * pan) * np.sin(tone + phases[1])
    rms = np.sqrt(np.mean(out ** 2))
    noise_gain = rms * 10 ** (spec.noise_db / 20)
    out += noise_gain * np.stack([pink_noise(rng, num_samples), pink_noise(rng, num_samples)])
    return out * (spec.peak / np.max(np.abs(out)))


def generate_synthetic_dataset(out_dir, spec: SyntheticSpec | None = None, seed=0) -> DatasetManifest:
    """Write a seeded synthetic corpus as 16-bit WAV plus ``manifest.tsv``."""
    spec = spec or SyntheticSpec()
    out_dir = Path(out_dir)
    plan = [(Split.TRAIN, spec.train_clips, spec.clip_seconds),
            (Split.VALIDATION, spec.validation_clips, spec.validation_seconds),
            (Split.TEST, spec.test_clips, spec.clip_seconds)]
    children = iter(np.random.SeedSequence(seed).spawn(sum(n for _, n, _ in plan)))
    entries = []
    try:
        for split, count, seconds in plan:
            (out_dir / split.value).mkdir(parents=True, exist_ok=True)
            n = int(round(seconds * spec.sample_rate_hz))
            for i in range(count):
                rng = np.random.default_rng(next(children))
                path = out_dir / split.value / f"{split.value}_{i:03d}.wav"
                save_wav(AudioClip(synth_clip(rng, n, spec), spec.sample_rate_hz), path)
                entries.append(ManifestEntry(split, path, n))
    except OSError as exc:
        raise DataError(f"cannot write synthetic corpus under {out_dir}: {exc}") from exc
    manifest = DatasetManifest(entries, out_dir / "manifest.tsv")
    manifest.write(out_dir / "manifest.tsv")
    return manifest


def high_band_fraction(samples: np.ndarray, sample_rate_hz=SAMPLE_RATE_HZ, edge_hz=HIGH_BAND_HZ) -> float:
    """Share of signal energy above ``edge_hz``, both channels pooled."""
    spectrum = np.abs(np.fft.rfft(np.asarray(samples, dtype=float), axis=-1)) ** 2
    freqs = np.fft.rfftfreq(np.shape(samples)[-1], 1.0 / sample_rate_hz)
    return float(spectrum[..., freqs > edge_hz].sum() / spectrum.sum())


__all__ = [
    "AugmentationPolicy", "CHUNK_LEN", "DataError", "DatasetManifest", "Draw", "Excerpt",
    "ManifestEntry", "Split", "SyntheticSpec", "ValidationSet", "WavError",
    "build_validation_set", "draw_training_example", "generate_synthetic_dataset",
    "high_band_fraction", "pink_noise", "sample_batch", "sample_training_pair", "synth_clip",
    "validation_excerpts",
]
