"""Low-pass IIR filter design, realization as biquad cascades, and filtering.

Analog prototypes are computed from first principles (Butterworth and
Chebyshev-I closed forms, Bessel from reverse Bessel polynomial roots,
elliptic via Landen-transform evaluation of the Jacobi functions), mapped
to the z-plane with a prewarped bilinear transform and paired into
second-order sections.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import sosfilt

from .audio import AudioClip

DB_FLOOR = -300.0
DEFAULT_CUTOFF_HZ = 11025.0
DEFAULT_SAMPLE_RATE_HZ = 44100.0
DEFAULT_RIPPLE_DB = 0.05
DEFAULT_STOPBAND_DB = 110.0

_EPS = np.finfo(float).eps


class FilterDesignError(ValueError):
    """Raised for invalid filter parameters or a failed realization."""


class Family(str, enum.Enum):
    BUTTERWORTH = "Butterworth"
    CHEBYSHEV1 = "Chebyshev1"
    BESSEL = "Bessel"
    ELLIPTIC = "Elliptic"

    @classmethod
    def parse(cls, name: str | Family) -> Family:
        if isinstance(name, Family):
            return name
        key = name.strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "butterworth": cls.BUTTERWORTH,
            "butter": cls.BUTTERWORTH,
            "chebyshev1": cls.CHEBYSHEV1,
            "cheby1": cls.CHEBYSHEV1,
            "bessel": cls.BESSEL,
            "elliptic": cls.ELLIPTIC,
            "ellip": cls.ELLIPTIC,
        }
        try:
            return aliases[key]
        except KeyError:
            raise FilterDesignError(f"unknown filter family {name!r}") from None


@dataclass(frozen=True)
class FilterSpec:
    """Description of a digital low-pass filter.

    ``passband_ripple_db`` is required for Chebyshev1 and Elliptic filters,
    ``stopband_atten_db`` for Elliptic only; both must be ``None`` otherwise.
    ``bessel_norm`` selects ``"phase"`` (default) or ``"mag"`` normalization
    and is ignored by the other families.
    """

    family: Family
    order: int
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    passband_ripple_db: float | None = None
    stopband_atten_db: float | None = None
    bessel_norm: str = "phase"

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if int(self.order) != self.order or self.order < 1:
            raise FilterDesignError(f"order must be a positive integer, got {self.order}")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise FilterDesignError(
                f"cutoff {self.cutoff_hz} Hz must lie strictly inside (0, {self.sample_rate_hz / 2}) Hz"
            )
        needs_rp = self.family in (Family.CHEBYSHEV1, Family.ELLIPTIC)
        needs_rs = self.family is Family.ELLIPTIC
        _check_ripple("passband_ripple_db", self.passband_ripple_db, needs_rp)
        _check_ripple("stopband_atten_db", self.stopband_atten_db, needs_rs)
        if self.bessel_norm not in ("phase", "mag"):
            raise FilterDesignError(f"bessel_norm must be 'phase' or 'mag', got {self.bessel_norm!r}")

    @classmethod
    def make(cls, family, order, cutoff_hz=DEFAULT_CUTOFF_HZ, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ, **kw):
        """Build a spec, filling the family's default ripple parameters."""
        family = Family.parse(family)
        if family in (Family.CHEBYSHEV1, Family.ELLIPTIC):
            kw.setdefault("passband_ripple_db", DEFAULT_RIPPLE_DB)
        if family is Family.ELLIPTIC:
            kw.setdefault("stopband_atten_db", DEFAULT_STOPBAND_DB)
        return cls(family, int(order), float(cutoff_hz), float(sample_rate_hz), **kw)

    @property
    def label(self) -> str:
        return f"{self.family.value}-{self.order}"


def _check_ripple(name, value, required):
    if required:
        if value is None:
            raise FilterDesignError(f"{name} is required for this family")
        if not value > 0:
            raise FilterDesignError(f"{name} must be positive, got {value}")
    elif value is not None:
        raise FilterDesignError(f"{name} is not used by this family")


@dataclass(frozen=True)
class AnalogPrototype:
    zeros: np.ndarray
    poles: np.ndarray
    gain: float

    def response(self, w):
        """Complex response at angular frequencies ``w`` (rad/s)."""
        s = 1j * np.asarray(w, dtype=float)
        num = np.prod(s[..., None] - self.zeros, axis=-1) if len(self.zeros) else 1.0
        den = np.prod(s[..., None] - self.poles, axis=-1)
        return self.gain * num / den


@dataclass(frozen=True)
class SosCascade:
    """Cascade of biquads; ``sections`` is an ``(n, 6)`` array of ``b0 b1 b2 1 a1 a2``."""

    sections: np.ndarray
    spec: FilterSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        sos = np.array(self.sections, dtype=np.float64).reshape(-1, 6)
        if np.any(sos[:, 3] != 1.0):
            raise FilterDesignError("denominators must be normalized so that a0 == 1")
        sos.setflags(write=False)
        object.__setattr__(self, "sections", sos)

    @classmethod
    def identity(cls) -> SosCascade:
        return cls(np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]))

    def __len__(self):
        return len(self.sections)

    def pole_radii(self) -> np.ndarray:
        radii = []
        for sec in self.sections:
            roots = np.roots(sec[3:]) if np.any(sec[4:] != 0) else np.zeros(0)
            radii.append(np.max(np.abs(roots)) if roots.size else 0.0)
        return np.array(radii)

    def is_stable(self) -> bool:
        return bool(np.all(self.pole_radii() < 1.0))

    @property
    def label(self) -> str:
        return self.spec.label if self.spec is not None else "custom"


# -- Jacobi elliptic machinery (arguments normalized by the quarter period K) --

def _landen(k):
    """Descending Landen moduli of ``k`` until they vanish in double precision."""
    moduli = []
    kc = math.sqrt((1.0 - k) * (1.0 + k))
    while k > _EPS ** 2:
        k = (k / (1.0 + kc)) ** 2
        kc = math.sqrt((1.0 - k) * (1.0 + k))
        moduli.append(k)
        if len(moduli) > 64:
            raise FilterDesignError("Landen iteration did not converge")
    return moduli


def _ellipk_pair(k):
    """Return ``(K(k), K'(k))`` via the arithmetic-geometric mean.

    Both complete integrals are computed from the modulus and its
    complement directly, so neither loses accuracy when ``k`` is tiny.
    """
    kc = math.sqrt((1.0 - k) * (1.0 + k))
    return math.pi / (2.0 * _agm(1.0, kc)), math.pi / (2.0 * _agm(1.0, k))


def _agm(a, b):
    for _ in range(64):
        if abs(a - b) <= 1e-16 * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return a


def _cde(u, k):
    """cd(u*K, k) for complex ``u`` by ascending Landen transformations."""
    w = np.cos(np.asarray(u, dtype=complex) * np.pi / 2)
    for v in reversed(_landen(k)):
        w = (1 + v) * w / (1 + v * w ** 2)
    return w


def _sne(u, k):
    """sn(u*K, k) for complex ``u``."""
    w = np.sin(np.asarray(u, dtype=complex) * np.pi / 2)
    for v in reversed(_landen(k)):
        w = (1 + v) * w / (1 + v * w ** 2)
    return w


def _srem(x, y):
    return x - y * np.round(x / y)


def _acde(w, k):
    """Inverse of :func:`_cde`, normalized to the fundamental period rectangle."""
    w = np.asarray(w, dtype=complex)
    prev = k
    for v in _landen(k):
        w = w / (1 + np.sqrt(1 - w ** 2 * prev ** 2)) * 2 / (1 + v)
        prev = v
    u = 2 / np.pi * np.arccos(w)
    K, Kp = _ellipk_pair(k)
    return _srem(u.real, 4) + 1j * _srem(u.imag, 2 * Kp / K)


def _asne(w, k):
    return 1 - _acde(w, k)


def _ellipdeg(order, k1):
    """Solve the degree equation for the selectivity modulus via the nome."""
    K1, K1p = _ellipk_pair(k1)
    q = math.exp(-math.pi * K1p / K1 / order)
    num = sum(q ** (m * (m + 1)) for m in range(0, 12))
    den = 1 + 2 * sum(q ** (m * m) for m in range(1, 12))
    return 4 * math.sqrt(q) * (num / den) ** 2


def elliptic_selectivity(order: int, rp: float, rs: float) -> float:
    """Ratio of passband to stopband edge (``k``) for an elliptic design."""
    ep = math.sqrt(10 ** (rp / 10) - 1)
    es = math.sqrt(10 ** (rs / 10) - 1)
    return _ellipdeg(order, ep / es)


# -- analog prototypes --

def _butterworth(order):
    m = np.arange(-order + 1, order, 2)
    poles = -np.exp(1j * np.pi * m / (2 * order))
    return np.zeros(0, complex), poles, 1.0


def _chebyshev1(order, rp):
    eps = math.sqrt(10 ** (rp / 10) - 1)
    mu = math.asinh(1 / eps) / order
    theta = np.pi * (2 * np.arange(1, order + 1) - 1) / (2 * order)
    poles = -math.sinh(mu) * np.sin(theta) + 1j * math.cosh(mu) * np.cos(theta)
    gain = np.prod(-poles).real
    if order % 2 == 0:
        gain /= math.sqrt(1 + eps ** 2)
    return np.zeros(0, complex), poles, gain


def _reverse_bessel_coeffs(order):
    """Coefficients of the reverse Bessel polynomial, highest power first."""
    n = order
    return [
        math.factorial(2 * n - k) // (2 ** (n - k) * math.factorial(k) * math.factorial(n - k))
        for k in range(n, -1, -1)
    ]


def _polish_roots(coeffs, roots, iters=8):
    c = np.array(coeffs, dtype=float)
    dc = np.polyder(c)
    for _ in range(iters):
        step = np.polyval(c, roots) / np.polyval(dc, roots)
        roots = roots - step
    return roots


def _bessel(order, norm):
    coeffs = _reverse_bessel_coeffs(order)
    poles = _polish_roots(coeffs, np.roots(np.array(coeffs, dtype=float)))
    # phase normalization: scale so the monic polynomial has unit constant term
    poles = poles / coeffs[-1] ** (1.0 / order)
    if norm == "mag":
        poles = poles / _unit_magnitude_frequency(poles)
    poles = _enforce_conjugates(poles)
    return np.zeros(0, complex), poles, float(np.prod(-poles).real)


def _unit_magnitude_frequency(poles):
    """Frequency where the all-pole, unit-DC-gain response reaches -3.0103 dB."""
    dc = np.prod(-poles).real

    def excess(w):
        return np.abs(dc / np.prod(1j * w - poles)) ** 2 - 0.5

    lo, hi = 0.0, 1.0
    while excess(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def _elliptic(order, rp, rs):
    if rs <= rp:
        raise FilterDesignError(f"elliptic design needs rs > rp (got rp={rp}, rs={rs})")
    ep = math.sqrt(10 ** (rp / 10) - 1)
    es = math.sqrt(10 ** (rs / 10) - 1)
    k1 = ep / es
    k = _ellipdeg(order, k1)
    half, odd = divmod(order, 2)
    u = (2 * np.arange(1, half + 1) - 1) / order
    zeta = _cde(u, k)
    zeros = 1j / (k * zeta)
    v0 = (-1j * _asne(1j / ep, k1) / order).real
    poles = 1j * _cde(u - 1j * v0, k)
    zeros = np.concatenate([zeros, np.conj(zeros)])
    poles = np.concatenate([poles, np.conj(poles)])
    if odd:
        p0 = 1j * _sne(1j * v0, k)
        poles = np.append(poles, p0.real)
    h0 = 1.0 if odd else 1 / math.sqrt(1 + ep ** 2)
    gain = h0 * (np.prod(-poles) / np.prod(-zeros)).real
    return zeros, poles, gain


def _enforce_conjugates(roots, tol=1e-10):
    roots = np.asarray(roots, dtype=complex).copy()
    real = np.abs(roots.imag) <= tol * np.maximum(1.0, np.abs(roots))
    roots[real] = roots[real].real
    return roots


def analog_prototype(family, order: int, passband_ripple_db=None, stopband_atten_db=None,
                     bessel_norm: str = "phase") -> AnalogPrototype:
    """Unit-cutoff analog low-pass prototype.

    The cutoff is the -3 dB point for Butterworth (and magnitude-normalized
    Bessel), the passband edge for Chebyshev1 and Elliptic, and the phase
    midpoint for phase-normalized Bessel.
    """
    family = Family.parse(family)
    if int(order) != order or order < 1:
        raise FilterDesignError(f"order must be a positive integer, got {order}")
    if family in (Family.CHEBYSHEV1, Family.ELLIPTIC):
        _check_ripple("passband_ripple_db", passband_ripple_db, True)
    if family is Family.ELLIPTIC:
        _check_ripple("stopband_atten_db", stopband_atten_db, True)

    if family is Family.BUTTERWORTH:
        z, p, k = _butterworth(order)
    elif family is Family.CHEBYSHEV1:
        z, p, k = _chebyshev1(order, passband_ripple_db)
    elif family is Family.BESSEL:
        z, p, k = _bessel(order, bessel_norm)
    else:
        z, p, k = _elliptic(order, passband_ripple_db, stopband_atten_db)
    p = _enforce_conjugates(p)
    if np.any(p.real >= 0):
        raise FilterDesignError("prototype has a pole outside the open left half plane")
    return AnalogPrototype(np.asarray(z, complex), p, float(k))


# -- digital realization --

def _bilinear(proto: AnalogPrototype, warped):
    """Map a unit-cutoff prototype to the z-plane, cutoff at ``tan(pi fc / fs)``."""
    z = proto.zeros * warped
    p = proto.poles * warped
    k = proto.gain * warped ** (len(p) - len(z))
    zd = (1 + z) / (1 - z)
    pd = (1 + p) / (1 - p)
    k = k * np.real(np.prod(1 - z) / np.prod(1 - p))
    zd = np.append(zd, -np.ones(len(p) - len(z)))
    return _enforce_conjugates(zd), _enforce_conjugates(pd), float(k)


def _split(roots):
    """Upper-half-plane members of conjugate pairs, and the real roots."""
    cplx = [r for r in roots if r.imag > 0]
    real = [r.real for r in roots if r.imag == 0]
    n_lower = sum(1 for r in roots if r.imag < 0)
    if n_lower != len(cplx):
        raise FilterDesignError("complex roots are not in conjugate pairs")
    return cplx, real


def _pop_nearest(pool, target):
    i = int(np.argmin([abs(r - target) for r in pool]))
    return pool.pop(i)


def _pair_sections(zeros, poles):
    cz, rz = _split(zeros)
    cp, rp = _split(poles)
    groups = [(r, True) for r in cp]
    rp = sorted(rp, key=abs, reverse=True)
    while len(rp) >= 2:
        groups.append(((rp.pop(0), rp.pop(0)), False))
    if rp:
        groups.append(((rp.pop(0),), False))

    def radius(group):
        roots, is_cplx = group
        return abs(roots) if is_cplx else max(abs(r) for r in roots)

    # closest-to-unit-circle poles choose their zeros first
    groups.sort(key=radius, reverse=True)
    sections = []
    for roots, is_cplx in groups:
        pole_set = [roots, np.conj(roots)] if is_cplx else list(roots)
        anchor = roots if is_cplx else roots[0]
        want = len(pole_set)
        zero_set = []
        if want == 2 and cz:
            z = _pop_nearest(cz, anchor)
            zero_set = [z, np.conj(z)]
        else:
            while len(zero_set) < want and rz:
                zero_set.append(_pop_nearest(rz, anchor))
        sections.append((zero_set, pole_set, radius((roots, is_cplx))))
    if cz or rz:
        raise FilterDesignError("root pairing failed: zeros left over after pairing")
    sections.sort(key=lambda s: s[2])
    return [(z, p) for z, p, _ in sections]


def _poly3(roots):
    c = np.real(np.poly(roots)) if len(roots) else np.array([1.0])
    return np.pad(c, (0, 3 - len(c)))


def design_lowpass(spec: FilterSpec) -> SosCascade:
    """Realize ``spec`` as a cascade of biquads.

    Sections are ordered by ascending pole radius; the overall gain sits in
    the numerator of the first section.
    """
    proto = analog_prototype(spec.family, spec.order, spec.passband_ripple_db,
                             spec.stopband_atten_db, spec.bessel_norm)
    warped = math.tan(math.pi * spec.cutoff_hz / spec.sample_rate_hz)
    zd, pd, k = _bilinear(proto, warped)
    rows = []
    for zs, ps in _pair_sections(zd, pd):
        rows.append(np.concatenate([_poly3(zs), _poly3(ps)]))
    sos = np.array(rows)
    sos[0, :3] *= k
    if not np.all(np.isfinite(sos)):
        raise FilterDesignError(f"non-finite coefficients designing {spec.label}")
    cascade = SosCascade(sos, spec)
    if not cascade.is_stable():
        raise FilterDesignError(f"designed {spec.label} cascade is unstable")
    return cascade


def stopband_edge_hz(spec: FilterSpec) -> float:
    """Digital frequency beyond which an elliptic design stays below ``-rs``."""
    if spec.family is not Family.ELLIPTIC:
        raise FilterDesignError("stopband edge is only defined for elliptic filters")
    k = elliptic_selectivity(spec.order, spec.passband_ripple_db, spec.stopband_atten_db)
    warped = math.tan(math.pi * spec.cutoff_hz / spec.sample_rate_hz)
    return spec.sample_rate_hz / math.pi * math.atan(warped / k)


def frequency_response(cascade: SosCascade, freqs_hz, sample_rate_hz) -> np.ndarray:
    """Complex response of the cascade at the given frequencies."""
    f = np.asarray(freqs_hz, dtype=float)
    nyq = sample_rate_hz / 2
    if np.any(f < 0) or np.any(f > nyq):
        raise FilterDesignError(f"query frequencies must lie in [0, {nyq}] Hz")
    zinv = np.exp(-2j * np.pi * f / sample_rate_hz)
    h = np.ones_like(zinv)
    for b0, b1, b2, _, a1, a2 in cascade.sections:
        h *= (b0 + zinv * (b1 + zinv * b2)) / (1 + zinv * (a1 + zinv * a2))
    return h


def to_db(magnitude) -> np.ndarray:
    """20 log10 of a magnitude with exact nulls mapped to ``DB_FLOOR``."""
    mag = np.abs(np.asarray(magnitude, dtype=float))
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag)
    return np.maximum(db, DB_FLOOR)


def magnitude_response(cascade: SosCascade, freqs_hz, sample_rate_hz) -> np.ndarray:
    return to_db(np.abs(frequency_response(cascade, freqs_hz, sample_rate_hz)))


def filter_array(cascade: SosCascade, samples: np.ndarray) -> np.ndarray:
    """Causal filtering along the last axis with zero initial state."""
    x = np.asarray(samples, dtype=np.float64)
    return sosfilt(np.array(cascade.sections), x, axis=-1)


def apply_filter(cascade: SosCascade, clip: AudioClip) -> AudioClip:
    if clip.num_samples == 0:
        raise FilterDesignError("cannot filter an empty clip")
    return AudioClip(filter_array(cascade, clip.samples), clip.sample_rate_hz)


class Setting(str, enum.Enum):
    SINGLE_FILTER = "single"
    MULTI_FILTER = "multi"

    @classmethod
    def parse(cls, value: str | Setting) -> Setting:
        if isinstance(value, Setting):
            return value
        key = value.strip().lower().replace("-", "").replace("_", "")
        if key in ("single", "singlefilter"):
            return cls.SINGLE_FILTER
        if key in ("multi", "multifilter"):
            return cls.MULTI_FILTER
        raise ValueError(f"unknown augmentation setting {value!r}")


_MULTI_BANK = (
    (Family.CHEBYSHEV1, 6),
    (Family.CHEBYSHEV1, 8),
    (Family.CHEBYSHEV1, 10),
    (Family.CHEBYSHEV1, 12),
    (Family.BESSEL, 6),
    (Family.BESSEL, 12),
    (Family.ELLIPTIC, 6),
    (Family.ELLIPTIC, 12),
)


def training_filter_bank(setting, cutoff_hz=DEFAULT_CUTOFF_HZ,
                         sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ) -> list[FilterSpec]:
    """Training filters: Chebyshev1-6 alone, or the eight-filter augmentation bank."""
    setting = Setting.parse(setting)
    bank = _MULTI_BANK[:1] if setting is Setting.SINGLE_FILTER else _MULTI_BANK
    return [FilterSpec.make(f, n, cutoff_hz, sample_rate_hz) for f, n in bank]


def unseen_filter(cutoff_hz=DEFAULT_CUTOFF_HZ, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ) -> FilterSpec:
    return FilterSpec.make(Family.BUTTERWORTH, 6, cutoff_hz, sample_rate_hz)


def seen_test_filter(cutoff_hz=DEFAULT_CUTOFF_HZ, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ) -> FilterSpec:
    """The one filter shared by both training settings, used for seen-filter tests."""
    return FilterSpec.make(Family.CHEBYSHEV1, 6, cutoff_hz, sample_rate_hz)
