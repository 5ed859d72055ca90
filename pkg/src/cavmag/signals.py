"""Stimulus and noise synthesis.

Provides the AC bias waveform with optional amplitude/phase noise, the
spin-transition frequency traces it induces, deterministic colored-noise
realizations shaped to a target power spectral density, and the three-tone
orthogonal test field used for calibration.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal as sig

from .constants import TWO_PI, PhysicalConstants, DEFAULT_CONSTANTS
from .geometry import NvBasis, project


# ---------------------------------------------------------------------------
# bias waveform
# ---------------------------------------------------------------------------


@dataclass
class BiasWaveform:
    """Sinusoidal bias field with optional multiplicative noise.

    The evaluated field is Re{ b0_vec (1 + a(t) + i phi(t)) e^{i omega_m t} },
    i.e. b0_vec [ (1 + a(t)) cos(omega_m t) - phi(t) sin(omega_m t) ].

    b0_vec : (3,) amplitude direction*magnitude in tesla (peak, not rms).
    omega_m : modulation frequency (rad/s), > 0.
    amp_noise, phase_noise : optional per-sample series on the waveform's
        own sample grid (sample_rate, duration); dimensionless / radians.
    """

    b0_vec: np.ndarray
    omega_m: float
    sample_rate: float
    duration: float
    amp_noise: Optional[np.ndarray] = None
    phase_noise: Optional[np.ndarray] = None

    def __post_init__(self):
        self.b0_vec = np.asarray(self.b0_vec, dtype=float).reshape(3)
        if self.omega_m <= 0:
            raise ValueError("omega_m must be positive")
        n = self.n_samples
        for name in ("amp_noise", "phase_noise"):
            series = getattr(self, name)
            if series is not None:
                series = np.asarray(series, dtype=float)
                if series.size != n:
                    raise ValueError(f"{name} must match the sample grid ({n} samples)")
                setattr(self, name, series)

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.duration))

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_m

    def sample_indices(self, t_grid: np.ndarray) -> np.ndarray:
        idx = np.round(np.asarray(t_grid) * self.sample_rate).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n_samples):
            raise ValueError("t_grid extends outside the waveform duration")
        return idx


def evaluate_bias(w: BiasWaveform, t_grid: np.ndarray) -> np.ndarray:
    """Evaluate the bias field on a time grid.

    Returns a (3, n) tesla array.  Noise series, when present, are looked up
    at the nearest sample of the waveform's own grid, so t_grid must lie
    within the declared duration.
    """
    t = np.asarray(t_grid, dtype=float)
    c = np.cos(w.omega_m * t)
    s = np.sin(w.omega_m * t)
    scale = c
    if w.amp_noise is not None or w.phase_noise is not None:
        idx = w.sample_indices(t)
        if w.amp_noise is not None:
            scale = (1.0 + w.amp_noise[idx]) * c
        if w.phase_noise is not None:
            scale = scale - w.phase_noise[idx] * s
    return np.outer(w.b0_vec, scale)


# ---------------------------------------------------------------------------
# spin frequency traces
# ---------------------------------------------------------------------------

HYPERFINE_OFFSETS = (-1, 0, +1)


def spin_frequency_traces(
    basis: NvBasis,
    total_field: np.ndarray,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    hyperfine: tuple = HYPERFINE_OFFSETS,
) -> np.ndarray:
    """Transition frequencies for all orientations, transitions and triplet lines.

    For orientation i the pair of transitions sits at D -/+ gamma B.n_i, and
    each is split into lines at m * a_hf for m in `hyperfine`.

    Parameters
    ----------
    basis : NvBasis (in the same frame as total_field).
    total_field : (3,) or (3, n) tesla.
    hyperfine : integer multipliers of a_hf, default (-1, 0, +1).

    Returns
    -------
    (8, len(hyperfine)) or (8, len(hyperfine), n) array of rad/s.  Transition
    index runs (orientation 1 '+', orientation 1 '-', orientation 2 '+', ...),
    where '+' means the branch at D - gamma B.n.
    """
    proj = project(total_field, basis)  # (4,) or (4, n)
    gp = constants.gamma_e * proj
    # transitions: for each orientation, [D - gp, D + gp]
    w_pm = np.stack([constants.d_zfs - gp, constants.d_zfs + gp], axis=1)  # (4,2,...) via axis trick
    w8 = w_pm.reshape((8,) + proj.shape[1:])
    offs = np.asarray(hyperfine, dtype=float) * constants.a_hf
    shape = (8, offs.size) + proj.shape[1:]
    out = np.empty(shape)
    for k, off in enumerate(offs):
        out[:, k, ...] = w8 + off
    return out


def transition_center_traces(
    basis: NvBasis,
    total_field: np.ndarray,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """The 8 hyperfine-free transition traces (rad/s), shape (8,) or (8, n)."""
    return spin_frequency_traces(basis, total_field, constants, hyperfine=(0,))[:, 0, ...]


# ---------------------------------------------------------------------------
# colored noise
# ---------------------------------------------------------------------------


@dataclass
class NoiseSpectrum:
    """One-sided target power spectral density on a frequency grid.

    freqs : strictly increasing Hz grid (all > 0).
    psd : PSD values; dBc/Hz for kind 'amplitude'/'phase' (single-sideband
        convention), or linear SI units for kind 'field' (tesla^2/Hz).
    kind : 'amplitude' | 'phase' | 'field'.

    Below freqs[0] the PSD is held constant; above freqs[-1] it is zero
    (hard band limit).
    """

    freqs: np.ndarray
    psd: np.ndarray
    kind: str = "amplitude"

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.psd = np.asarray(self.psd, dtype=float)
        if self.freqs.ndim != 1 or self.freqs.size != self.psd.size:
            raise ValueError("freqs and psd must be 1-d arrays of equal length")
        if self.freqs.size == 0 or np.any(np.diff(self.freqs) <= 0) or self.freqs[0] <= 0:
            raise ValueError("freqs must be strictly increasing and positive")
        if not np.all(np.isfinite(self.psd)):
            raise ValueError("psd must be finite")
        if self.kind not in ("amplitude", "phase", "field"):
            raise ValueError("kind must be 'amplitude', 'phase' or 'field'")

    def linear_psd(self, f: np.ndarray) -> np.ndarray:
        """Interpolate the target PSD in linear units at frequencies f (Hz).

        dBc/Hz values L(f) map to a one-sided fractional PSD 2*10^(L/10)
        (single-sideband level referred to the carrier, doubled to count both
        sidebands of the modulation).  Interpolation is logarithmic in
        frequency, linear in dB (or in log-PSD for 'field').
        """
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        inband = (f > 0) & (f <= self.freqs[-1])
        fi = np.clip(f[inband], self.freqs[0], None)
        if self.kind == "field":
            if np.all(self.psd > 0):
                vals = np.exp(np.interp(np.log(fi), np.log(self.freqs), np.log(self.psd)))
            else:
                vals = np.interp(np.log(fi), np.log(self.freqs), self.psd)
            out[inband] = vals
        else:
            level_db = np.interp(np.log(fi), np.log(self.freqs), self.psd)
            out[inband] = 2.0 * 10.0 ** (level_db / 10.0)
        return out

    @classmethod
    def flat(cls, level, f_max: float, kind: str = "amplitude", f_min: float = 0.1) -> "NoiseSpectrum":
        """Flat spectrum at `level` from f_min to f_max (dBc/Hz or SI per kind)."""
        return cls(freqs=np.array([f_min, f_max]), psd=np.array([level, level]), kind=kind)

    @classmethod
    def from_csv(cls, path, kind: str = "amplitude") -> "NoiseSpectrum":
        """Load a two-column CSV (freq_hz, psd).  psd is dBc/Hz or SI per kind."""
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if data.shape[1] != 2:
            raise ValueError("noise CSV must have two columns: freq_hz, psd")
        return cls(freqs=data[:, 0], psd=data[:, 1], kind=kind)


@dataclass
class NoiseRealization:
    """A concrete noise time series drawn from a NoiseSpectrum."""

    samples: np.ndarray
    sample_rate: float
    source_spectrum: NoiseSpectrum

    def welch_psd(self, nperseg: Optional[int] = None):
        if nperseg is None:
            nperseg = min(self.samples.size, max(256, self.samples.size // 8))
        return sig.welch(self.samples, fs=self.sample_rate, nperseg=nperseg)


def colored_noise(
    spec: NoiseSpectrum, sample_rate: float, duration: float, seed: int
) -> NoiseRealization:
    """Draw a Gaussian noise series whose PSD follows `spec`.

    White Gaussian noise is shaped in the frequency domain: each rfft bin is
    scaled so its expected one-sided PSD equals the interpolated target.
    Deterministic for a fixed seed.
    """
    if sample_rate / 2.0 < spec.freqs[-1]:
        raise ValueError("spectrum extends beyond Nyquist for this sample rate")
    n = int(round(sample_rate * duration))
    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    target = spec.linear_psd(freqs)
    # expected |X_k|^2 = S_k * fs * n / 2 for interior bins of an rfft
    amp = np.sqrt(target * sample_rate * n / 2.0)
    w = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    w /= np.sqrt(2.0)
    x_f = w * amp
    x_f[0] = 0.0  # zero mean
    if n % 2 == 0:
        x_f[-1] = x_f[-1].real * np.sqrt(2.0)
    samples = np.fft.irfft(x_f, n=n)
    return NoiseRealization(samples=samples, sample_rate=sample_rate, source_spectrum=spec)


# ---------------------------------------------------------------------------
# test field
# ---------------------------------------------------------------------------


def test_field(amplitudes_rms, freqs_hz, t_grid, phases=None) -> np.ndarray:
    """Three orthogonal sinusoidal test tones, one per cartesian axis.

    Parameters
    ----------
    amplitudes_rms : (3,) rms amplitudes in tesla.
    freqs_hz : (3,) tone frequencies (x, y, z).
    t_grid : (n,) times in seconds.
    phases : optional (3,) phases in radians (default 0: pure cosines).

    Returns
    -------
    (3, n) tesla array; axis k carries amplitudes_rms[k]*sqrt(2) *
    cos(2 pi f_k t + phase_k).
    """
    amps = np.asarray(amplitudes_rms, dtype=float).reshape(3)
    freqs = np.asarray(freqs_hz, dtype=float).reshape(3)
    t = np.asarray(t_grid, dtype=float)
    if phases is None:
        phases = np.zeros(3)
    phases = np.asarray(phases, dtype=float).reshape(3)
    out = np.empty((3, t.size))
    for k in range(3):
        out[k] = amps[k] * np.sqrt(2.0) * np.cos(TWO_PI * freqs[k] * t + phases[k])
    return out
