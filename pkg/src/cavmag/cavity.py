"""Coupled spin-cavity reflection model.

Closed-form reflection coefficient of the composite resonator plus spin
ensemble, and a time-domain state-space simulation of the same system for
time-varying spin frequencies (swept bias field).  The simulation integrates
one cavity field amplitude and, per spin branch, a coherence and a
depolarized-population state; its fixed point for constant spin frequencies
reproduces the closed form (see docs/model.md for the derivation and the
integrator choice).
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _stepper
from .constants import HBAR, MU_0, DEFAULT_CONSTANTS, PhysicalConstants
from .geometry import NvBasis, canonical_basis
from .signals import BiasWaveform, NoiseRealization, evaluate_bias, transition_center_traces
from .traces import ReflectionTrace


@dataclass(frozen=True)
class CavityParams:
    """Bare resonator parameters (all rad/s).

    kappa_c0 : intrinsic linewidth; kappa_c1 : input coupling rate;
    omega_c : resonance; omega_d : drive frequency.
    """

    kappa_c0: float
    kappa_c1: float
    omega_c: float
    omega_d: float

    def __post_init__(self):
        if self.kappa_c0 <= 0 or self.kappa_c1 <= 0:
            raise ValueError("cavity rates must be strictly positive")
        if self.omega_c <= 0 or self.omega_d <= 0:
            raise ValueError("frequencies must be strictly positive")

    @property
    def kappa_c(self) -> float:
        """Loaded linewidth kappa_c0 + kappa_c1."""
        return self.kappa_c0 + self.kappa_c1


@dataclass(frozen=True)
class SpinTransitionParams:
    """One spin transition coupled to the cavity.

    g_s : single spin-photon coupling (rad/s); n_spins : effective polarized
    spin count; kappa_s : spin linewidth (rad/s); kappa_op : optical pumping
    rate (rad/s); n_cav : mean cavity photon number used for the saturation
    term; n_perp : transverse geometric factor in [0, 1] (bookkeeping only;
    it is already folded into g_s).
    """

    g_s: float
    n_spins: float
    kappa_s: float
    kappa_op: float
    n_cav: float
    n_perp: float = 1.0

    def __post_init__(self):
        if self.g_s < 0 or self.kappa_s < 0 or self.kappa_op < 0:
            raise ValueError("rates must be nonnegative")
        if not 0.0 <= self.n_perp <= 1.0:
            raise ValueError("n_perp must be in [0, 1]")
        if self.n_cav < 0 or self.n_spins < 0:
            raise ValueError("n_cav and n_spins must be nonnegative")


@dataclass(frozen=True)
class SpinCavityParams:
    """Cavity plus the eight spin transitions (4 orientations x 2 branches).

    Transition index runs (orientation 1 '+', orientation 1 '-',
    orientation 2 '+', ...), matching the trace ordering of
    signals.spin_frequency_traces.
    """

    cavity: CavityParams
    transitions: Sequence[SpinTransitionParams]

    def __post_init__(self):
        if len(self.transitions) != 8:
            raise ValueError("exactly 8 spin transitions are required")
        object.__setattr__(self, "transitions", tuple(self.transitions))


@dataclass
class SimState:
    """Simulation state: cavity field, per-branch coherence and depolarization."""

    x1: complex
    x2: np.ndarray
    x3: np.ndarray

    def __post_init__(self):
        self.x2 = np.asarray(self.x2, dtype=complex)
        self.x3 = np.asarray(self.x3, dtype=float)
        if self.x2.shape != self.x3.shape:
            raise ValueError("x2 and x3 must have matching shapes")
        if not (np.all(np.isfinite(self.x2)) and np.all(np.isfinite(self.x3))):
            raise ValueError("state must be finite")
        if np.any(self.x3 < 0):
            raise ValueError("x3 must be nonnegative")

    @classmethod
    def zero(cls, n_branches: int) -> "SimState":
        return cls(x1=0j, x2=np.zeros(n_branches, complex), x3=np.zeros(n_branches))


class SimulationDiverged(RuntimeError):
    """Raised when the integrator state leaves the finite range."""


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def single_spin_coupling(gamma: float, n_perp: float, omega_c: float, v_cav: float) -> float:
    """Single spin-photon coupling (gamma n_perp / 2) sqrt(hbar omega_c mu0 / V).

    v_cav is the resonator modal field volume in m^3.
    """
    if v_cav <= 0:
        raise ValueError("cavity mode volume must be positive")
    return 0.5 * gamma * n_perp * math.sqrt(HBAR * omega_c * MU_0 / v_cav)


def spin_term(p: SpinTransitionParams, omega_d: float, omega_s) -> complex:
    """Spin contribution Pi to the cavity denominator.

    Pi = g^2 N / (ks/2 + i(wd - ws) + g^2 n_cav ks/(2 kop) / (ks/2 - i(wd - ws)))

    Accepts scalar or array omega_s.
    """
    if p.kappa_s <= 0:
        raise ValueError("kappa_s must be positive")
    if p.kappa_op == 0 and p.n_cav > 0:
        raise ValueError("kappa_op = 0 with nonzero n_cav leaves saturation undefined")
    delta = np.asarray(omega_d - np.asarray(omega_s, dtype=float))
    ks2 = 0.5 * p.kappa_s
    sat = 0.0 if p.n_cav == 0 else p.g_s**2 * p.n_cav * p.kappa_s / (2.0 * p.kappa_op)
    denom = ks2 + 1j * delta + sat / (ks2 - 1j * delta)
    out = p.g_s**2 * p.n_spins / denom
    return complex(out) if out.ndim == 0 else out


def reflection_coefficient(c: CavityParams, pi_sum) -> complex:
    """Reflection of the composite system, -1 + kc1/(kc/2 + i(wd - wc) + Pi_sum)."""
    delta = c.omega_d - c.omega_c
    out = -1.0 + c.kappa_c1 / (0.5 * c.kappa_c + 1j * delta + np.asarray(pi_sum))
    return complex(out) if np.ndim(out) == 0 else out


def total_spin_term(params: SpinCavityParams, omega_s: np.ndarray) -> complex:
    """Sum of all transition terms at the given vector of spin frequencies."""
    omega_s = np.asarray(omega_s, dtype=float)
    if omega_s.shape[0] != 8:
        raise ValueError("expected 8 spin frequencies")
    return sum(
        spin_term(p, params.cavity.omega_d, w) for p, w in zip(params.transitions, omega_s)
    )


# ---------------------------------------------------------------------------
# time-domain simulation
# ---------------------------------------------------------------------------


def _branch_arrays(params: SpinCavityParams, hyperfine_offsets, hyperfine_weights):
    """Expand the 8 transitions into integration branches.

    Each transition is split into one branch per hyperfine offset, carrying
    its share of the spin count.  Offsets are in rad/s relative to the
    transition center trace.
    """
    if hyperfine_offsets is None:
        offsets = np.zeros(1)
        weights = np.ones(1)
    else:
        offsets = np.asarray(hyperfine_offsets, dtype=float)
        if hyperfine_weights is None:
            weights = np.full(offsets.size, 1.0 / offsets.size)
        else:
            weights = np.asarray(hyperfine_weights, dtype=float)
            if weights.shape != offsets.shape:
                raise ValueError("hyperfine weights must match offsets")
            weights = weights / weights.sum()
    nhf = offsets.size
    nb = 8 * nhf
    g2n = np.empty(nb)
    inv_n = np.empty(nb)
    ks_half = np.empty(nb)
    kop = np.empty(nb)
    ncav = np.empty(nb)
    branch_tr = np.empty(nb, np.int64)
    hf_off = np.empty(nb)
    for t, p in enumerate(params.transitions):
        if p.kappa_s <= 0:
            raise ValueError("kappa_s must be positive for every transition")
        if p.kappa_op == 0 and p.n_cav > 0 and p.g_s > 0:
            raise ValueError("kappa_op = 0 with nonzero n_cav leaves saturation undefined")
        for k in range(nhf):
            j = t * nhf + k
            n_j = p.n_spins * weights[k]
            g2n[j] = p.g_s**2 * n_j
            inv_n[j] = 0.0 if n_j == 0 else 1.0 / n_j
            ks_half[j] = 0.5 * p.kappa_s
            kop[j] = p.kappa_op
            ncav[j] = p.n_cav
            branch_tr[j] = t
            hf_off[j] = offsets[k]
    return g2n, inv_n, ks_half, kop, ncav, branch_tr, hf_off


def default_substeps(params: SpinCavityParams, dt: float, max_sweep_rate: float = 0.0) -> int:
    """Substep count so the explicit couplings and resonance crossings resolve.

    The stiff diagonal (detuning, linewidths) is integrated exactly, so only
    the collective coupling sqrt(sum g^2 N), the cavity bandwidth and the
    crossing time constrain the step.  max_sweep_rate is the largest
    |d omega_s / dt| expected (rad/s^2); pass 0 if unknown.
    """
    g_coll = math.sqrt(sum(p.g_s**2 * p.n_spins for p in params.transitions))
    rate = max(g_coll, 0.5 * params.cavity.kappa_c, max(p.kappa_op for p in params.transitions))
    h_max = 0.35 / rate if rate > 0 else dt
    if max_sweep_rate > 0:
        ks_min = min(p.kappa_s for p in params.transitions)
        t_cross = 0.5 * ks_min / max_sweep_rate
        h_max = min(h_max, t_cross / 3.0)
    return int(np.clip(math.ceil(dt / h_max), 1, 4096))


def _check_step(params: SpinCavityParams, h: float):
    g_coll = math.sqrt(sum(p.g_s**2 * p.n_spins for p in params.transitions))
    if h * max(g_coll, 0.5 * params.cavity.kappa_c) >= 1.0:
        raise ValueError(
            "integration step too coarse for the explicit couplings; "
            "increase substeps or reduce dt"
        )


def simulate(
    params: SpinCavityParams,
    drive: np.ndarray,
    omega_s_traces: np.ndarray,
    dt: float,
    initial: Optional[SimState] = None,
    *,
    hyperfine_offsets=None,
    hyperfine_weights=None,
    n_cav_mode: str = "fixed",
    photon_scale: float = 1.0,
    substeps: Optional[int] = None,
    return_state: bool = False,
):
    """Integrate the state-space model and return the reflected trace.

    Parameters
    ----------
    drive : (n,) complex baseband drive envelope (the carrier at omega_d is
        implicit; a CW tone is a constant envelope).
    omega_s_traces : (8, n) spin transition frequencies, rad/s.
    dt : sample spacing (s).
    initial : SimState or None for the empty state.
    hyperfine_offsets, hyperfine_weights : optional per-transition splitting
        into sub-branches at the given rad/s offsets (the spin count is
        shared according to the weights).
    n_cav_mode : 'fixed' uses each transition's n_cav for saturation;
        'self-consistent' uses the instantaneous photon number
        photon_scale*|x1|^2 instead.
    substeps : integration substeps per sample; default derived from rates.

    Returns
    -------
    ReflectionTrace (and the final SimState when return_state is set).
    The output sample y[k] is the reflected envelope at time k*dt.
    """
    drive = np.ascontiguousarray(drive, dtype=complex)
    w = np.ascontiguousarray(omega_s_traces, dtype=float)
    if w.ndim != 2 or w.shape[0] != 8:
        raise ValueError("omega_s_traces must have shape (8, n)")
    n = drive.size
    if w.shape[1] != n:
        raise ValueError("drive and omega_s_traces lengths differ")
    if n < 2:
        raise ValueError("need at least two samples")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_cav_mode not in ("fixed", "self-consistent"):
        raise ValueError("n_cav_mode must be 'fixed' or 'self-consistent'")

    g2n, inv_n, ks_half, kop, ncav, branch_tr, hf_off = _branch_arrays(
        params, hyperfine_offsets, hyperfine_weights
    )
    nb = g2n.size
    if initial is None:
        initial = SimState.zero(nb)
    if initial.x2.size != nb:
        raise ValueError(f"initial state has {initial.x2.size} branches, expected {nb}")

    if substeps is None:
        probe = min(n - 1, 1 << 16)
        sweep = 0.0
        if probe > 1:
            sweep = float(np.max(np.abs(np.diff(w[:, : probe + 1], axis=1)))) / dt
        substeps = default_substeps(params, dt, sweep)
    h = dt / substeps
    _check_step(params, h)

    cav = params.cavity
    dw_base = cav.omega_d - w  # (8, n)
    lam_c = complex(-0.5 * cav.kappa_c, -(cav.omega_d - cav.omega_c))
    f_in = math.sqrt(cav.kappa_c1) * drive

    x1_state = np.array([initial.x1], dtype=complex)
    x2 = initial.x2.astype(complex).copy()
    x3 = initial.x3.astype(float).copy()
    x1_buf = np.empty(n, dtype=complex)

    status = _stepper.kernel(
        x1_state,
        x2,
        x3,
        f_in,
        dw_base,
        hf_off,
        branch_tr,
        g2n,
        inv_n,
        ks_half,
        kop,
        ncav,
        n_cav_mode == "self-consistent",
        photon_scale,
        lam_c,
        h,
        substeps,
        x1_buf[: n - 1],
    )
    if status >= 0:
        raise SimulationDiverged(
            f"state diverged at sample {status} (t = {status * dt:.3e} s); "
            "check rates and step size"
        )
    x1_buf[n - 1] = x1_state[0]
    y = math.sqrt(cav.kappa_c1) * x1_buf - drive
    if not np.all(np.isfinite(y)):
        raise SimulationDiverged("non-finite output samples")
    trace = ReflectionTrace(samples=y, sample_rate=1.0 / dt)
    if return_state:
        return trace, SimState(x1=x1_state[0], x2=x2, x3=x3)
    return trace


def synthesize_reflection(
    params: SpinCavityParams,
    bias: BiasWaveform,
    external_field=None,
    mw_noise=None,
    *,
    basis: Optional[NvBasis] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    drive_amplitude: float = 1.0,
    hyperfine: bool = True,
    hyperfine_weights=None,
    n_cav_mode: str = "fixed",
    photon_scale: float = 1.0,
    substeps: Optional[int] = None,
    chunk_samples: int = 1 << 16,
    initial: Optional[SimState] = None,
    return_state: bool = False,
):
    """Full synthetic sensor output for a swept bias plus external field.

    The bias and external fields are projected onto the NV axes to produce
    spin-frequency traces which drive `simulate`; processing is chunked so
    arbitrarily long records use bounded memory.

    Parameters
    ----------
    external_field : None, a (3, n) tesla array on the bias sample grid, or
        a callable t -> (3, len(t)) evaluated lazily per chunk.
    mw_noise : None, a NoiseRealization, or a sequence of them.  'amplitude'
        realizations multiply the drive envelope by (1 + a(t)); 'phase'
        realizations rotate it by e^{i phi(t)}.  Sample rates must match the
        bias waveform.
    basis : NV basis in the lab frame (default: canonical, i.e. the diamond
        frame coincides with the lab frame).
    """
    if basis is None:
        basis = canonical_basis()
    fs = bias.sample_rate
    dt = 1.0 / fs
    n = bias.n_samples
    if n < 2:
        raise ValueError("bias waveform too short")

    amp_mw = phase_mw = None
    if mw_noise is not None:
        realizations = [mw_noise] if isinstance(mw_noise, NoiseRealization) else list(mw_noise)
        for r in realizations:
            if abs(r.sample_rate - fs) > 1e-6 * fs:
                raise ValueError("MW noise sample rate must match the bias waveform")
            if r.samples.size < n:
                raise ValueError("MW noise realization shorter than the run")
            if r.source_spectrum.kind == "amplitude":
                amp_mw = r.samples
            elif r.source_spectrum.kind == "phase":
                phase_mw = r.samples
            else:
                raise ValueError("MW noise must be of kind 'amplitude' or 'phase'")

    ext_arr = None
    ext_fn = None
    if external_field is not None:
        if callable(external_field):
            ext_fn = external_field
        else:
            ext_arr = np.asarray(external_field, dtype=float)
            if ext_arr.shape != (3, n):
                raise ValueError(f"external_field must have shape (3, {n})")

    offsets = None
    weights = None
    if hyperfine:
        offsets = np.array([-1.0, 0.0, 1.0]) * constants.a_hf
        weights = hyperfine_weights

    if substeps is None:
        # peak sweep rate of a cosine bias: gamma |B0.n| omega_m per axis
        proj = basis.axes @ bias.b0_vec
        sweep = float(np.max(np.abs(proj))) * constants.gamma_e * bias.omega_m
        substeps = default_substeps(params, dt, sweep)

    g2n, *_ = _branch_arrays(params, offsets, weights)
    state = initial if initial is not None else SimState.zero(g2n.size)

    y = np.empty(n, dtype=complex)
    cav = params.cavity
    step_starts = range(0, n - 1, chunk_samples)
    for s in step_starts:
        e = min(s + chunk_samples, n - 1)
        t = np.arange(s, e + 1) * dt
        bfield = evaluate_bias(bias, t)
        if ext_arr is not None:
            bfield = bfield + ext_arr[:, s : e + 1]
        elif ext_fn is not None:
            bfield = bfield + ext_fn(t)
        w8 = transition_center_traces(basis, bfield, constants)
        drive = np.full(t.size, drive_amplitude, dtype=complex)
        if amp_mw is not None:
            seg = amp_mw[s : e + 1] if e + 1 <= amp_mw.size else amp_mw[s:]
            drive *= 1.0 + seg
        if phase_mw is not None:
            seg = phase_mw[s : e + 1] if e + 1 <= phase_mw.size else phase_mw[s:]
            drive *= np.exp(1j * seg)
        trace, state = simulate(
            params,
            drive,
            w8,
            dt,
            state,
            hyperfine_offsets=offsets,
            hyperfine_weights=weights,
            n_cav_mode=n_cav_mode,
            photon_scale=photon_scale,
            substeps=substeps,
            return_state=True,
        )
        y[s:e] = trace.samples[:-1]
        if e == n - 1:
            y[e] = trace.samples[-1]
    out = ReflectionTrace(samples=y, sample_rate=fs)
    if return_state:
        return out, state
    return out
