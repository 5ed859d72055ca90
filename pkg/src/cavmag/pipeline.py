"""Readout processing: raw reflected traces to per-orientation peak shifts.

Each bias period is one frame.  Within a frame every swept orientation is
interrogated four times (two transitions x two sweep directions); the four
resonance locations are found by matched filtering in linearized
(normalized-bias) coordinates and combined into a single shift tau per
orientation that passes external-field shifts while cancelling bias-field
amplitude and phase noise.

Conventions
-----------
Normalized bias coordinate b = B_bias(t)/max|B_bias| in [-1, 1]; frames
start at the positive bias extremum, so the first half-cycle sweeps b
downward.  Peak window columns are ordered

    0: window at +|b| on the down sweep     2: window at -|b| on the up sweep
    1: window at -|b| on the down sweep     3: window at +|b| on the up sweep

tau is reported in normalized linearized bias units: tau_i equals the
external field projection divided by the bias projection on that axis.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .constants import TWO_PI
from .traces import ReflectionTrace

PEAK_LABELS = ("pos_down", "neg_down", "neg_up", "pos_up")


@dataclass
class Frame:
    """Samples covering exactly one bias period."""

    samples: np.ndarray
    start_time: float
    sample_rate: float

    def __len__(self):
        return self.samples.size


@dataclass
class LinearizedFrame:
    """Frame magnitude resampled onto a uniform normalized-bias grid.

    down/up hold the two half-cycles; b_grid is ascending.
    """

    b_grid: np.ndarray
    down: np.ndarray
    up: np.ndarray
    start_time: float = 0.0


@dataclass
class FramePeaks:
    """Per-orientation resonance locations for one frame.

    b_positions, times, quality : (n_orient, 4) arrays, columns ordered as
    PEAK_LABELS; times are seconds within the frame.
    valid : (n_orient,) bool, all four peaks found.
    alpha : (n_orient,) sine of the nominal crossing phase, used to convert
    the time combination to normalized bias units.
    tau_time_ref : (n_orient,) reference value of the raw time combination.
    """

    b_positions: np.ndarray
    times: np.ndarray
    quality: np.ndarray
    valid: np.ndarray
    alpha: np.ndarray
    tau_time_ref: np.ndarray
    omega_m: float
    frame_index: int = 0


@dataclass
class TauVector:
    """Combined per-orientation shift for one frame (normalized bias units)."""

    tau: np.ndarray
    valid: np.ndarray
    frame_index: int = 0
    time: float = 0.0


@dataclass
class MatchedTemplate:
    """Matched-filter templates for one orientation.

    One unit-energy, mean-removed template per peak window.  Templates are
    shorter than their search windows so the correlation is evaluated with
    full overlap at every lag of interest; ref_pos holds the build-time
    correlation position of each template inside its window, which anchors
    the position scale.
    """

    orientation: int
    templates: List[np.ndarray]
    window_slices: List[slice]
    ref_pos: np.ndarray
    ref_b: np.ndarray
    ref_times: np.ndarray
    alpha: float
    beta: float
    parabola_halfwidth: int
    corr_threshold: float


@dataclass
class TemplateBank:
    """Templates for all tracked orientations plus the shared grid."""

    templates: List[MatchedTemplate]
    b_grid: np.ndarray
    omega_m: float
    n_frames_used: int

    def __iter__(self):
        return iter(self.templates)

    def __len__(self):
        return len(self.templates)


# ---------------------------------------------------------------------------
# framing and linearization
# ---------------------------------------------------------------------------


def parse_frames(trace: ReflectionTrace, omega_m: float) -> List[Frame]:
    """Cut a trace into contiguous single-period frames; drops the remainder."""
    period = TWO_PI / omega_m
    frame_len = int(round(period * trace.sample_rate))
    if frame_len < 8:
        raise ValueError("sample rate too low to frame one bias period")
    n_frames = len(trace) // frame_len
    if n_frames < 1:
        raise ValueError("trace shorter than one bias period")
    frames = []
    for k in range(n_frames):
        s = k * frame_len
        frames.append(
            Frame(
                samples=trace.samples[s : s + frame_len],
                start_time=trace.t0 + s / trace.sample_rate,
                sample_rate=trace.sample_rate,
            )
        )
    return frames


def nominal_bias_reference(frame_len: int) -> np.ndarray:
    """Normalized bias values cos(omega_m t) for one frame of frame_len samples."""
    return np.cos(TWO_PI * np.arange(frame_len) / frame_len)


def linearize(
    frame: Frame,
    bias_reference: np.ndarray,
    n_grid: Optional[int] = None,
    b_margin: float = 0.005,
) -> LinearizedFrame:
    """Resample the frame magnitude against the applied bias value.

    Removes sweep-rate broadening: peak widths along b reflect only the bias
    projection on each axis, not where in the cycle the crossing happens.

    Parameters
    ----------
    bias_reference : per-sample bias values (any consistent scale, e.g. the
        commanded normalized waveform); must be monotone on each half-cycle.
    n_grid : points of the uniform b grid (default: half the frame length).
    """
    y = np.abs(frame.samples)
    b = np.asarray(bias_reference, dtype=float)
    if b.size != y.size:
        raise ValueError("bias_reference length must match the frame")
    bmax = np.max(np.abs(b))
    if bmax == 0:
        raise ValueError("bias_reference is identically zero")
    b = b / bmax
    k_min = int(np.argmin(b))
    down_b, down_y = b[: k_min + 1], y[: k_min + 1]
    up_b, up_y = b[k_min:], y[k_min:]
    if np.any(np.diff(down_b) >= 0):
        raise ValueError("bias_reference is not monotone on the down half-cycle")
    if np.any(np.diff(up_b) <= 0):
        raise ValueError("bias_reference is not monotone on the up half-cycle")
    if n_grid is None:
        n_grid = y.size // 2
    lo = max(down_b[-1], up_b[0]) + b_margin
    hi = min(down_b[0], up_b[-1]) - b_margin
    grid = np.linspace(lo, hi, n_grid)
    down_vals = np.interp(grid, down_b[::-1], down_y[::-1])
    up_vals = np.interp(grid, up_b, up_y)
    return LinearizedFrame(b_grid=grid, down=down_vals, up=up_vals, start_time=frame.start_time)


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def _refine_peak(c: np.ndarray, w: int):
    """Sub-sample vertex of the correlation maximum via a parabola fit.

    Returns (position, peak_value) in fractional samples, or None when the
    maximum sits too close to the window edge.
    """
    k = int(np.argmax(c))
    if k - w < 0 or k + w >= c.size:
        return None
    if w == 1:
        denom = c[k - 1] - 2.0 * c[k] + c[k + 1]
        frac = 0.0 if denom == 0 else 0.5 * (c[k - 1] - c[k + 1]) / denom
        return k + float(np.clip(frac, -1.0, 1.0)), float(c[k])
    xs = np.arange(k - w, k + w + 1, dtype=float)
    coeff = np.polyfit(xs - k, c[k - w : k + w + 1], 2)
    if coeff[0] >= 0:
        return float(k), float(c[k])
    frac = -coeff[1] / (2.0 * coeff[0])
    return k + float(np.clip(frac, -float(w), float(w))), float(c[k])


def _locate_in_window(seg: np.ndarray, template: np.ndarray, w: int):
    """Normalized cross-correlation of a search segment against a (shorter,
    mean-removed, unit-norm) template, with full overlap at every lag.

    Per-lag normalization makes the match scale-invariant and immune to the
    smooth dispersive background under the resonance groups.  Returns
    (template start position in fractional samples, peak correlation
    coefficient), or None when the maximum cannot be refined away from the
    segment edges.
    """
    L = template.size
    if L > seg.size:
        return None
    c = np.correlate(seg, template, mode="valid")
    # local energy of each aligned segment, via cumulative sums
    s1 = np.concatenate(([0.0], np.cumsum(seg)))
    s2 = np.concatenate(([0.0], np.cumsum(seg * seg)))
    win1 = s1[L:] - s1[:-L]
    win2 = s2[L:] - s2[:-L]
    energy = np.maximum(win2 - win1 * win1 / L, 0.0)
    rho = np.where(energy > 0, c / np.sqrt(np.maximum(energy, 1e-300)), 0.0)
    hit = _refine_peak(rho, w)
    if hit is None:
        return None
    return hit


def _average_linearized(frames: Sequence[Frame], bias_reference, n_grid):
    acc_d = acc_u = None
    grid = None
    for fr in frames:
        lin = linearize(fr, bias_reference, n_grid=n_grid)
        if acc_d is None:
            acc_d = lin.down.copy()
            acc_u = lin.up.copy()
            grid = lin.b_grid
        else:
            acc_d += lin.down
            acc_u += lin.up
    return grid, acc_d / len(frames), acc_u / len(frames)


def discover_windows(avg_down: np.ndarray, grid: np.ndarray, n_orient: int = 3):
    """Locate orientation resonance groups on the averaged down half-cycle.

    Finds prominent maxima at positive b, cuts them into n_orient clusters at
    the largest gaps, and returns (centers, halfwidths) sorted ascending in
    |b| (orientation labels ascend with |b| by the projection-ordering
    convention).  Halfwidths span the cluster plus equal padding.
    """
    from scipy.signal import find_peaks

    base = float(np.median(avg_down))
    prom = 0.2 * (float(np.max(avg_down)) - base)
    if prom <= 0:
        raise ValueError("no resonance structure found in averaged frame")
    idx, _ = find_peaks(avg_down, prominence=prom)
    idx = idx[grid[idx] > 0.05]
    if idx.size < n_orient:
        raise ValueError("fewer peak groups than tracked orientations")
    pos = grid[idx]
    gaps = np.diff(pos)
    cuts = np.sort(np.argsort(gaps)[-(n_orient - 1) :]) if n_orient > 1 else []
    clusters = np.split(pos, [c + 1 for c in cuts])
    centers, halfwidths = [], []
    for cl in clusters:
        span = cl[-1] - cl[0]
        centers.append(0.5 * (cl[0] + cl[-1]))
        halfwidths.append(max(span, 0.01) * 1.1)
    return np.asarray(centers), np.asarray(halfwidths)


def build_templates(
    clean_frames: Sequence[Frame],
    bias_reference: Optional[np.ndarray] = None,
    omega_m: Optional[float] = None,
    nominal_beta: Optional[Sequence[float]] = None,
    window_halfwidth: Optional[Sequence[float]] = None,
    n_grid: Optional[int] = None,
    corr_threshold: float = 0.35,
    min_frames: int = 4,
    margin_fraction: float = 0.22,
) -> TemplateBank:
    """Average clean frames and extract per-window matched-filter templates.

    Parameters
    ----------
    clean_frames : frames recorded with no external field and low noise.
    bias_reference : per-sample bias values for one frame (default: the
        nominal cosine).
    omega_m : bias angular frequency (default: one cycle per frame).
    nominal_beta : |b| resonance positions per tracked orientation, ascending
        (orientation labels ascend with |b|); discovered from the data when
        omitted.
    window_halfwidth : search window half-width per orientation along b;
        must span the full hyperfine triplet plus line tails.
    corr_threshold : minimum normalized correlation for a peak to count.
    margin_fraction : fraction of the window kept as search room on each
        side of the template.
    """
    if len(clean_frames) < min_frames:
        raise ValueError(f"need at least {min_frames} clean frames")
    frame_len = len(clean_frames[0])
    if bias_reference is None:
        bias_reference = nominal_bias_reference(frame_len)
    if omega_m is None:
        omega_m = TWO_PI * clean_frames[0].sample_rate / frame_len
    grid, avg_d, avg_u = _average_linearized(clean_frames, bias_reference, n_grid)
    db = grid[1] - grid[0]
    period = TWO_PI / omega_m

    if nominal_beta is None:
        nominal_beta, auto_hw = discover_windows(avg_d, grid)
        if window_halfwidth is None:
            window_halfwidth = auto_hw
    elif window_halfwidth is None:
        raise ValueError("window_halfwidth is required when nominal_beta is given")

    templates = []
    for i, (beta, hw) in enumerate(zip(nominal_beta, window_halfwidth)):
        if not 0 < beta < 1:
            raise ValueError("nominal beta values must lie in (0, 1)")
        margin = max(4, int(round(margin_fraction * hw / db)))
        tmpls, slices, refs_p, refs_b, refs_t = [], [], [], [], []
        w_fit = 1
        for lbl in PEAK_LABELS:
            center = beta if lbl.startswith("pos") else -beta
            half = avg_d if lbl.endswith("down") else avg_u
            i0 = int(np.searchsorted(grid, center - hw))
            i1 = int(np.searchsorted(grid, center + hw))
            if i1 - i0 < 2 * margin + 8:
                raise ValueError("window too narrow on the linearization grid")
            sl = slice(i0, i1)
            seg = half[i0 + margin : i1 - margin]
            t = seg - np.mean(seg)
            nrm = np.linalg.norm(t)
            if nrm == 0:
                raise ValueError("flat segment in template window")
            tmpls.append(t / nrm)
            slices.append(sl)

        # parabola half-width spanning the template autocorrelation main lobe
        auto = np.correlate(tmpls[0], tmpls[0], mode="full")
        mid = auto.size // 2
        below = np.nonzero(auto[mid:] < 0.5 * auto[mid])[0]
        lobe = int(below[0]) if below.size else 3
        w_fit = int(np.clip(lobe // 2, 1, margin - 2))

        for lbl, sl, tm in zip(PEAK_LABELS, slices, tmpls):
            half = avg_d if lbl.endswith("down") else avg_u
            hit = _locate_in_window(half[sl], tm, w_fit)
            if hit is None:
                raise ValueError(f"could not locate reference peak in window {lbl}")
            pos, _ = hit
            b_ref = grid[sl.start] + (pos + 0.5 * (tm.size - 1)) * db
            refs_p.append(pos)
            refs_b.append(b_ref)
            refs_t.append(_b_to_time(b_ref, lbl, period))

        refs_b = np.array(refs_b)
        refs_t = np.array(refs_t)
        beta_est = float(np.mean(np.abs(refs_b)))
        alpha_est = float(np.sqrt(max(1.0 - beta_est**2, 0.0)))
        templates.append(
            MatchedTemplate(
                orientation=i,
                templates=tmpls,
                window_slices=slices,
                ref_pos=np.array(refs_p),
                ref_b=refs_b,
                ref_times=refs_t,
                alpha=alpha_est,
                beta=beta_est,
                parabola_halfwidth=w_fit,
                corr_threshold=corr_threshold,
            )
        )
    return TemplateBank(
        templates=templates, b_grid=grid, omega_m=omega_m, n_frames_used=len(clean_frames)
    )


def build_template(clean_frames: Sequence[Frame], orientation: int, **kwargs) -> MatchedTemplate:
    """Build the full bank from clean frames and return one orientation's entry."""
    bank = build_templates(clean_frames, **kwargs)
    return bank.templates[orientation]


def _b_to_time(b: float, label: str, period: float) -> float:
    """Map a normalized-bias position to its time within the frame."""
    theta = np.arccos(np.clip(b, -1.0, 1.0))
    t = theta / (TWO_PI / period)
    return t if label.endswith("down") else period - t


def _tau_time(times: np.ndarray, period: float) -> float:
    """Down-minus-up four-peak combination of times (seconds)."""
    return (times[0] + times[1] - times[2] - times[3]) / 4.0


# ---------------------------------------------------------------------------
# peak location and combination
# ---------------------------------------------------------------------------


def locate_peaks(
    lin: LinearizedFrame,
    templates: TemplateBank,
    frame_index: int = 0,
    window_shifts: Optional[np.ndarray] = None,
) -> FramePeaks:
    """Matched-filter the linearized frame and return the four peak locations
    per orientation.

    Peaks whose normalized correlation falls below the template threshold are
    flagged missing and invalidate the orientation for this frame.
    window_shifts optionally displaces each orientation's search windows by a
    signed number of grid samples (used to track slow drift frame to frame).
    """
    grid = lin.b_grid
    db = grid[1] - grid[0]
    period = TWO_PI / templates.omega_m
    n = len(templates)
    if window_shifts is None:
        window_shifts = np.zeros(n, dtype=int)
    b_pos = np.full((n, 4), np.nan)
    t_pos = np.full((n, 4), np.nan)
    quality = np.zeros((n, 4))
    valid = np.zeros(n, dtype=bool)
    alpha = np.empty(n)
    tau_ref = np.empty(n)
    for i, mt in enumerate(templates):
        ok = True
        for c, (lbl, sl, tm) in enumerate(zip(PEAK_LABELS, mt.window_slices, mt.templates)):
            half = lin.down if lbl.endswith("down") else lin.up
            sh = int(window_shifts[i])
            i0 = max(0, sl.start + sh)
            i1 = min(half.size, sl.stop + sh)
            hit = _locate_in_window(half[i0:i1], tm, mt.parabola_halfwidth)
            if hit is None:
                ok = False
                continue
            pos, q = hit
            quality[i, c] = q
            if q < mt.corr_threshold:
                ok = False
                continue
            b = grid[i0] + (pos + 0.5 * (tm.size - 1)) * db
            b_pos[i, c] = b
            t_pos[i, c] = _b_to_time(b, lbl, period)
        valid[i] = ok and np.all(np.isfinite(b_pos[i]))
        alpha[i] = mt.alpha
        tau_ref[i] = _tau_time(mt.ref_times, period)
    return FramePeaks(
        b_positions=b_pos,
        times=t_pos,
        quality=quality,
        valid=valid,
        alpha=alpha,
        tau_time_ref=tau_ref,
        omega_m=templates.omega_m,
        frame_index=frame_index,
    )


def combine_tau(p: FramePeaks) -> TauVector:
    """Collapse the four peak times into one shift per orientation.

    The raw combination (t1 + t2 - t3 - t4)/4 over (down, down, up, up) peak
    times constructively combines external-field shifts while cancelling the
    bias amplitude- and phase-noise signatures exactly.  The result is
    converted to normalized linearized bias units by the omega_m * alpha_i
    slope factor and referenced to the template-build positions.
    """
    period = TWO_PI / p.omega_m
    n = p.times.shape[0]
    tau = np.zeros(n)
    valid = p.valid.copy()
    for i in range(n):
        if not valid[i]:
            continue
        raw = _tau_time(p.times[i], period)
        tau[i] = p.omega_m * p.alpha[i] * (raw - p.tau_time_ref[i])
    return TauVector(tau=tau, valid=valid, frame_index=p.frame_index)


@dataclass
class TauSeries:
    """Per-frame tau vectors for a whole run."""

    tau: np.ndarray  # (3, n_frames)
    valid: np.ndarray  # (3, n_frames) bool
    frame_rate: float
    t0: float = 0.0

    @property
    def times(self):
        return self.t0 + np.arange(self.tau.shape[1]) / self.frame_rate

    def to_csv(self, path):
        rows = np.column_stack(
            [
                np.arange(self.tau.shape[1]),
                self.times,
                self.tau.T,
                self.valid.T.astype(int),
            ]
        )
        np.savetxt(
            path,
            rows,
            delimiter=",",
            header="frame_index,t_seconds,tau1,tau2,tau3,valid1,valid2,valid3",
            comments="",
            fmt=["%d", "%.9e", "%.9e", "%.9e", "%.9e", "%d", "%d", "%d"],
        )


def process_trace(
    trace: ReflectionTrace,
    templates: TemplateBank,
    drop_frames: int = 0,
    bias_reference: Optional[np.ndarray] = None,
    track_windows: bool = True,
) -> TauSeries:
    """Run the full per-frame chain: frame, linearize, locate, combine.

    When track_windows is set, each orientation's search windows follow the
    previous valid frame's mean peak displacement (integer grid samples,
    bounded to a quarter window), falling back to the nominal positions.
    """
    frames = parse_frames(trace, templates.omega_m)
    if drop_frames >= len(frames):
        raise ValueError("drop_frames leaves no frames to process")
    frames = frames[drop_frames:]
    if bias_reference is None:
        bias_reference = nominal_bias_reference(len(frames[0]))
    n_grid = templates.b_grid.size
    db = templates.b_grid[1] - templates.b_grid[0]
    n_or = len(templates)
    taus = np.zeros((n_or, len(frames)))
    valid = np.zeros((n_or, len(frames)), dtype=bool)
    shifts = np.zeros(n_or, dtype=int)
    max_shift = np.array(
        [max(1, (mt.window_slices[0].stop - mt.window_slices[0].start) // 4) for mt in templates]
    )
    for k, fr in enumerate(frames):
        lin = linearize(fr, bias_reference, n_grid=n_grid)
        peaks = locate_peaks(
            lin, templates, frame_index=k, window_shifts=shifts if track_windows else None
        )
        tv = combine_tau(peaks)
        taus[:, k] = tv.tau
        valid[:, k] = tv.valid
        if track_windows:
            for i, mt in enumerate(templates):
                if tv.valid[i]:
                    # common-mode displacement vs reference (slow drift)
                    d = np.mean(peaks.b_positions[i] - mt.ref_b)
                    shifts[i] = int(np.clip(round(d / db), -max_shift[i], max_shift[i]))
                else:
                    shifts[i] = 0
    frame_rate = templates.omega_m / TWO_PI
    return TauSeries(tau=taus, valid=valid, frame_rate=frame_rate, t0=frames[0].start_time)


# ---------------------------------------------------------------------------
# analytic frequency responses
# ---------------------------------------------------------------------------


def _phasors(omega, peak_times):
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    t = np.asarray(peak_times, dtype=float).reshape(4)
    return np.exp(1j * np.outer(omega, t)), omega


def response_external(omega, peak_times):
    """|e1 + e2 + e3 + e4|/4 over the four peak phasors; 1 at DC."""
    e, om = _phasors(omega, peak_times)
    out = np.abs(e.sum(axis=1)) / 4.0
    return float(out[0]) if np.ndim(omega) == 0 else out


def response_amp(omega, peak_times, beta_i: float):
    """Amplitude-noise transfer beta * |e1 - e2 - e3 + e4|/4.

    peak_times ordered as PEAK_LABELS; requires |beta_i| <= 1 (the
    orientation must actually sweep through resonance).
    """
    if abs(beta_i) > 1:
        raise ValueError("|beta| > 1: orientation is never resonant")
    e, om = _phasors(omega, peak_times)
    out = abs(beta_i) * np.abs(e[:, 0] - e[:, 1] - e[:, 2] + e[:, 3]) / 4.0
    return float(out[0]) if np.ndim(omega) == 0 else out


def response_phase(omega, peak_times, alpha_i: float):
    """Phase-noise transfer alpha * |e1 + e2 - e3 - e4|/4."""
    if abs(alpha_i) > 1:
        raise ValueError("|alpha| > 1 is not a valid crossing slope factor")
    e, om = _phasors(omega, peak_times)
    out = abs(alpha_i) * np.abs(e[:, 0] + e[:, 1] - e[:, 2] - e[:, 3]) / 4.0
    return float(out[0]) if np.ndim(omega) == 0 else out
