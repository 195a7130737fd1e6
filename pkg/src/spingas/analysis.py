"""Diagnostics on recorded trajectories: spectra, peaks, the 0-1 chaos test,
Fourier time phases and the phase classifier."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .integrate import PoincarePoints, Trajectory


class Window(str, enum.Enum):
    RECT = "rect"
    HANN = "hann"


class Label(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    LIMIT_CYCLE = "LimitCycle"
    QUASI_PERIODIC = "QuasiPeriodic"
    CHAOTIC = "Chaotic"


class SectionShape(str, enum.Enum):
    CLUSTER = "Cluster"
    CLOSED_CURVE = "ClosedCurve"
    SCATTERED = "Scattered"


@dataclass
class Spectrum:
    """One-sided spectrum of a mean-removed series.

    ``power`` is |X|^2 scaled to a maximum of 1, ``amplitudes`` the complex
    sinusoid amplitudes (phase referenced to the first sample) and ``energy``
    the unnormalized per-bin share of the series variance.
    """

    freqs: np.ndarray
    power: np.ndarray
    amplitudes: np.ndarray
    window: Window
    resolution: float
    energy: np.ndarray

    def crop(self, fmin: float, fmax: float) -> "Spectrum":
        m = (self.freqs >= fmin) & (self.freqs <= fmax)
        return Spectrum(self.freqs[m], self.power[m], self.amplitudes[m], self.window,
                        self.resolution, self.energy[m])


@dataclass(frozen=True)
class Peak:
    freq: float
    amplitude: float
    fwhm: float
    phase: float


@dataclass
class PhaseLabel:
    label: Label
    k_value: float
    peaks: list = field(default_factory=list)
    base_freqs: tuple = ()
    incommensurate: Optional[bool] = None
    perm_entropy: float = float("nan")
    rms: float = 0.0
    resolution: float = float("nan")


@dataclass(frozen=True)
class AnalysisConfig:
    """Thresholds of the classifier.  Tolerances are in units of the
    spectral resolution."""

    peak_floor: float = 0.01
    amplitude_floor: float = 1e-8
    chaos_threshold: float = 0.5
    comb_tolerance: float = 0.25
    max_order: int = 10
    max_denominator: int = 10
    n_angles: int = 100
    k_min_length: int = 2000
    window: Window = Window.HANN


def _as_series(series, min_len: int, what: str) -> np.ndarray:
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < min_len:
        raise ValueError(f"{what} needs at least {min_len} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what}: series contains non-finite samples")
    return x


def power_spectrum(series, sample_rate: float, window=Window.HANN) -> Spectrum:
    window = Window(window)
    x = _as_series(series, 16, "power_spectrum")
    n = x.size
    x = x - x.mean()
    w = np.ones(n) if window is Window.RECT else signal.windows.hann(n, sym=False)
    X = np.fft.rfft(x * w)
    one_sided = np.full(X.size, 2.0)
    one_sided[0] = 1.0
    if n % 2 == 0:
        one_sided[-1] = 1.0
    amplitudes = X * one_sided / w.sum()
    raw = np.abs(X) ** 2
    energy = one_sided * raw / (n * n * np.mean(w * w))
    peak = raw.max()
    power = raw / peak if peak > 0 else raw
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    return Spectrum(freqs, power, amplitudes, window, sample_rate / n, energy)


def _refine(power: np.ndarray, k: int) -> float:
    """Fractional bin offset of a peak from a parabola through log power."""
    if k <= 0 or k >= power.size - 1:
        return 0.0
    a, b, c = power[k - 1], power[k], power[k + 1]
    if min(a, b, c) <= 0:
        return 0.0
    la, lb, lc = np.log(a), np.log(b), np.log(c)
    den = la - 2 * lb + lc
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (la - lc) / den, -0.5, 0.5))


def _half_width(power: np.ndarray, k: int, step: int) -> float:
    """Distance in bins from peak k to the half-power crossing on one side."""
    half = 0.5 * power[k]
    j = k
    while 0 <= j + step < power.size and power[j + step] >= half:
        j += step
    if not 0 <= j + step < power.size:
        return float(abs(j - k))
    p0, p1 = power[j], power[j + step]
    return abs(j - k) + (p0 - half) / (p0 - p1)


def find_peaks(spec: Spectrum, floor: float = 0.1) -> list[Peak]:
    """Local maxima of the normalized power above ``floor``, strongest first."""
    if not 0 < floor < 1:
        raise ValueError("floor must lie in (0, 1)")
    p = spec.power
    idx, _ = signal.find_peaks(p, height=floor, distance=2)
    res = spec.resolution
    out = []
    for k in idx:
        f = spec.freqs[k] + _refine(p, k) * res
        fwhm = max((_half_width(p, k, -1) + _half_width(p, k, +1)) * res, res)
        phase = float(np.mod(np.angle(spec.amplitudes[k]), 2 * np.pi))
        out.append(Peak(float(f), float(p[k]), float(fwhm), phase))
    out.sort(key=lambda pk: -pk.amplitude)
    return out


def _msd(p: np.ndarray, ncut: int) -> np.ndarray:
    """Mean-square displacement M(n) = <(p[j+n] - p[j])^2>_j for n = 1..ncut."""
    n_pts = p.size
    sq = np.concatenate([[0.0], np.cumsum(p * p)])
    nfft = 1 << int(np.ceil(np.log2(2 * n_pts)))
    F = np.fft.rfft(p, nfft)
    acf = np.fft.irfft(F * np.conj(F), nfft)[: ncut + 1]
    lag = np.arange(ncut + 1)
    total = (sq[n_pts] - sq[lag]) + sq[n_pts - lag] - 2.0 * acf
    return (total / (n_pts - lag))[1:]


def strobe_factor(x: np.ndarray, sample_rate: float, min_length: int) -> int:
    """Largest decimation step that keeps ``min_length`` samples and leaves the
    (aliased) dominant spectral peak below a tenth of the new sample rate."""
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    power[0] = 0.0
    f_dom = np.argmax(power) * sample_rate / x.size
    for d in range(x.size // min_length, 1, -1):
        fs = sample_rate / d
        alias = abs(f_dom - round(f_dom / fs) * fs)
        if alias < fs / 10:
            return d
    return 1


def chaos_k(series, sample_rate: float = 1.0, seed=0, n_angles: int = 100,
            min_length: int = 2000) -> float:
    """Gottwald-Melbourne 0-1 test for chaos, median of K_c over random angles.

    The standardized series is first decimated by plain striding (see
    :func:`strobe_factor`) to remove oversampling.  Mean removal makes the
    oscillatory correction term of the modified mean-square displacement
    vanish, so D_c = M_c.
    """
    x = _as_series(series, min_length, "chaos_k")
    sd = x.std()
    if not sd > 0 or sd <= 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("chaos_k: series has zero variance")
    x = (x - x.mean()) / sd
    x = x[:: strobe_factor(x, sample_rate, min_length)]
    x = (x - x.mean()) / x.std()
    n_pts = x.size
    ncut = n_pts // 10
    j = np.arange(1, n_pts + 1)
    lags = np.arange(1, ncut + 1, dtype=float)
    rng = np.random.default_rng(seed)
    kc = np.empty(n_angles)
    for i, c in enumerate(rng.uniform(np.pi / 5, 4 * np.pi / 5, n_angles)):
        p = np.cumsum(x * np.cos(j * c))
        q = np.cumsum(x * np.sin(j * c))
        d = _msd(p, ncut) + _msd(q, ncut)
        kc[i] = np.corrcoef(lags, d)[0, 1] if d.std() > 0 else 0.0
    kc = np.nan_to_num(kc, nan=0.0)
    return float(np.clip(np.median(kc), 0.0, 1.0))


def permutation_entropy(series, order: int = 5, delay: int = 1) -> float:
    """Normalized Shannon entropy of ordinal patterns, in [0, 1]."""
    x = np.asarray(series, dtype=float)
    n = x.size - (order - 1) * delay
    if n < 1:
        raise ValueError("series too short for the embedding")
    emb = np.lib.stride_tricks.sliding_window_view(x, (order - 1) * delay + 1)[:, ::delay]
    ranks = np.argsort(emb, axis=1, kind="stable")
    codes = ranks @ (order ** np.arange(order))
    _, counts = np.unique(codes, return_counts=True)
    prob = counts / counts.sum()
    return float(-(prob * np.log(prob)).sum() / math.log(math.factorial(order)))


def phase_at(series, sample_rate: float, f0: float) -> float:
    """Phase in [0, 2*pi) of the rectangular-window Fourier amplitude at the
    bin nearest ``f0``, referenced to the first sample."""
    x = _as_series(series, 2, "phase_at")
    n = x.size
    res = sample_rate / n
    k = int(round(f0 / res))
    if f0 < 0 or k < 1 or k > n // 2:
        raise ValueError(f"f0 = {f0} Hz outside the spectral range (0, {sample_rate / 2}]")
    t = np.arange(n)
    amp = np.dot(x - x.mean(), np.exp(-2j * np.pi * k * t / n))
    return float(np.mod(np.angle(amp), 2 * np.pi))


def phase_uniformity(phases) -> tuple[float, float]:
    """Mean resultant length R and Rayleigh p-value exp(-n R^2)."""
    ph = np.asarray(phases, dtype=float).reshape(-1)
    if ph.size < 8:
        raise ValueError("phase_uniformity needs at least 8 phases")
    r = float(np.abs(np.exp(1j * ph).sum()) / ph.size)
    return r, float(np.exp(-ph.size * r * r))


def circular_range(phases) -> float:
    """Length of the smallest arc containing all phases."""
    ph = np.sort(np.mod(np.asarray(phases, dtype=float), 2 * np.pi))
    gaps = np.diff(np.concatenate([ph, [ph[0] + 2 * np.pi]]))
    return float(2 * np.pi - gaps.max())


# -- classification ----------------------------------------------------------

def _fit_single(freqs, f_dom, tol, max_den):
    for q in range(1, max_den + 1):
        f1 = f_dom / q
        n = np.maximum(np.round(freqs / f1), 1)
        if np.all(np.abs(freqs - n * f1) <= tol * n):
            return f1
    return None


def _assign(freqs, f1, f2, max_order):
    m_range = np.arange(-max_order, max_order + 1)
    best_n = np.empty(freqs.size)
    best_m = np.empty(freqs.size)
    for i, f in enumerate(freqs):
        n = np.round((f - m_range * f2) / f1)
        err = np.abs(f - n * f1 - m_range * f2) + 1e-12 * np.abs(m_range)
        j = int(np.argmin(err))
        best_n[i], best_m[i] = n[j], m_range[j]
    return best_n, best_m


def _fit_double(freqs, f_dom, tol, max_order):
    others = freqs[np.abs(freqs - f_dom) > tol]
    if others.size == 0:
        return None
    diffs = np.abs(others - f_dom)
    # whole spacings first so the primitive pair wins over its sub-multiples
    candidates = list(dict.fromkeys(float(d / k) for k in (1, 2, 3) for d in np.sort(diffs)[:4]))
    for f2 in candidates:
        if f2 <= tol:
            continue
        f1 = f_dom
        for _ in range(2):
            n, m = _assign(freqs, f1, f2, max_order)
            A = np.column_stack([n, m])
            if np.linalg.matrix_rank(A) < 2:
                break
            (f1, f2), *_ = np.linalg.lstsq(A, freqs, rcond=None)
            if f2 < 0:
                f2 = -f2
        else:
            n, m = _assign(freqs, f1, f2, max_order)
            resid = np.abs(freqs - n * f1 - m * f2)
            if f2 > tol and np.all(resid <= tol * np.maximum(np.abs(n), 1)) and np.any(m != 0):
                return float(f1), float(f2)
    return None


def is_incommensurate(f1: float, f2: float, tol: float, max_den: int = 10) -> bool:
    """No p/q with q <= max_den reproduces f2 within ``tol`` Hz."""
    ratio = Fraction(f2 / f1).limit_denominator(max_den)
    return bool(abs(f2 - float(ratio) * f1) > tol)


def classify(traj: Trajectory, config: AnalysisConfig = AnalysisConfig()) -> PhaseLabel:
    """Label a stationary-window trajectory from its mean_px series."""
    x = np.asarray(traj.mean_px, dtype=float)
    rms = float(np.sqrt(np.mean(x * x)))
    if rms < config.amplitude_floor:
        return PhaseLabel(Label.FIXED_POINT, 0.0, [], (), None, float("nan"), rms)

    spec = power_spectrum(x, traj.sample_rate, config.window)
    res = spec.resolution
    tol = config.comb_tolerance * res
    peaks = [p for p in find_peaks(spec, config.peak_floor) if p.freq > 2 * res]
    f_dom = peaks[0].freq if peaks else spec.freqs[np.argmax(spec.power)]
    pe = permutation_entropy(x, 5, max(1, int(round(traj.sample_rate / (5 * f_dom)))))

    k = chaos_k(x, traj.sample_rate, seed=traj.seed, n_angles=config.n_angles,
                min_length=config.k_min_length)

    def label(kind, bases=(), incomm=None):
        return PhaseLabel(kind, k, peaks, tuple(bases), incomm, pe, rms, res)

    if k > config.chaos_threshold or not peaks:
        return label(Label.CHAOTIC)
    freqs = np.array([p.freq for p in peaks])
    f1 = _fit_single(freqs, f_dom, tol, config.max_denominator)
    if f1 is not None:
        return label(Label.LIMIT_CYCLE, (f1,))
    fit = _fit_double(freqs, f_dom, tol, config.max_order)
    if fit is not None:
        f1, f2 = fit
        return label(Label.QUASI_PERIODIC, (f1, f2),
                     is_incommensurate(f1, f2, tol, config.max_denominator))
    return label(Label.CHAOTIC)


def poincare_shape(points: PoincarePoints, cluster_frac: float = 0.02,
                   thickness: float = 0.2, radii=(0.25, 0.125, 0.0625), k: int = 16,
                   n_probes: int = 16, max_points: int = 4000) -> SectionShape:
    """Cluster / ClosedCurve / Scattered geometry of a Poincare section.

    Cluster: point-set diameter below ``cluster_frac`` of the trajectory
    amplitude.  Otherwise the points are standardized (a fixed random subset
    of ``max_points`` for long sections) and tested for a thin, gap-free,
    closed curve:

    - thin: around each point, in a ball of radius r (grown to the k-th
      neighbour in sparse sets), a quadratic is fitted across the local
      principal direction.  The median residual rms over r must stay below
      ``thickness`` at one of ``radii``: large balls average out noise,
      small ones separate branches that run close together.  Filled sets
      sit near 0.4 at every scale.
    - gap-free: linking points closer than two ball radii connects them all.
    - closed: cutting out a ball around a probe point leaves the rest
      connected for three quarters of ``n_probes`` probes.  An open arc
      splits almost everywhere, a self-intersecting curve only at its
      crossings.

    Unlike a tour about the centroid this accepts curves that wind around
    it more than once or cross themselves.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    if len(points) < 30:
        raise ValueError(f"poincare_shape needs >= 30 points, got {len(points)}")
    xy = np.column_stack([points.mean_px, points.mean_pz])
    if _diameter(xy) < cluster_frac * points.amplitude:
        return SectionShape.CLUSTER
    if len(xy) > max_points:
        # random, not strided: a stride can alias with the rotation number
        # and leave part of a quasi-periodic curve empty
        xy = xy[np.sort(np.random.default_rng(0).choice(len(xy), max_points, replace=False))]
    sd = xy.std(axis=0)
    z = (xy - xy.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    n = len(z)
    tree = cKDTree(z)
    r_k = tree.query(z, min(k, n - 1) + 1)[0][:, -1]

    best, rad = np.inf, None
    for r in radii:
        rr = np.maximum(r, r_k)
        resid = np.empty(n)
        for i, nb in enumerate(tree.query_ball_point(z, rr)):
            d = z[nb] - z[i]
            v = np.linalg.eigh(d.T @ d)[1]
            s, h = d @ v[:, 1], d @ v[:, 0]
            A = np.column_stack([np.ones_like(s), s, s * s])
            resid[i] = (h - A @ np.linalg.lstsq(A, h, rcond=None)[0]).std() / rr[i]
        if np.median(resid) < best:
            best, rad = float(np.median(resid)), rr
    if best >= thickness:
        return SectionShape.SCATTERED

    link = 2 * np.median(rad)
    pairs = tree.query_pairs(link, output_type="ndarray")

    def largest_share(keep):
        idx = np.flatnonzero(keep)
        pos = np.full(n, -1)
        pos[idx] = np.arange(len(idx))
        p = pairs[keep[pairs[:, 0]] & keep[pairs[:, 1]]]
        g = coo_matrix((np.ones(len(p)), (pos[p[:, 0]], pos[p[:, 1]])), shape=(len(idx), len(idx)))
        return np.bincount(connected_components(g, directed=False)[1]).max() / len(idx)

    if largest_share(np.ones(n, bool)) < 0.99:
        return SectionShape.SCATTERED  # gaps
    probes = np.linspace(0, n, n_probes, endpoint=False).astype(int)
    intact = [largest_share(np.linalg.norm(z - z[j], axis=1) > 2 * link) > 0.95 for j in probes]
    if np.mean(intact) >= 0.75:
        return SectionShape.CLOSED_CURVE
    return SectionShape.SCATTERED


def _diameter(xy: np.ndarray) -> float:
    from scipy.spatial import ConvexHull
    from scipy.spatial.distance import pdist

    if len(xy) > 3:
        try:
            xy = xy[ConvexHull(xy).vertices]
        except Exception:  # degenerate (collinear or coincident) sets
            pass
    # convex curves put every point on the hull; a strided hull loses only a
    # sliver of the diameter and keeps pdist small
    xy = xy[::max(1, len(xy) // 2000)]
    return float(pdist(xy).max()) if len(xy) > 1 else 0.0
