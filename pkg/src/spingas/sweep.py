"""Parameter scans, repeated-realization phase experiments and noise scans.

Every point is an independent integration whose seed depends only on the base
seed and the point's own axis value, so results do not depend on the worker
count, on scheduling, or on which other values are in the scan.
"""
from __future__ import annotations

import enum
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import analysis as an
from .integrate import IntegrationConfig, IntegrationError, poincare, simulate
from .model import (GAMMA_XE129, FrequencyGrid, GridKind, PhysicalParams, build_grid,
                    convert_gradient)

log = logging.getLogger(__name__)


class Axis(str, enum.Enum):
    ALPHA = "alpha"
    GRADIENT = "gradient"
    NOISE = "noise"
    SEED = "seed"


class SweepError(RuntimeError):
    pass


def derive_seed(base_seed: int, value) -> int:
    """Stable 64-bit seed from the base seed and an axis value."""
    key = f"{int(base_seed)}:{float(value).hex()}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SweepSpec:
    axis: Axis
    values: tuple
    base_params: PhysicalParams
    base_config: IntegrationConfig
    workers: int = 1
    grid_kind: GridKind = GridKind.UNIFORM
    n_nodes: int = 64
    cell_length: float = 2.0  # cm, gradient axis only
    gamma: float = GAMMA_XE129
    analysis: an.AnalysisConfig = an.AnalysisConfig()
    spectrum_band: Optional[tuple] = None  # (fmin, fmax) Hz kept in each row
    with_section: bool = True

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "grid_kind", GridKind(self.grid_kind))
        vals = tuple(float(v) if self.axis is not Axis.SEED else int(v) for v in self.values)
        if not vals:
            raise ValueError("sweep needs at least one value")
        if self.axis is not Axis.SEED and any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "values", vals)

    def point(self, value):
        """(params, grid, config) for one axis value."""
        p, cfg = self.base_params, self.base_config
        if self.axis is Axis.ALPHA:
            p = p.with_(alpha=value)
            cfg = cfg.with_(seed=derive_seed(cfg.seed, value))
        elif self.axis is Axis.GRADIENT:
            p = p.with_(delta_omega=convert_gradient(value, self.cell_length, self.gamma))
            cfg = cfg.with_(seed=derive_seed(cfg.seed, value))
        elif self.axis is Axis.NOISE:
            cfg = cfg.with_(noise_amplitude=value)
        else:
            cfg = cfg.with_(seed=int(value))
        grid = build_grid(self.grid_kind, self.n_nodes, p.omega0, p.delta_omega)
        return p, grid, cfg


@dataclass
class SweepRow:
    value: float
    seed: int
    spectrum: Optional[an.Spectrum]
    k_value: float
    label: Optional[an.PhaseLabel]
    peak_freqs: list = field(default_factory=list)
    section: Optional[an.SectionShape] = None
    error: Optional[str] = None

    @property
    def phase(self) -> Optional[an.Label]:
        return None if self.label is None else self.label.label


def analyze_point(params: PhysicalParams, grid: FrequencyGrid, config: IntegrationConfig,
                  analysis: an.AnalysisConfig = an.AnalysisConfig(), band=None,
                  with_section: bool = True, value=float("nan")) -> SweepRow:
    """Integrate one operating point and run the full diagnostic chain on its
    stationary window."""
    try:
        traj = simulate(params, grid, config)
    except (IntegrationError, FloatingPointError) as exc:
        return SweepRow(value, config.seed, None, float("nan"), None, error=str(exc))
    window = traj.after(config.discard_time(params))
    label = an.classify(window, analysis)
    spec = an.power_spectrum(window.mean_px, window.sample_rate, analysis.window)
    if band is not None:
        spec = spec.crop(*band)
    section = None
    if with_section and label.label is not an.Label.FIXED_POINT:
        pts = poincare(window)
        if len(pts) >= 30:
            section = an.poincare_shape(pts)
    return SweepRow(value, config.seed, spec, label.k_value, label,
                    [p.freq for p in label.peaks], section)


def _run_point(args):
    spec, value = args
    try:
        p, grid, cfg = spec.point(value)
    except ValueError as exc:
        return SweepRow(value, -1, None, float("nan"), None, error=str(exc))
    return analyze_point(p, grid, cfg, spec.analysis, spec.spectrum_band,
                         spec.with_section, value)


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    """One row per axis value, in axis order.  Failed points are kept as rows
    carrying ``error``; :class:`SweepError` only when every point failed."""
    rows = _map(_run_point, [(spec, v) for v in spec.values], spec.workers)
    for r in rows:
        if r.error:
            log.warning("sweep point %s failed: %s", r.value, r.error)
    if all(r.error for r in rows):
        raise SweepError("all sweep points failed")
    return rows


# -- repeated realizations ----------------------------------------------------

@dataclass
class PhaseExperiment:
    seeds: list
    freqs: tuple  # locked evaluation frequencies, Hz
    phases: np.ndarray  # (realizations, len(freqs))
    resultant_length: list
    rayleigh_p: list
    circular_range: list
    label: an.PhaseLabel


def _phases_of(args):
    params, grid, cfg, freqs = args
    traj = simulate(params, grid, cfg)
    window = traj.after(cfg.discard_time(params))
    return [an.phase_at(window.mean_px, window.sample_rate, f) for f in freqs]


def run_phase_experiment(n_realizations: int, params: PhysicalParams, grid: FrequencyGrid,
                         config: IntegrationConfig,
                         analysis: an.AnalysisConfig = an.AnalysisConfig(),
                         same_seed: bool = False, workers: int = 1) -> PhaseExperiment:
    """Repeat one operating point with different initial fluctuations and read
    the Fourier phase at frequencies locked from the first run.

    A limit cycle is probed at its dominant line; a quasi-periodic state at its
    two strongest comb lines.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    seeds = [config.seed if same_seed else derive_seed(config.seed, i)
             for i in range(n_realizations)]
    first = simulate(params, grid, config.with_(seed=seeds[0]))
    window = first.after(config.discard_time(params))
    label = an.classify(window, analysis)
    if label.label is an.Label.LIMIT_CYCLE:
        freqs = (label.peaks[0].freq,)
    elif label.label is an.Label.QUASI_PERIODIC:
        freqs = tuple(p.freq for p in label.peaks[:2])
    else:
        raise ValueError(f"operating point is not oscillatory ({label.label.value})")

    first_phases = [an.phase_at(window.mean_px, window.sample_rate, f) for f in freqs]
    rest = _map(_phases_of, [(params, grid, config.with_(seed=s), freqs) for s in seeds[1:]],
                workers)
    phases = np.array([first_phases] + rest)
    stats = [an.phase_uniformity(phases[:, j]) if n_realizations >= 8 else (np.nan, np.nan)
             for j in range(len(freqs))]
    return PhaseExperiment(seeds, freqs, phases, [s[0] for s in stats], [s[1] for s in stats],
                           [an.circular_range(phases[:, j]) for j in range(len(freqs))], label)


# -- noise robustness -----------------------------------------------------------

@dataclass
class NoiseRow(SweepRow):
    survives: Optional[bool] = None


def run_noise_scan(amplitudes: Sequence[float], params: PhysicalParams, grid: FrequencyGrid,
                   config: IntegrationConfig,
                   analysis: an.AnalysisConfig = an.AnalysisConfig(),
                   workers: int = 1, band=None) -> tuple[SweepRow, list[NoiseRow]]:
    """Analyze the operating point at each noise amplitude.

    Returns the zero-noise reference row and one row per amplitude.  A row's
    fundamental survives when a peak above the floor lies within one
    resolution bin of the zero-noise dominant frequency.
    """
    amps = [float(a) for a in amplitudes]
    if any(a < 0 for a in amps) or any(b <= a for a, b in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be non-negative and strictly increasing")
    base_cfg = config.with_(noise_amplitude=0.0)
    ref = analyze_point(params, grid, base_cfg, analysis, band, False, 0.0)
    if ref.phase is not an.Label.LIMIT_CYCLE:
        got = ref.error or (ref.phase.value if ref.phase else "none")
        raise ValueError(f"noise scan base point is not a limit cycle ({got})")
    f0 = ref.label.peaks[0].freq
    res = ref.label.resolution

    items = [(params, grid, config.with_(noise_amplitude=a), analysis, band, a) for a in amps]
    rows = _map(_noise_point, items, workers)
    out = []
    for r in rows:
        ok = None
        if r.label is not None:
            ok = any(abs(p.freq - f0) <= res and p.amplitude >= analysis.peak_floor
                     for p in r.label.peaks)
        out.append(NoiseRow(r.value, r.seed, r.spectrum, r.k_value, r.label, r.peak_freqs,
                            r.section, r.error, ok))
    return ref, out


def _noise_point(args):
    params, grid, cfg, analysis, band, a = args
    return analyze_point(params, grid, cfg, analysis, band, False, a)


def smoothed_trend(values: Sequence[float]) -> np.ndarray:
    """Running median over 3 neighbours (end points use the available two)."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    for i in range(v.size):
        out[i] = np.median(v[max(0, i - 1): i + 2])
    return out
