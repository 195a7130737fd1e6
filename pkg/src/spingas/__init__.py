"""Mean-field spin-maser ensemble: simulation, spectral diagnostics and
phase-diagram sweeps."""
from .model import (GAMMA_XE129, EnsembleState, FeedbackSign, FrequencyGrid, GridKind,
                    PhysicalParams, bloch_rhs, build_grid, convert_gradient, initial_state,
                    mean_px)
from .integrate import (IntegrationConfig, IntegrationError, PoincarePoints, Trajectory,
                        integrate, integrate_sde, poincare, simulate)
from .analysis import (AnalysisConfig, Label, PhaseLabel, SectionShape, Spectrum, Window,
                       chaos_k, classify, find_peaks, permutation_entropy, phase_at,
                       phase_uniformity, poincare_shape, power_spectrum)
from .stability import NoThresholdError, StabilityReport, critical_alpha, leading_eigenvalue, linearize
from .sweep import (Axis, SweepRow, SweepSpec, derive_seed, run_noise_scan,
                    run_phase_experiment, run_sweep)

__version__ = "0.1.0"
