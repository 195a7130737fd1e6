"""Nonlinear Bloch equations for a feedback-coupled, gradient-broadened spin gas.

Each frequency node i of the Larmor distribution carries a polarization
(px, py, pz).  All nodes are coupled through the quadrature average of px,
which is what the detector sees and what the feedback coil feeds back along y.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

TWO_PI = 2.0 * np.pi

#: 129Xe gyromagnetic ratio, 2*pi * 11.777 Hz/uT, expressed in rad s^-1 nT^-1.
GAMMA_XE129 = TWO_PI * 11.777e-3

#: Lorentzian grids are truncated at this many half-widths.
LORENTZ_TRUNCATION = 10.0


class FeedbackSign(str, enum.Enum):
    """Sign of the feedback term in the pz equation."""

    NORM_CONSERVING = "norm_conserving"
    PAPER_LITERAL = "paper_literal"

    @property
    def factor(self) -> float:
        return -1.0 if self is FeedbackSign.NORM_CONSERVING else 1.0


class GridKind(str, enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    LORENTZIAN = "lorentzian"


@dataclass(frozen=True)
class PhysicalParams:
    """Scalar constants of the model.

    Frequencies are in rad/s and times in s.  ``t1``/``t2`` may be ``inf``
    to switch a relaxation channel off.
    """

    alpha: float = 0.0
    t1: float = 30.0
    t2: float = 20.0
    r_se: float = 0.01
    omega0: float = TWO_PI * 10.0
    delta_omega: float = 0.0
    feedback_sign: FeedbackSign = FeedbackSign.NORM_CONSERVING

    def __post_init__(self):
        object.__setattr__(self, "feedback_sign", FeedbackSign(self.feedback_sign))
        if not (self.t1 > 0 and self.t2 > 0):
            raise ValueError(f"t1 and t2 must be positive, got t1={self.t1}, t2={self.t2}")
        if not self.r_se >= 0:
            raise ValueError(f"r_se must be >= 0, got {self.r_se}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.delta_omega >= 0:
            raise ValueError(f"delta_omega must be >= 0, got {self.delta_omega}")
        if not self.omega0 > self.delta_omega:
            raise ValueError(
                f"omega0={self.omega0} must exceed delta_omega={self.delta_omega}"
            )

    @property
    def inv_t1(self) -> float:
        return 1.0 / self.t1

    @property
    def inv_t2(self) -> float:
        return 1.0 / self.t2

    @property
    def pz0(self) -> float:
        """Longitudinal polarization of the no-signal fixed point, R_SE*T1."""
        if self.r_se == 0.0:
            return 0.0
        return self.r_se * self.t1

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Quadrature discretization of the Larmor frequency density."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: GridKind = GridKind.UNIFORM

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.size < 1 or nodes.size != weights.size:
            raise ValueError("nodes and weights must be non-empty and of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "kind", GridKind(self.kind))

    def __len__(self) -> int:
        return self.nodes.size

    @property
    def n(self) -> int:
        return self.nodes.size


@dataclass
class EnsembleState:
    """Per-node polarization components; also used for time derivatives."""

    px: np.ndarray
    py: np.ndarray
    pz: np.ndarray

    def __post_init__(self):
        self.px = np.asarray(self.px, dtype=float).reshape(-1)
        self.py = np.asarray(self.py, dtype=float).reshape(-1)
        self.pz = np.asarray(self.pz, dtype=float).reshape(-1)
        if not (self.px.size == self.py.size == self.pz.size):
            raise ValueError("px, py, pz must share one length")

    @property
    def n(self) -> int:
        return self.px.size

    def as_array(self) -> np.ndarray:
        """Stacked (3, N) copy."""
        return np.vstack([self.px, self.py, self.pz])

    @classmethod
    def from_array(cls, arr) -> "EnsembleState":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy())

    def norms(self) -> np.ndarray:
        return np.sqrt(self.px**2 + self.py**2 + self.pz**2)

    def copy(self) -> "EnsembleState":
        return EnsembleState(self.px.copy(), self.py.copy(), self.pz.copy())


def build_grid(kind, n_nodes: int, omega0: float, delta_omega: float) -> FrequencyGrid:
    """Discretize the Larmor density into ``n_nodes`` equal-weight nodes.

    Uniform: equally spaced nodes spanning [omega0 - delta_omega, omega0 + delta_omega]
    inclusive.  Gaussian (std = delta_omega) and Lorentzian (HWHM = delta_omega,
    truncated at +-10 HWHM): probability midpoints of equal-probability bins.
    A zero spread, or one below floating-point resolution at omega0,
    collapses to the single node omega0.
    """
    kind = GridKind(kind)
    n_nodes = int(n_nodes)
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    if not delta_omega >= 0:
        raise ValueError(f"delta_omega must be >= 0, got {delta_omega}")
    if n_nodes == 1 or delta_omega <= 1e-12 * abs(omega0):
        return FrequencyGrid(np.array([float(omega0)]), np.array([1.0]), kind)

    weights = np.full(n_nodes, 1.0 / n_nodes)
    if kind is GridKind.UNIFORM:
        nodes = np.linspace(omega0 - delta_omega, omega0 + delta_omega, n_nodes)
    else:
        q = (np.arange(n_nodes) + 0.5) / n_nodes
        if kind is GridKind.GAUSSIAN:
            nodes = omega0 + delta_omega * stats.norm.ppf(q)
        else:
            # equal-probability bins of the truncated Cauchy law
            c = stats.cauchy.cdf(LORENTZ_TRUNCATION)
            nodes = omega0 + delta_omega * stats.cauchy.ppf((1 - c) + q * (2 * c - 1))
        # exact mirror symmetry about omega0
        nodes = omega0 + 0.5 * ((nodes - omega0) - (nodes - omega0)[::-1])
    if nodes[0] <= 0:
        raise ValueError("frequency grid crosses zero; reduce delta_omega")
    return FrequencyGrid(nodes, weights, kind)


def convert_gradient(g: float, cell_length: float, gamma: float = GAMMA_XE129) -> float:
    """Half-spread of Larmor frequencies (rad/s) for gradient ``g`` (nT/cm)
    across a cell of ``cell_length`` cm centered on the gradient midpoint."""
    if g < 0 or cell_length < 0 or gamma < 0:
        raise ValueError("gradient, cell length and gamma must be non-negative")
    return gamma * g * cell_length / 2.0


def mean_px(state: EnsembleState, grid: FrequencyGrid) -> float:
    """Quadrature average of px over the frequency distribution."""
    if state.n != grid.n:
        raise ValueError(f"state has {state.n} nodes, grid has {grid.n}")
    return float(np.dot(grid.weights, state.px))


def bloch_rhs(state: EnsembleState, params: PhysicalParams, grid: FrequencyGrid) -> EnsembleState:
    """Time derivative of every node's polarization."""
    m = mean_px(state, grid)
    if not (np.isfinite(m) and np.all(np.isfinite(state.py)) and np.all(np.isfinite(state.pz))
            and np.all(np.isfinite(state.px))):
        raise FloatingPointError("non-finite state passed to bloch_rhs")
    w = grid.nodes
    a = params.alpha
    dpx = w * state.py + a * state.pz * m - state.px * params.inv_t2
    dpy = -w * state.px - state.py * params.inv_t2
    dpz = params.feedback_sign.factor * a * state.px * m - state.pz * params.inv_t1 + params.r_se
    return EnsembleState(dpx, dpy, dpz)


def initial_state(
    params: PhysicalParams, grid: FrequencyGrid, sigma: float = 1e-6, seed=None
) -> EnsembleState:
    """Fixed point plus seeded Gaussian transverse fluctuations of scale ``sigma``."""
    rng = np.random.default_rng(seed)
    n = grid.n
    px = sigma * rng.standard_normal(n)
    py = sigma * rng.standard_normal(n)
    return EnsembleState(px, py, np.full(n, params.pz0))
