"""Linear stability of the no-signal fixed point and the masing threshold."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import FrequencyGrid, PhysicalParams


class NoThresholdError(RuntimeError):
    def __init__(self, cap: float):
        self.cap = cap
        super().__init__(f"no threshold found: fixed point stable for all alpha <= {cap:g} rad/s")


@dataclass
class StabilityReport:
    alpha_c: float
    leading_eigenvalue: complex  # at the queried params.alpha
    fixed_point_pz: float
    bracket: tuple = ()
    trail: list = field(default_factory=list)  # (alpha, max real part) visited

    def to_text(self) -> str:
        lines = [
            "[stability]",
            f"alpha_c = {self.alpha_c!r}",
            f"fixed_point_pz = {self.fixed_point_pz!r}",
            f"leading_eigenvalue = {self.leading_eigenvalue.real!r} {self.leading_eigenvalue.imag:+.17g}j",
            f"bracket = {self.bracket[0]!r}, {self.bracket[1]!r}" if self.bracket else "bracket =",
            "",
            "[trail]",
        ]
        lines += [f"{a!r} = {g!r}" for a, g in self.trail]
        return "\n".join(lines) + "\n"


def linearize(params: PhysicalParams, grid: FrequencyGrid, full: bool = False) -> np.ndarray:
    """Jacobian at P_i = (0, 0, R_SE*T1).

    Default is the transverse 2N x 2N block in (px_1..px_N, py_1..py_N) order;
    the pz rows decouple there.  ``full=True`` appends the diagonal pz block.
    """
    n = grid.n
    w = grid.nodes
    g2 = params.inv_t2
    jac = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    jac[idx, idx] = -g2
    jac[n + idx, n + idx] = -g2
    jac[idx, n + idx] = w
    jac[n + idx, idx] = -w
    jac[:n, :n] += params.alpha * params.pz0 * grid.weights[None, :]
    if not full:
        return jac
    out = np.zeros((3 * n, 3 * n))
    out[: 2 * n, : 2 * n] = jac
    out[2 * n + idx, 2 * n + idx] = -params.inv_t1
    return out


def leading_eigenvalue(params: PhysicalParams, grid: FrequencyGrid) -> complex:
    ev = np.linalg.eigvals(linearize(params, grid))
    return complex(ev[np.argmax(ev.real)])


def critical_alpha(params: PhysicalParams, grid: FrequencyGrid, tol: float = 1e-6,
                   cap: float = 1e6) -> StabilityReport:
    """Bisection on alpha for the zero crossing of the leading real part.

    The upper end of the bracket starts at 1 rad/s and doubles until the fixed
    point is unstable; :class:`NoThresholdError` if ``cap`` is passed first.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    trail = []

    def growth(alpha):
        g = leading_eigenvalue(params.with_(alpha=alpha), grid).real
        trail.append((alpha, g))
        return g

    lo, hi = 0.0, 1.0
    while growth(hi) <= 0:
        lo = hi
        hi *= 2.0
        if hi > cap:
            raise NoThresholdError(cap)
    bracket = (lo, hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if growth(mid) > 0:
            hi = mid
        else:
            lo = mid
    return StabilityReport(0.5 * (lo + hi), leading_eigenvalue(params, grid),
                           params.pz0, bracket, trail)
