import numpy as np
import pytest

from spingas.integrate import IntegrationConfig, simulate
from spingas.model import EnsembleState, PhysicalParams, bloch_rhs, build_grid
from spingas.stability import (NoThresholdError, critical_alpha, leading_eigenvalue,
                               linearize)

W0 = 2 * np.pi * 10


def test_alpha_zero_eigenvalues():
    p = PhysicalParams(delta_omega=0.3)
    g = build_grid("uniform", 6, p.omega0, p.delta_omega)
    jac = linearize(p, g, full=True)
    ev = np.linalg.eigvals(jac)
    want = np.concatenate([-1 / 20 + 1j * g.nodes, -1 / 20 - 1j * g.nodes, np.full(6, -1 / 30)])
    by_imag = lambda z: z[np.lexsort((z.real, np.round(z.imag, 8)))]
    np.testing.assert_allclose(by_imag(ev), by_imag(want), atol=1e-10)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 3.0, 400.0, 500.0])
def test_single_node_closed_form(alpha):
    p = PhysicalParams(alpha=alpha)
    g = build_grid("uniform", 1, p.omega0, 0)
    ev = np.linalg.eigvals(linearize(p, g))
    a = alpha * p.pz0
    disc = np.sqrt(complex(a * a / 4 - W0**2))
    want = [(a - 2 / 20) / 2 + disc, (a - 2 / 20) / 2 - disc]
    np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex(want), rtol=1e-9, atol=1e-9)


def test_jacobian_matches_finite_differences():
    p = PhysicalParams(alpha=1.7, delta_omega=0.4)
    g = build_grid("uniform", 5, p.omega0, p.delta_omega)
    n = g.n
    x0 = np.concatenate([np.zeros(2 * n), np.full(n, p.pz0)])

    def f(x):
        return bloch_rhs(EnsembleState.from_array(x.reshape(3, n)), p, g).as_array().ravel()

    h = 1e-7
    fd = np.empty((3 * n, 3 * n))
    for j in range(3 * n):
        e = np.zeros(3 * n)
        e[j] = h
        fd[:, j] = (f(x0 + e) - f(x0 - e)) / (2 * h)
    jac = linearize(p, g, full=True)
    scale = np.maximum(np.abs(jac), 1.0)
    assert np.max(np.abs(fd - jac) / scale) < 1e-6


def test_critical_alpha_closed_form():
    p = PhysicalParams()
    g = build_grid("uniform", 1, p.omega0, 0)
    rep = critical_alpha(p, g, tol=1e-9)
    assert rep.alpha_c == pytest.approx(2 / (20 * 0.01 * 30), abs=1e-8)
    assert rep.fixed_point_pz == pytest.approx(0.3)
    g_at = leading_eigenvalue(p.with_(alpha=rep.alpha_c), g).real
    assert abs(g_at) < 1e-6
    assert rep.bracket[0] < rep.alpha_c <= rep.bracket[1]


@pytest.mark.parametrize("f0", [1.0, 10.0, 50.0])
def test_threshold_independent_of_omega0(f0):
    p = PhysicalParams(omega0=2 * np.pi * f0)
    g = build_grid("uniform", 1, p.omega0, 0)
    assert critical_alpha(p, g, tol=1e-9).alpha_c == pytest.approx(1 / 3, abs=1e-8)


def test_threshold_scales_with_inverse_t2():
    g = build_grid("uniform", 1, W0, 0)
    a1 = critical_alpha(PhysicalParams(t2=20.0), g, tol=1e-10).alpha_c
    a2 = critical_alpha(PhysicalParams(t2=10.0), g, tol=1e-10).alpha_c
    assert a2 == pytest.approx(2 * a1, rel=1e-8)


def test_small_spread_limit():
    # the spread must be small against 1/T2 = 0.05 rad/s, not only against omega0
    vals = []
    for frac in (1e-3, 3e-4, 1e-4, 1e-5):
        p = PhysicalParams(delta_omega=frac * W0)
        g = build_grid("uniform", 64, p.omega0, p.delta_omega)
        vals.append(critical_alpha(p, g).alpha_c)
    assert np.all(np.diff(vals) < 0)
    assert vals[2] == pytest.approx(1 / 3, rel=0.01)
    assert vals[3] == pytest.approx(1 / 3, rel=1e-3)


def test_spread_raises_threshold():
    vals = []
    for dw in (0.0, 0.1, 0.2, 0.4):
        g = build_grid("uniform", 64, W0, dw)
        vals.append(critical_alpha(PhysicalParams(delta_omega=dw), g).alpha_c)
    assert np.all(np.diff(vals) > 0)


def test_no_threshold_without_pumping():
    p = PhysicalParams(r_se=0.0)
    g = build_grid("uniform", 4, p.omega0, 0.1)
    with pytest.raises(NoThresholdError) as exc:
        critical_alpha(p, g, cap=1e3)
    assert "no threshold" in str(exc.value)


def test_eigenvalues_conjugate_closed():
    p = PhysicalParams(alpha=2.0, delta_omega=0.3)
    g = build_grid("gaussian", 16, p.omega0, p.delta_omega)
    ev = np.linalg.eigvals(linearize(p, g))
    np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex(ev.conj()), atol=1e-9)


def test_report_text():
    g = build_grid("uniform", 1, W0, 0)
    text = critical_alpha(PhysicalParams(alpha=1.0), g).to_text()
    assert text.startswith("[stability]") and "alpha_c = " in text and "[trail]" in text


def test_bad_tolerance():
    with pytest.raises(ValueError):
        critical_alpha(PhysicalParams(), build_grid("uniform", 1, W0, 0), tol=0)


@pytest.mark.parametrize("n,dw", [(1, 0.0), (64, 0.1)])
def test_nonlinear_run_brackets_threshold(n, dw):
    p = PhysicalParams(delta_omega=dw)
    g = build_grid("uniform", n, p.omega0, dw)
    ac = critical_alpha(p, g).alpha_c
    cfg = IntegrationConfig(t_end=1500.0, record_stride=20, seed=1)
    below = simulate(p.with_(alpha=0.9 * ac), g, cfg)
    above = simulate(p.with_(alpha=1.1 * ac), g, cfg)
    tail = slice(-2000, None)
    assert np.sqrt(np.mean(below.mean_px[tail] ** 2)) < 1e-7
    assert np.sqrt(np.mean(above.mean_px[tail] ** 2)) > 10 * 1e-6
