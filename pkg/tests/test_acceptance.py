"""Acceptance criteria 1-9.  Each test prints one PASS/FAIL line, repeated in
the terminal summary.  The heavy sweeps run once per module and are shared."""
import csv
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from spingas import analysis as an
from spingas.analysis import Label, SectionShape
from spingas.cli import main
from spingas.config import load_config
from spingas.integrate import IntegrationConfig, Trajectory, integrate, poincare, simulate
from spingas.model import EnsembleState, PhysicalParams, build_grid, initial_state
from spingas.stability import critical_alpha
from spingas.sweep import (SweepSpec, run_noise_scan, run_phase_experiment, run_sweep,
                           smoothed_trend)

WORKERS = os.cpu_count() or 1
GOLDEN = (1 + 5**0.5) / 2


@contextmanager
def criterion(log, n, title):
    note = []
    t0 = time.time()
    try:
        yield note
    except BaseException as exc:
        msg = f"{type(exc).__name__}: {exc}".splitlines()[0][:160]
        log(f"criterion {n}: FAIL  {title}  ({time.time() - t0:.0f} s) {'; '.join(note)} {msg}")
        raise
    log(f"criterion {n}: PASS  {title}  ({time.time() - t0:.0f} s) {'; '.join(note)}")


def spec_from(cfg, values=None, workers=WORKERS):
    return SweepSpec(cfg.sweep.get("axis", "alpha"), values or cfg.sweep["values"], cfg.params,
                     cfg.integration, workers, cfg.grid_kind, cfg.n_nodes,
                     analysis=cfg.analysis, spectrum_band=cfg.spectrum_band)


def preset_window(name):
    cfg = load_config(preset=name)
    grid = build_grid(cfg.grid_kind, cfg.n_nodes, cfg.params.omega0, cfg.params.delta_omega)
    traj = simulate(cfg.params, grid, cfg.integration)
    return traj.after(cfg.integration.discard_time(cfg.params)), cfg


def comb_spacing_variance(label):
    """Variance of the spacing between comb lines, each gap divided by the
    number of comb steps it spans."""
    f = np.sort([p.freq for p in label.peaks])
    step = min(label.base_freqs)
    k = np.round((f - label.peaks[0].freq) / step)
    return float(np.var(np.diff(f) / np.diff(k)))


@pytest.fixture(scope="module")
def alpha_sweep():
    cfg = load_config(preset="fig3a-scan")
    return run_sweep(spec_from(cfg))


# -- 1 ------------------------------------------------------------------------------

def test_c1_conservation_and_reductions(acceptance_log):
    with criterion(acceptance_log, 1, "conservation & reduction suite") as note:
        t0 = time.time()
        # norm drift over 1000 steps, relaxation and pumping off
        p = PhysicalParams(alpha=3.0, t1=np.inf, t2=np.inf, r_se=0.0, delta_omega=0.5)
        g = build_grid("uniform", 16, p.omega0, p.delta_omega)
        v = np.random.default_rng(0).normal(size=(3, 16))
        v *= 0.8 / np.linalg.norm(v, axis=0)
        cfg = IntegrationConfig(dt=2.5e-4, t_end=0.25, record_stride=1000,
                                record_full_state=True)
        tr = integrate(EnsembleState.from_array(v), p, g, cfg)
        drift = np.max(np.abs(tr.state_at(-1).norms() / tr.state_at(0).norms() - 1))
        note.append(f"norm drift {drift:.1e}")
        assert drift <= 1e-9

        # alpha = 0, one node: damped precession
        p = PhysicalParams(alpha=0.0)
        g = build_grid("uniform", 1, p.omega0, 0.0)
        s = EnsembleState(np.array([1.0]), np.array([0.0]), np.array([p.pz0]))
        tr = integrate(s, p, g, IntegrationConfig(dt=2.5e-4, t_end=3 * p.t2, record_stride=4))
        env = np.exp(-tr.times / p.t2)
        err = max(np.max(np.abs(tr.mean_px - env * np.cos(p.omega0 * tr.times))),
                  np.max(np.abs(tr.mean_py + env * np.sin(p.omega0 * tr.times))))
        note.append(f"precession error {err:.1e}")
        assert err < 1e-6

        # no feedback: relaxation to (0, 0, R_SE T1)
        s = EnsembleState(np.array([0.5]), np.array([0.2]), np.array([-0.4]))
        tr = integrate(s, p, g, IntegrationConfig(t_end=15 * p.t1, record_stride=1000))
        gap = np.abs(np.array([tr.mean_px[-1], tr.mean_py[-1], tr.mean_pz[-1] - p.r_se * p.t1]))
        note.append(f"steady-state gap {gap.max():.1e}")
        assert gap.max() < 1e-6
        assert time.time() - t0 < 10


# -- 2 ------------------------------------------------------------------------------

def test_c2_threshold_oracles(acceptance_log):
    with criterion(acceptance_log, 2, "threshold oracle agreement") as note:
        t0 = time.time()
        p = PhysicalParams()
        g = build_grid("uniform", 1, p.omega0, 0.0)
        closed = 2 / (p.t2 * p.r_se * p.t1)
        oracle = critical_alpha(p, g).alpha_c

        def grows(alpha):
            q = p.with_(alpha=alpha)
            s = initial_state(q, g, 1e-6, seed=1)
            tr = integrate(s, q, g, IntegrationConfig(t_end=2000.0, record_stride=100))
            early = np.sqrt(np.mean(tr.mean_px[tr.times < 100] ** 2))
            late = np.sqrt(np.mean(tr.mean_px[tr.times > 1900] ** 2))
            return late > early

        lo, hi = 0.1, 1.0
        assert not grows(lo) and grows(hi)
        while hi - lo > 1e-3:
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if grows(mid) else (mid, hi)
        measured = 0.5 * (lo + hi)
        note.append(f"measured {measured:.4f}, oracle {oracle:.6f}, closed form {closed:.6f}")
        assert abs(measured - oracle) / oracle < 0.05
        assert abs(oracle - closed) / closed < 0.005
        assert time.time() - t0 < 120


# -- 3 ------------------------------------------------------------------------------

ORDER = [Label.FIXED_POINT, Label.LIMIT_CYCLE, Label.QUASI_PERIODIC, Label.CHAOTIC]


def test_c3_phase_taxonomy(acceptance_log, alpha_sweep):
    with criterion(acceptance_log, 3, "phase taxonomy along the alpha axis") as note:
        rows = alpha_sweep
        assert all(r.error is None for r in rows)
        labels = [r.phase for r in rows]
        first = {lab: labels.index(lab) for lab in ORDER if lab in labels}
        note.append("first appearances " + ", ".join(
            f"{lab.value}@{rows[i].value:g}" for lab, i in first.items()))
        wanted = ORDER if Label.CHAOTIC in first else ORDER[:3]
        if Label.CHAOTIC not in first:
            note.append("DEGRADED: no chaotic row on the alpha axis")
        assert all(lab in first for lab in wanted)
        assert [first[lab] for lab in wanted] == sorted(first[lab] for lab in wanted)
        worst = 0.0
        for r in rows:
            if r.phase is Label.QUASI_PERIODIC:
                ratio = comb_spacing_variance(r.label) / (0.25 * r.label.resolution) ** 2
                worst = max(worst, ratio)
        note.append(f"max comb variance / (0.25 res)^2 = {worst:.2e}")
        assert worst < 1.0


# -- 4 ------------------------------------------------------------------------------

def logistic(r, n, x0=0.4, burn=1000):
    x = np.empty(n + burn)
    x[0] = x0
    for i in range(1, n + burn):
        x[i] = r * x[i - 1] * (1 - x[i - 1])
    return x[burn:]


def test_c4_chaos_statistic(acceptance_log, alpha_sweep):
    with criterion(acceptance_log, 4, "chaos statistic calibration") as note:
        t0 = time.time()
        k_chaos = an.chaos_k(logistic(3.99, 5000))
        k_per = an.chaos_k(logistic(3.5, 5000))
        note.append(f"logistic K {k_chaos:.4f} / {k_per:.4f}")
        assert k_chaos > 0.99 and k_per < 0.05
        for name, want in (("fig2d-analog", Label.LIMIT_CYCLE),
                           ("fig2e-analog", Label.QUASI_PERIODIC)):
            w, cfg = preset_window(name)
            lab = an.classify(w, cfg.analysis)
            note.append(f"{want.value} K {lab.k_value:.4f}")
            assert lab.label is want and lab.k_value < 0.1
        chaotic = [r.k_value for r in alpha_sweep if r.phase is Label.CHAOTIC]
        assert chaotic
        note.append(f"sweep Chaotic rows K >= {min(chaotic):.4f}")
        assert min(chaotic) > 0.5
        assert time.time() - t0 < 60


# -- 5 ------------------------------------------------------------------------------

def test_c5_symmetry_breaking(acceptance_log):
    with criterion(acceptance_log, 5, "spontaneous symmetry breaking of the phase") as note:
        t0 = time.time()
        cfg = load_config(preset="fig2d-analog")
        grid = build_grid(cfg.grid_kind, cfg.n_nodes, cfg.params.omega0, cfg.params.delta_omega)
        exp = run_phase_experiment(50, cfg.params, grid, cfg.integration, cfg.analysis,
                                   workers=WORKERS)
        note.append(f"range {exp.circular_range[0]:.2f} rad, p {exp.rayleigh_p[0]:.3f}")
        assert exp.label.label is Label.LIMIT_CYCLE
        assert exp.circular_range[0] > 5.0 and exp.rayleigh_p[0] > 0.01
        same = run_phase_experiment(50, cfg.params, grid, cfg.integration, cfg.analysis,
                                    same_seed=True, workers=WORKERS)
        note.append(f"identical seeds R {same.resultant_length[0]:.6f}")
        assert same.resultant_length[0] > 0.999
        assert time.time() - t0 < 20 * 60


# -- 6 ------------------------------------------------------------------------------

def synthetic_torus(f1=10.0, f2=0.0123 * GOLDEN, rate=100.0, T=4000.0):
    t = np.arange(int(rate * T)) / rate
    r = 1 + 0.3 * np.cos(2 * np.pi * f2 * t)
    return Trajectory(t, r * np.cos(2 * np.pi * f1 * t), -r * np.sin(2 * np.pi * f1 * t),
                      0.3 + 0.05 * np.sin(2 * np.pi * f2 * t), rate)


def test_c6_poincare_geometry(acceptance_log, alpha_sweep):
    with criterion(acceptance_log, 6, "Poincare section geometry") as note:
        syn = an.poincare_shape(poincare(synthetic_torus()))
        note.append(f"synthetic torus {syn.value}")
        assert syn is SectionShape.CLOSED_CURVE
        want = {Label.LIMIT_CYCLE: SectionShape.CLUSTER,
                Label.QUASI_PERIODIC: SectionShape.CLOSED_CURVE,
                Label.CHAOTIC: SectionShape.SCATTERED}
        for lab, shape in want.items():
            rows = [r for r in alpha_sweep if r.phase is lab]
            hits = sum(r.section is shape for r in rows)
            note.append(f"{lab.value}: {hits}/{len(rows)} {shape.value}")
        for lab, shape in want.items():
            rows = [r for r in alpha_sweep if r.phase is lab]
            assert rows
            assert all(r.section is shape for r in rows), [
                (r.value, r.section) for r in rows if r.section is not shape]


# -- 7 ------------------------------------------------------------------------------

def test_c7_noise_robustness(acceptance_log):
    with criterion(acceptance_log, 7, "noise robustness scan") as note:
        t0 = time.time()
        cfg = load_config(preset="fig4-noise")
        grid = build_grid(cfg.grid_kind, cfg.n_nodes, cfg.params.omega0, cfg.params.delta_omega)
        ref, rows = run_noise_scan(cfg.noise["amplitudes"], cfg.params, grid, cfg.integration,
                                   cfg.analysis, WORKERS, cfg.spectrum_band)
        lowest = next(r for r in rows if r.value > 0)
        ks = [r.k_value for r in rows]
        trend = smoothed_trend(ks)
        note.append("K " + " ".join(f"{a:g}:{k:.3f}" for a, k in zip(cfg.noise["amplitudes"], ks)))
        assert lowest.survives
        assert np.all(np.diff(trend) >= 0)
        assert time.time() - t0 < 20 * 60


# -- 8 ------------------------------------------------------------------------------

def test_c8_gradient_axis_search(acceptance_log, tmp_path, capsys):
    with criterion(acceptance_log, 8, "gradient-axis sweep (exploratory)") as note:
        override = tmp_path / "short.ini"
        override.write_text("[integration]\nt_end = 16000.0\ndiscard = 4000.0\n"
                            "[sweep]\ncount = 10\n")
        code = main(["sweep", "--preset", "fig3b-scan", "--config", str(override),
                     "--out", str(tmp_path / "g"), "--workers", str(WORKERS)])
        capsys.readouterr()
        assert code == 0
        with open(tmp_path / "g" / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 10
        g = [float(r["value"]) for r in rows]
        k = [float(r["k_value"]) for r in rows]
        labels = [r["label"] for r in rows]
        assert g == sorted(g) and all(0 <= v <= 1 for v in k)
        assert set(labels) <= {lab.value for lab in Label}
        regular = {Label.LIMIT_CYCLE.value, Label.QUASI_PERIODIC.value}
        seq = "".join("r" if lab in regular else "c" if lab == Label.CHAOTIC.value else "-"
                      for lab in labels)
        # a regular row, later a chaotic one, later a regular one again
        i = seq.find("r")
        j = seq.find("c", i + 1) if i >= 0 else -1
        reverse = j >= 0 and "r" in seq[j + 1:]
        note.append("K(g) " + " ".join(f"{a:g}:{b:.2f}" for a, b in zip(g, k)))
        note.append(f"regular->chaotic->regular {'observed' if reverse else 'not observed'}")


# -- 9 ------------------------------------------------------------------------------

def test_c9_reproducibility(acceptance_log, tmp_path, capsys):
    with criterion(acceptance_log, 9, "reproducibility") as note:
        t0 = time.time()
        text = ("[physics]\nalpha = 1.0\n[grid]\nn_nodes = 16\ndelta_omega = 0.2\n"
                "[integration]\nt_end = 600.0\nseed = 42\n"
                "[sweep]\naxis = alpha\nstart = 0.5\nstop = 20.0\ncount = 10\n")
        (tmp_path / "run.ini").write_text(text)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["sweep", "--config", str(tmp_path / "run.ini"), "--out", str(a),
                     "--workers", "1"]) == 0
        assert main(["sweep", "--config", str(a / "manifest.ini"), "--out", str(b),
                     "--workers", str(WORKERS)]) == 0
        capsys.readouterr()
        files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
        assert len(files) == 11
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
        note.append(f"manifest re-run: {len(files)} files identical")

        cfg = load_config(a / "manifest.ini")
        r1 = run_sweep(spec_from(cfg, workers=1))
        r8 = run_sweep(spec_from(cfg, workers=8))
        for x, y in zip(r1, r8):
            assert (x.value, x.seed, x.k_value, x.peak_freqs, x.section) == \
                (y.value, y.seed, y.k_value, y.peak_freqs, y.section)
            assert repr(x.label) == repr(y.label)
            assert np.array_equal(x.spectrum.power, y.spectrum.power)
        note.append("workers 1 vs 8 identical")
        assert time.time() - t0 < 5 * 60
