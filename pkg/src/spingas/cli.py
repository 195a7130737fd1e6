"""Command-line entry point.

    spingas simulate   --config run.ini --out DIR
    spingas sweep      --preset fig3a-scan --out DIR --workers 4
    spingas stability  --config run.ini
    spingas phases     --preset fig2d-analog --out DIR
    spingas noise-scan --preset fig4-noise --out DIR

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 precondition violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import io
from .config import ConfigError, RunConfig, load_config, preset_names, sweep_values
from .integrate import IntegrationError, poincare, simulate
from .model import GAMMA_XE129, build_grid
from .stability import NoThresholdError, critical_alpha, leading_eigenvalue
from .sweep import Axis, SweepError, SweepSpec, run_noise_scan, run_phase_experiment, run_sweep

log = logging.getLogger("spingas")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PRECONDITION = 0, 2, 3, 4


class Precondition(RuntimeError):
    pass


def _grid(cfg: RunConfig):
    return build_grid(cfg.grid_kind, cfg.n_nodes, cfg.params.omega0, cfg.params.delta_omega)


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.integration = cfg.integration.with_(seed=args.seed)
    if cfg.alpha_over_alpha_c is not None:
        rep = critical_alpha(cfg.params, _grid(cfg))
        cfg.params = cfg.params.with_(alpha=cfg.alpha_over_alpha_c * rep.alpha_c)
        cfg.alpha_over_alpha_c = None
    out = args.out or cfg.out_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set [output] dir")
    cfg.out_dir = str(out)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} not writable: {exc.strerror}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} not writable")
    return out


def write_manifest(out: Path, cfg: RunConfig, command: str, extra: dict | None = None):
    """Resolved configuration plus a provenance section.  The file is itself a
    valid config: ``spingas <command> --config manifest.ini`` repeats the run."""
    prov = {"command": command, "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__}
    try:
        import scipy
        import numba
        prov.update(scipy=scipy.__version__, numba=numba.__version__)
    except ImportError:  # pragma: no cover
        pass
    prov.update(extra or {})
    text = cfg.dump() + "\n[provenance]\n" + "".join(f"{k} = {v}\n" for k, v in prov.items())
    (out / "manifest.ini").write_text(text)


def _report_text(label: an.PhaseLabel, extra: dict | None = None) -> str:
    lines = ["[classification]", f"label = {label.label.value}", f"k_value = {label.k_value!r}",
             f"rms = {label.rms!r}", f"permutation_entropy = {label.perm_entropy!r}",
             f"resolution_hz = {label.resolution!r}",
             "base_freqs_hz = " + ", ".join(repr(f) for f in label.base_freqs),
             f"incommensurate = {label.incommensurate}",
             f"peak_count = {len(label.peaks)}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines += ["", "[peaks]", "# freq_hz, amplitude, fwhm_hz, phase_rad"]
    lines += [f"{p.freq!r}, {p.amplitude!r}, {p.fwhm!r}, {p.phase!r}" for p in label.peaks]
    return "\n".join(lines) + "\n"


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> str:
    out = _outdir(cfg)
    write_manifest(out, cfg, "simulate")
    grid = _grid(cfg)
    traj = simulate(cfg.params, grid, cfg.integration)
    io.write_trajectory_bin(out / "trajectory.bin", traj, grid.n)
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    window = traj.after(cfg.integration.discard_time(cfg.params))
    label = an.classify(window, cfg.analysis)
    spec = an.power_spectrum(window.mean_px, window.sample_rate, cfg.analysis.window)
    if cfg.spectrum_band:
        spec = spec.crop(*cfg.spectrum_band)
    io.write_spectrum_csv(out / "spectrum.csv", spec)
    pts = poincare(window)
    io.write_poincare_csv(out / "poincare.csv", pts)
    extra = {"section": an.poincare_shape(pts).value if len(pts) >= 30 else "undetermined",
             "alpha": repr(cfg.params.alpha)}
    text = _report_text(label, extra)
    (out / "report.txt").write_text(text)
    return text


def cmd_stability(cfg: RunConfig) -> str:
    out = _outdir(cfg)
    write_manifest(out, cfg, "stability")
    try:
        rep = critical_alpha(cfg.params, _grid(cfg))
        text = rep.to_text()
    except NoThresholdError as exc:
        lead = leading_eigenvalue(cfg.params, _grid(cfg))
        text = ("[stability]\nalpha_c = none\n"
                f"result = {exc}\n"
                f"leading_eigenvalue = {lead.real!r} {lead.imag:+.17g}j\n")
    (out / "stability.txt").write_text(text)
    return text


def _sweep_spec(cfg: RunConfig, workers: int) -> SweepSpec:
    sw = cfg.sweep
    try:
        axis = Axis(sw.get("axis", "alpha"))
    except ValueError as exc:
        raise ConfigError(f"[sweep] axis: {exc}") from exc
    alpha_c = None
    if axis is Axis.ALPHA and "values" not in sw and "start" not in sw:
        alpha_c = critical_alpha(cfg.params, _grid(cfg)).alpha_c
    values = sweep_values({**sw, "axis": axis.value}, alpha_c)
    cell = sw.get("cell_length", cfg.gradient[1] if cfg.gradient else 2.0)
    gamma = sw.get("gamma", cfg.gradient[2] if cfg.gradient else GAMMA_XE129)
    # the resolved values go back into the manifest
    cfg.sweep = {"axis": axis.value, "values": values}
    if axis is Axis.GRADIENT:
        cfg.sweep.update(cell_length=float(cell), gamma=float(gamma))
    try:
        return SweepSpec(axis, values, cfg.params, cfg.integration, workers, cfg.grid_kind,
                         cfg.n_nodes, cell, gamma, cfg.analysis, cfg.spectrum_band)
    except ValueError as exc:
        raise ConfigError(f"[sweep] {exc}") from exc


def _summary_rows(rows):
    for r in rows:
        lab = r.label
        yield [repr(float(r.value)), str(r.seed), repr(r.k_value),
               lab.label.value if lab else "Error",
               " ".join(repr(f) for f in lab.base_freqs) if lab else "",
               str(len(lab.peaks)) if lab else "0",
               r.section.value if r.section else "", r.error or ""]


def write_sweep_dir(out: Path, rows, header_extra=(), extra_cols=None):
    """summary.csv plus spectra/row_NNN.csv per row."""
    spec_dir = out / "spectra"
    spec_dir.mkdir(exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "seed", "k_value", "label", "base_freqs", "peak_count", "section",
                    "error", *header_extra])
        for i, (r, line) in enumerate(zip(rows, _summary_rows(rows))):
            w.writerow(line + (extra_cols(r) if extra_cols else []))
            if r.spectrum is not None:
                io.write_spectrum_csv(spec_dir / f"row_{i:03d}.csv", r.spectrum)


def cmd_sweep(cfg: RunConfig, workers: int) -> str:
    """Alpha and gradient axes produce a phase-diagram directory; the seed
    axis is a repeated-realization phase experiment and the noise axis a
    noise scan."""
    axis = cfg.sweep.get("axis", "alpha")
    if axis == Axis.SEED.value:
        n = cfg.sweep.get("count") or len(cfg.sweep.get("values", ())) or 50
        cfg.phases = {**cfg.phases, "realizations": int(n)}
        cfg.sweep = {}
        return cmd_phases(cfg, workers)
    if axis == Axis.NOISE.value:
        vals = cfg.sweep.get("values") or cfg.noise.get("amplitudes")
        cfg.noise = {"amplitudes": tuple(vals)} if vals else {}
        cfg.sweep = {}
        return cmd_noise_scan(cfg, workers)
    out = _outdir(cfg)
    spec = _sweep_spec(cfg, workers)
    write_manifest(out, cfg, "sweep",
                   {"base_seed": cfg.integration.seed, "point_seeds": "derived"})
    rows = run_sweep(spec)
    write_sweep_dir(out, rows)
    lines = [f"{spec.axis.value:>12s} {'K':>7s}  label"]
    lines += [f"{r.value:12.6g} {r.k_value:7.3f}  {r.phase.value if r.phase else 'Error: ' + r.error}"
              for r in rows]
    return "\n".join(lines) + "\n"


def cmd_phases(cfg: RunConfig, workers: int) -> str:
    out = _outdir(cfg)
    n = int(cfg.phases.get("realizations", 50))
    same = bool(cfg.phases.get("same_seed", False))
    cfg.phases = {"realizations": n, "same_seed": same}
    write_manifest(out, cfg, "phases")
    try:
        exp = run_phase_experiment(n, cfg.params, _grid(cfg), cfg.integration, cfg.analysis,
                                   same_seed=same, workers=workers)
    except ValueError as exc:
        raise Precondition(str(exc)) from exc
    with open(out / "phases.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed"] + [f"phase_rad_{j}" for j in range(len(exp.freqs))])
        for s, row in zip(exp.seeds, exp.phases):
            w.writerow([str(s)] + [repr(float(v)) for v in row])
    lines = ["[uniformity]", f"label = {exp.label.label.value}", f"realizations = {n}"]
    for j, f in enumerate(exp.freqs):
        lines += [f"freq_hz_{j} = {f!r}", f"resultant_length_{j} = {exp.resultant_length[j]!r}",
                  f"rayleigh_p_{j} = {exp.rayleigh_p[j]!r}",
                  f"circular_range_{j} = {exp.circular_range[j]!r}"]
    text = "\n".join(lines) + "\n"
    (out / "uniformity.txt").write_text(text)
    return text


def cmd_noise_scan(cfg: RunConfig, workers: int) -> str:
    out = _outdir(cfg)
    amps = cfg.noise.get("amplitudes")
    if not amps:
        raise ConfigError("[noise] amplitudes missing")
    cfg.noise = {"amplitudes": tuple(amps)}
    write_manifest(out, cfg, "noise-scan")
    try:
        ref, rows = run_noise_scan(amps, cfg.params, _grid(cfg), cfg.integration, cfg.analysis,
                                   workers, cfg.spectrum_band)
    except ValueError as exc:
        raise Precondition(str(exc)) from exc
    write_sweep_dir(out, rows, ["survives"], lambda r: [str(r.survives)])
    if ref.spectrum is not None:
        io.write_spectrum_csv(out / "spectra" / "reference.csv", ref.spectrum)
    with open(out / "k_inset.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["amplitude", "k_value"])
        for r in rows:
            w.writerow([repr(r.value), repr(r.k_value)])
    lines = [f"{'amplitude':>12s} {'K':>7s}  survives  label"]
    lines += [f"{r.value:12.6g} {r.k_value:7.3f}  {str(r.survives):8s}  "
              f"{r.phase.value if r.phase else r.error}" for r in rows]
    return "\n".join(lines) + "\n"


# -- argument handling --------------------------------------------------------------

def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spingas", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "stability", "phases", "noise-scan"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI configuration file")
        p.add_argument("--preset", help=f"one of: {', '.join(preset_names())}")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=_u64, help="base seed (overrides the config)")
        p.add_argument("--workers", type=int,
                       help="worker processes (default: [sweep] workers, else all cores)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        workers = args.workers
        if workers is None:
            workers = cfg.sweep.get("workers") or os.cpu_count() or 1
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        if args.command == "simulate":
            text = cmd_simulate(cfg)
        elif args.command == "stability":
            text = cmd_stability(cfg)
        elif args.command == "sweep":
            text = cmd_sweep(cfg, workers)
        elif args.command == "phases":
            text = cmd_phases(cfg, workers)
        else:
            text = cmd_noise_scan(cfg, workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, FloatingPointError, SweepError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (Precondition, NoThresholdError, ValueError) as exc:
        # analysis inputs that cannot be evaluated (e.g. a window too short
        # for the chaos test) are precondition failures of the request
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
