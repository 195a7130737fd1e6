"""INI run configuration: parsing with line-anchored errors, and exact dumps.

Floats are written with ``repr`` so a dumped configuration parses back to the
identical values, which is what makes re-running from a manifest bitwise
reproducible.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import AnalysisConfig, Window
from .integrate import IntegrationConfig
from .model import GAMMA_XE129, FeedbackSign, GridKind, PhysicalParams, convert_gradient


class ConfigError(ValueError):
    def __init__(self, msg: str, path=None, line: Optional[int] = None):
        self.path, self.line = path, line
        where = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + msg)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in re.split(r"[,\s]+", s.strip()) if v)


def _band(s: str):
    if s.strip().lower() in ("", "none"):
        return None
    lo, hi = _floats(s)
    return (lo, hi)


# section -> key -> parser
SCHEMA = {
    "physics": {
        "alpha": float, "alpha_over_alpha_c": float, "t1": float, "t2": float,
        "r_se": float, "omega0": float, "feedback_sign": FeedbackSign,
    },
    "grid": {
        "kind": GridKind, "n_nodes": int, "delta_omega": float,
        "gradient": float, "cell_length": float, "gamma": float,
    },
    "integration": {
        "dt": float, "t_end": float, "record_stride": int, "record_full_state": _bool,
        "seed": int, "noise_amplitude": float, "init_sigma": float, "discard": _opt_float,
    },
    "analysis": {
        "peak_floor": float, "amplitude_floor": float, "chaos_threshold": float,
        "comb_tolerance": float, "max_order": int, "max_denominator": int,
        "n_angles": int, "k_min_length": int, "window": Window, "spectrum_band": _band,
    },
    "sweep": {
        "axis": str, "values": _floats, "start": float, "stop": float, "count": int,
        "spacing": str, "workers": int, "cell_length": float, "gamma": float,
    },
    "phases": {"realizations": int, "same_seed": _bool},
    "noise": {"amplitudes": _floats},
    "output": {"dir": str},
}

# informational sections written into manifests
IGNORED_SECTIONS = ("provenance",)

_GRAD = ("gradient", "cell_length", "gamma")
_EXCLUSIVE = {("physics", "alpha"): ("alpha_over_alpha_c",),
              ("physics", "alpha_over_alpha_c"): ("alpha",),
              ("grid", "delta_omega"): _GRAD}
_EXCLUSIVE.update({("grid", k): ("delta_omega",) for k in _GRAD})


@dataclass
class RunConfig:
    """Resolved configuration of one CLI invocation."""

    params: PhysicalParams
    integration: IntegrationConfig
    analysis: AnalysisConfig = AnalysisConfig()
    grid_kind: GridKind = GridKind.UNIFORM
    n_nodes: int = 64
    spectrum_band: Optional[tuple] = None
    gradient: Optional[tuple] = None  # (g nT/cm, cell_length cm, gamma rad/s/nT)
    alpha_over_alpha_c: Optional[float] = None
    sweep: dict = field(default_factory=dict)
    phases: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    out_dir: Optional[str] = None

    def dump(self) -> str:
        """INI text that :func:`parse_config` turns back into this object.

        Values that were derived (alpha from alpha_over_alpha_c, delta_omega
        from a gradient) are written as resolved numbers.
        """
        p, c, a = self.params, self.integration, self.analysis
        out = ["[physics]"]
        out += [f"alpha = {p.alpha!r}", f"t1 = {p.t1!r}", f"t2 = {p.t2!r}",
                f"r_se = {p.r_se!r}", f"omega0 = {p.omega0!r}",
                f"feedback_sign = {p.feedback_sign.value}"]
        out += ["", "[grid]", f"kind = {self.grid_kind.value}", f"n_nodes = {self.n_nodes}",
                f"delta_omega = {p.delta_omega!r}"]
        out += ["", "[integration]"]
        for f in fields(c):
            v = getattr(c, f.name)
            out.append(f"{f.name} = {'none' if v is None else repr(v)}")
        out += ["", "[analysis]"]
        for f in fields(a):
            v = getattr(a, f.name)
            out.append(f"{f.name} = {v.value if f.name == 'window' else repr(v)}")
        band = self.spectrum_band
        out.append("spectrum_band = " + ("none" if band is None else f"{band[0]!r}, {band[1]!r}"))
        for name, sec in (("sweep", self.sweep), ("phases", self.phases), ("noise", self.noise)):
            if sec:
                out += ["", f"[{name}]"]
                for k, v in sec.items():
                    if isinstance(v, (tuple, list)):
                        v = ", ".join(repr(float(x)) for x in v)
                    elif isinstance(v, bool):
                        v = str(v).lower()
                    elif isinstance(v, float):
                        v = repr(v)
                    out.append(f"{k} = {v}")
        if self.out_dir:
            out += ["", "[output]", f"dir = {self.out_dir}"]
        return "\n".join(out) + "\n"


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _section_line(text: str, section: str) -> Optional[int]:
    for i, raw in enumerate(text.splitlines(), 1):
        if raw.strip() == f"[{section}]":
            return i
    return None


def preset_names() -> list[str]:
    root = resources.files("spingas") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    path = resources.files("spingas") / "presets" / f"{name}.ini"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def load_config(path=None, preset: Optional[str] = None) -> RunConfig:
    """Preset first, then the config file on top of it."""
    texts = []
    if preset:
        texts.append((f"preset:{preset}", preset_text(preset)))
    if path is not None:
        try:
            texts.append((str(path), Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path) from exc
    if not texts:
        texts.append(("<defaults>", ""))
    return parse_config(texts)


def parse_config(sources) -> RunConfig:
    """``sources`` is a string or a sequence of (name, text), later ones
    overriding earlier ones key by key."""
    if isinstance(sources, str):
        sources = [("<string>", sources)]
    raw: dict = {}  # section -> key -> (value string, source name, line)
    for name, text in sources:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text, source=name)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            msg = str(exc).splitlines()[0]
            raise ConfigError(f"syntax error: {msg}", name, line) from exc
        for sec in cp.sections():
            if sec in IGNORED_SECTIONS:
                continue
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]", name, _section_line(text, sec))
            for key, val in cp.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]", name,
                                      _line_of(text, sec, key))
                for other in _EXCLUSIVE.get((sec, key), ()):
                    prev = raw.get(sec, {}).get(other)
                    if prev is not None and prev[1] != name:
                        del raw[sec][other]  # a later source switches the form
                raw.setdefault(sec, {})[key] = (val, name, _line_of(text, sec, key))

    vals: dict = {}
    for sec, items in raw.items():
        for key, (val, name, line) in items.items():
            try:
                vals.setdefault(sec, {})[key] = SCHEMA[sec][key](val)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", name, line) from exc

    def where(sec, key):
        if sec in raw and key in raw[sec]:
            return raw[sec][key][1], raw[sec][key][2]
        return None, None

    def build(cls, sec, kwargs, anchor_keys):
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as exc:
            src, line = None, None
            named = [k for k in anchor_keys if re.search(rf"\b{k}\b", str(exc))]
            for k in named + list(anchor_keys):
                src, line = where(sec, k)
                if line:
                    break
            raise ConfigError(f"[{sec}] {exc}", src, line) from exc

    phys = dict(vals.get("physics", {}))
    grid = dict(vals.get("grid", {}))
    ratio = phys.pop("alpha_over_alpha_c", None)
    if ratio is not None and "alpha" in phys:
        src, line = where("physics", "alpha_over_alpha_c")
        raise ConfigError("give alpha or alpha_over_alpha_c, not both", src, line)
    gradient = None
    grad_keys = {"gradient", "cell_length", "gamma"} & grid.keys()
    if "delta_omega" in grid and grad_keys:
        src, line = where("grid", sorted(grad_keys)[0])
        raise ConfigError("give delta_omega or gradient/cell_length/gamma, not both", src, line)
    if grad_keys:
        if "gradient" not in grid or "cell_length" not in grid:
            src, line = where("grid", sorted(grad_keys)[0])
            raise ConfigError("a gradient needs both gradient and cell_length", src, line)
        gradient = (grid["gradient"], grid["cell_length"], grid.get("gamma", GAMMA_XE129))
        try:
            phys["delta_omega"] = convert_gradient(*gradient)
        except ValueError as exc:
            src, line = where("grid", "gradient")
            raise ConfigError(f"[grid] {exc}", src, line) from exc
    elif "delta_omega" in grid:
        phys["delta_omega"] = grid["delta_omega"]
    params = build(PhysicalParams, "physics", phys,
                   list(phys.keys()) + ["delta_omega"])

    integ = build(IntegrationConfig, "integration", vals.get("integration", {}),
                  list(vals.get("integration", {}).keys()))
    ana = dict(vals.get("analysis", {}))
    band = ana.pop("spectrum_band", None)
    analysis = build(AnalysisConfig, "analysis", ana, list(ana.keys()))

    kind = grid.get("kind", GridKind.UNIFORM)
    n_nodes = grid.get("n_nodes", 64)
    if n_nodes < 1:
        src, line = where("grid", "n_nodes")
        raise ConfigError("n_nodes must be >= 1", src, line)

    out = vals.get("output", {}).get("dir")
    return RunConfig(params, integ, analysis, kind, n_nodes, band, gradient, ratio,
                     vals.get("sweep", {}), vals.get("phases", {}), vals.get("noise", {}), out)


def sweep_values(sweep: dict, alpha_c: Optional[float] = None) -> tuple:
    """Explicit ``values`` or a (start, stop, count, spacing) range.

    Alpha-axis ranges are in units of alpha_c when ``alpha_c`` is given and
    the range keys are absent; the default is 40 log-spaced points over
    [0.25, 100] alpha_c.
    """
    if "values" in sweep:
        return tuple(sweep["values"])
    axis = sweep.get("axis", "alpha")
    if axis == "alpha" and "start" not in sweep:
        if alpha_c is None:
            raise ConfigError("alpha sweep without values needs alpha_c")
        lo, hi, n, spacing = 0.25 * alpha_c, 100 * alpha_c, sweep.get("count", 40), "log"
    elif axis == "gradient" and "start" not in sweep:
        lo, hi, n, spacing = 0.0, 100.0, sweep.get("count", 30), "linear"
    else:
        try:
            lo, hi = sweep["start"], sweep["stop"]
        except KeyError as exc:
            raise ConfigError(f"[sweep] needs values or start/stop (missing {exc})") from exc
        n = sweep.get("count", 40 if axis == "alpha" else 30)
        spacing = sweep.get("spacing", "log" if axis == "alpha" else "linear")
    if spacing == "log":
        if lo <= 0:
            raise ConfigError("[sweep] log spacing needs start > 0")
        return tuple(float(v) for v in np.geomspace(lo, hi, n))
    if spacing == "linear":
        return tuple(float(v) for v in np.linspace(lo, hi, n))
    raise ConfigError(f"[sweep] unknown spacing {spacing!r}")
