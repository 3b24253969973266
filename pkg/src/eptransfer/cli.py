"""Command-line front end.

    eptransfer spectrum  --config run.ini [--out DIR]
    eptransfer fit       --config run.ini
    eptransfer propagate --config run.ini --engine full
    eptransfer sweep     --config run.ini --jobs 4

Configuration is an INI file; every key is optional and falls back to the
default listed in :data:`SCHEMA`.  Each run writes comma-separated data
files, each with a single ``#`` header line, and ``manifest.ini``: the
fully resolved configuration plus version, timing and output checksums.
A manifest is itself a valid configuration, so

    eptransfer <command> --config out/manifest.ini --out out2

reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 sweep finished with failed grid points.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .basis import BasisSpec, FieldPoint, assemble_operator_blocks
from .dynamics import FullEngine, PropagationError, PropagationSettings, TwoLevelEngine
from .loops import LoopSpec, grid_search, refine_optimum, sweep_duration, sweep_phase, sweep_radius
from .spectral import ReducedProblem, SolverError, TrackingError, locate_ep, mark_converged
from .twolevel import FitError, TwoLevelModel, fit_model, sample_octagon
from .units import EP_ENERGY, EP_POINT

log = logging.getLogger("eptransfer")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
UNITS = "atomic units (energies in hartree, times in hbar/hartree, fields as gamma=B/B0 and f=F/F0)"


class ConfigError(ValueError):
    def __init__(self, msg, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}, line {line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + msg)
        self.line = line


# --------------------------------------------------------------------------
# configuration schema


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_angle(s: str) -> float:
    """Radians; a trailing ``pi`` multiplies by pi (``2.55276pi``, ``0.5*pi``)."""
    v = s.strip().replace(" ", "")
    m = re.fullmatch(r"(.*?)\*?pi", v)
    if m:
        pre = m.group(1)
        if pre in ("", "+", "-"):
            pre += "1"
        return float(pre) * np.pi
    return float(v)


def _choice(*options):
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    parse.options = options
    return parse


def _parse_str(s: str) -> str:
    return s.strip()


# section -> key -> (parser, default, description)
SCHEMA: dict[str, dict[str, tuple]] = {
    "basis": {
        "n_max": (int, 35, "largest principal quantum number of the Sturmian basis"),
        "sturmian_scale": (float, 0.2, "radial scale lambda of the Sturmian functions"),
        "rotation_angle": (float, 0.3, "complex-scaling angle theta, b = exp(i theta), radians"),
    },
    "center": {
        "gamma": (float, EP_POINT.gamma, "magnetic field gamma = B/B0 of the loop center"),
        "f": (float, EP_POINT.f, "electric field f = F/F0 of the loop center"),
        "energy": (complex, EP_ENERGY, "energy near which the EP pair is searched"),
    },
    "loop": {
        "r": (float, 1e-3, "relative half-axis of the ellipse"),
        "T": (float, 2390.0, "encircling duration"),
        "phi0": (_parse_angle, 0.0, "starting angle, radians ('pi' suffix allowed)"),
    },
    "engine": {
        "name": (_choice("two-level", "full"), "two-level", "propagation engine"),
        "jobs": (int, 1, "worker processes for sweeps"),
    },
    "solver": {
        "count": (int, 40, "eigenpairs per solve"),
        "window": (float, 0.015, "side resonances are taken within this distance of the center energy"),
        "convergence_tol": (float, 1e-7, "a resonance is converged if it moves less under theta*1.1 and N_max+3"),
        "ambiguity": (float, 0.1, "tracking ambiguity margin"),
    },
    "integrator": {
        "method": (_choice("DOP853", "RK45", "RK23"), "DOP853", "embedded Runge-Kutta method"),
        "rtol": (float, 1e-8, "relative tolerance"),
        "atol": (float, 1e-10, "absolute tolerance"),
        "refresh_count": (int, 200, "re-diagonalizations per loop (full engine)"),
        "stabilize": (_parse_bool, True, "project onto tracked resonances at every refresh"),
        "output_points": (int, 1000, "output grid of the two-level engine"),
        "start_radius": (float, 1e-3, "ellipse on which state 1 is chosen before continuation"),
    },
    "fit": {
        "radius": (float, 1e-3, "relative octagon radius of the two-level fit"),
        "c": (complex, 1.0 + 0j, "free parameter of the 2x2 matrix"),
        "model_file": (_parse_str, "", "load a fitted model instead of fitting (fit command output)"),
        "samples_file": (_parse_str, "", "fit to these samples instead of solving (gamma,f,reE1,imE1,reE2,imE2)"),
    },
    "spectrum": {
        "mode": (_choice("point", "loop"), "point", "single field point (the center) or loop trajectories"),
        "count": (int, 20, "eigenvalues listed in point mode"),
        "trajectory_points": (int, 200, "samples along the loop in loop mode"),
    },
    "sweep": {
        "axis": (_choice("T", "r", "rT", "phi0"), "T", "swept parameter(s)"),
        "T_min": (float, 1.0, ""),
        "T_max": (float, 1e4, ""),
        "T_num": (int, 100, ""),
        "T_spacing": (_choice("log", "linear"), "log", ""),
        "r_min": (float, 1e-3, ""),
        "r_max": (float, 0.3, ""),
        "r_num": (int, 100, ""),
        "r_spacing": (_choice("log", "linear"), "log", ""),
        "phi0_min": (_parse_angle, 0.0, ""),
        "phi0_max": (_parse_angle, 4 * np.pi, ""),
        "phi0_num": (int, 101, ""),
        "refine": (_parse_bool, False, "polish the grid optimum with a simplex search"),
        "refine_budget": (int, 200, "objective evaluations allowed for refinement"),
    },
    "output": {
        "dir": (_parse_str, "out", "output directory"),
    },
}

# sections a manifest adds on top of the configuration; ignored when read back
MANIFEST_SECTIONS = ("run", "outputs", "result")


def _format(value) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, complex):
        return repr(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    """Resolved configuration: ``values[section][key]`` with defaults filled in."""

    values: dict[str, dict] = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        full = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
        for s, kv in self.values.items():
            full[s].update(kv)
        self.values = full

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def set(self, section, key, value):
        self.values[section][key] = value

    # -- derived objects ----------------------------------------------------

    @property
    def basis(self) -> BasisSpec:
        b = self["basis"]
        return BasisSpec(b["n_max"], b["sturmian_scale"], complex(np.exp(1j * b["rotation_angle"])))

    @property
    def center(self) -> FieldPoint:
        return FieldPoint(self["center"]["gamma"], self["center"]["f"])

    @property
    def loop(self) -> LoopSpec:
        lp = self["loop"]
        return LoopSpec(self.center, lp["r"], lp["T"], lp["phi0"])

    @property
    def settings(self) -> PropagationSettings:
        i, s = self["integrator"], self["solver"]
        return PropagationSettings(
            rtol=i["rtol"], atol=i["atol"], method=i["method"], refresh_count=i["refresh_count"],
            stabilize=i["stabilize"], output_points=i["output_points"], start_radius=i["start_radius"],
            window=s["window"], solve_count=s["count"], convergence_tol=s["convergence_tol"],
            ambiguity=s["ambiguity"],
        )

    def grid(self, name: str) -> np.ndarray:
        sw = self["sweep"]
        lo, hi, num = sw[f"{name}_min"], sw[f"{name}_max"], sw[f"{name}_num"]
        if name != "phi0" and sw[f"{name}_spacing"] == "log":
            return np.geomspace(lo, hi, num)
        return np.linspace(lo, hi, num)

    # -- serialization --------------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for s, keys in SCHEMA.items():
            cp[s] = {k: _format(self.values[s][k]) for k in keys}
        return cp

    def dumps(self) -> str:
        lines = []
        for s, keys in SCHEMA.items():
            lines.append(f"[{s}]")
            for k in keys:
                lines.append(f"{k} = {_format(self.values[s][k])}")
            lines.append("")
        return "\n".join(lines)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` entry, for error messages."""
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            out[(section, "")] = n
            continue
        m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip())] = n
    return out


def parse_config(text: str, source: str | None = None) -> RunConfig:
    """Parse and validate configuration text; errors carry line numbers."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"malformed line {exc.errors[0][1]!s}" if line else str(exc), line, source) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from exc
    lines = _key_lines(text)
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section in MANIFEST_SECTIONS:
            continue
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")), source)
        values[section] = {}
        for key, raw in cp[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)), source)
            parser = SCHEMA[section][key][0]
            try:
                values[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}", lines.get((section, key)), source) from exc
    cfg = RunConfig(values, source)
    validate(cfg, lines)
    return cfg


def validate(cfg: RunConfig, lines: dict | None = None) -> None:
    lines = lines or {}

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", lines.get((section, key)), cfg.source)

    checks = [
        ("basis", "n_max", lambda v: v >= 1, "must be >= 1"),
        ("basis", "sturmian_scale", lambda v: v > 0, "must be positive"),
        ("basis", "rotation_angle", lambda v: 0 <= v < np.pi / 4, "must lie in [0, pi/4)"),
        ("loop", "r", lambda v: v > 0, "must be positive"),
        ("loop", "T", lambda v: v > 0, "must be positive"),
        ("engine", "jobs", lambda v: v >= 1, "must be >= 1"),
        ("solver", "count", lambda v: v >= 2, "must be >= 2"),
        ("solver", "window", lambda v: v > 0, "must be positive"),
        ("integrator", "rtol", lambda v: v > 0, "must be positive"),
        ("integrator", "atol", lambda v: v > 0, "must be positive"),
        ("integrator", "refresh_count", lambda v: v >= 1, "must be >= 1"),
        ("integrator", "output_points", lambda v: v >= 2, "must be >= 2"),
        ("fit", "radius", lambda v: v > 0, "must be positive"),
        ("fit", "c", lambda v: v != 0, "must be nonzero"),
        ("spectrum", "count", lambda v: v >= 1, "must be >= 1"),
        ("spectrum", "trajectory_points", lambda v: v >= 2, "must be >= 2"),
        ("sweep", "T_min", lambda v: v > 0, "must be positive"),
        ("sweep", "r_min", lambda v: v > 0, "must be positive"),
        ("sweep", "T_num", lambda v: v >= 1, "must be >= 1"),
        ("sweep", "r_num", lambda v: v >= 1, "must be >= 1"),
        ("sweep", "phi0_num", lambda v: v >= 1, "must be >= 1"),
    ]
    for section, key, ok, msg in checks:
        if not ok(cfg[section][key]):
            fail(section, key, f"{msg}, got {cfg[section][key]!r}")
    for name in ("T", "r", "phi0"):
        if cfg["sweep"][f"{name}_max"] < cfg["sweep"][f"{name}_min"]:
            fail("sweep", f"{name}_max", "must not be below the minimum")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", None, str(path)) from exc
    return parse_config(text, str(path))


def describe_defaults() -> str:
    """Annotated default configuration (``eptransfer defaults``)."""
    out = []
    for s, keys in SCHEMA.items():
        out.append(f"[{s}]")
        for k, (parser, default, doc) in keys.items():
            opts = getattr(parser, "options", None)
            note = doc + (f" ({' | '.join(opts)})" if opts else "")
            if note:
                out.append(f"# {note}")
            out.append(f"{k} = {_format(default)}")
        out.append("")
    return "\n".join(out)


# --------------------------------------------------------------------------
# output


class RunManifest:
    """Collects outputs of one run and writes ``manifest.ini``."""

    def __init__(self, cfg: RunConfig, command: str, out_dir: Path):
        self.cfg = cfg
        self.command = command
        self.out_dir = Path(out_dir)
        self.outputs: dict[str, str] = {}
        self.result: dict[str, object] = {}
        self.started = time.time()
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write_table(self, name: str, columns: list[str], rows) -> Path:
        header = f"# columns: {','.join(columns)}; units: {UNITS}; manifest: manifest.ini"
        lines = [header]
        for row in rows:
            lines.append(",".join(_cell(x) for x in row))
        return self.write_text(name, "\n".join(lines) + "\n")

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text)
        self.outputs[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def finish(self, status: str = "ok") -> Path:
        cp = self.cfg.to_parser()
        cp["run"] = {
            "command": self.command,
            "status": status,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "elapsed_s": f"{time.time() - self.started:.3f}",
        }
        cp["result"] = {k: _format(v) for k, v in self.result.items()}
        cp["outputs"] = {k: f"sha256:{v}" for k, v in sorted(self.outputs.items())}
        path = self.out_dir / "manifest.ini"
        with open(path, "w") as fh:
            cp.write(fh)
        return path


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def _complex_cols(z) -> list[float]:
    return [z.real, z.imag]


# --------------------------------------------------------------------------
# engines


def _blocks(cfg: RunConfig):
    return assemble_operator_blocks(cfg.basis)


def _full_engine(cfg: RunConfig) -> FullEngine:
    spec = cfg.basis
    return FullEngine(assemble_operator_blocks(spec), spec.rotation, cfg["center"]["energy"], cfg.settings)


def _samples_from_file(path: str):
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != 6:
        raise ConfigError(f"{path}: expected 6 columns gamma,f,reE1,imE1,reE2,imE2, got {data.shape[1]}")
    return [(FieldPoint(g, f), complex(a, b), complex(c, d)) for g, f, a, b, c, d in data]


def load_model(path: str | Path) -> TwoLevelModel:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError(f"cannot read model file {path}")
    if "model" not in cp:
        raise ConfigError(f"{path}: no [model] section")
    return TwoLevelModel.from_dict(dict(cp["model"]))


def _fit(cfg: RunConfig, problem: ReducedProblem | None = None):
    fc = cfg["fit"]
    center = cfg.center
    if fc["samples_file"]:
        samples = _samples_from_file(fc["samples_file"])
    else:
        problem = problem or ReducedProblem(_blocks(cfg))
        samples = sample_octagon(problem, center, fc["radius"], cfg["center"]["energy"])
    model = fit_model(samples, center, fc["c"], fc["radius"])
    return model, samples, problem


def _two_level_engine(cfg: RunConfig) -> TwoLevelEngine:
    path = cfg["fit"]["model_file"]
    model = load_model(path) if path else _fit(cfg)[0]
    return TwoLevelEngine(model.with_c(cfg["fit"]["c"]), cfg.settings)


def _engine(cfg: RunConfig):
    return _full_engine(cfg) if cfg["engine"]["name"] == "full" else _two_level_engine(cfg)


# --------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg: RunConfig, man: RunManifest) -> int:
    sc = cfg["spectrum"]
    eng = _full_engine(cfg)
    target = cfg["center"]["energy"]
    if sc["mode"] == "point":
        point = cfg.center
        rs = eng.solve(point, target, sc["count"])
        refs = [p.solve(point, target, min(p.size, sc["count"] + 20)).energies for p in eng.reference_problems()]
        rs = mark_converged(rs, refs, cfg["solver"]["convergence_tol"])
        rows = sorted(rs.resonances, key=lambda r: (r.energy.real, r.energy.imag))
        man.write_table(
            "spectrum.csv", ["label", "re_E", "im_E", "converged"],
            ([k + 1, r.energy.real, r.energy.imag, r.converged] for k, r in enumerate(rows)),
        )
        man.result["gamma"] = point.gamma
        man.result["f"] = point.f
        man.result["eigenvalues"] = len(rows)
        return EXIT_OK
    loop = cfg.loop
    times, labels, energies, _ = eng.trajectories(loop, sc["trajectory_points"])
    g, f = loop.fields(times)
    for j, lab in enumerate(labels):
        man.write_table(
            f"trajectory_{lab}.csv", ["t", "gamma", "f", "re_E", "im_E"],
            ([t, gg, ff, e.real, e.imag] for t, gg, ff, e in zip(times, g, f, energies[:, j])),
        )
    man.result["labels"] = " ".join(map(str, labels))
    for j, lab in enumerate(labels):
        back = np.argmin(np.abs(energies[0] - energies[-1, j]))
        man.result[f"endpoint_{lab}"] = labels[back]
    return EXIT_OK


def cmd_fit(cfg: RunConfig, man: RunManifest) -> int:
    model, samples, problem = _fit(cfg)
    loc = locate_ep(model)
    text = ["[model]"]
    text += [f"{k} = {_format(v)}" for k, v in model.as_dict().items()]
    text += ["", "[ep]", f"found = {_format(loc.found)}", f"gamma = {_format(loc.point.gamma)}",
             f"f = {_format(loc.point.f)}", f"energy = {_format(loc.energy)}"]
    man.result.update(fit_residual=model.fit_residual, ep_found=loc.found, ep_gamma=loc.point.gamma,
                      ep_f=loc.point.f, ep_energy=loc.energy)
    if problem is not None:
        # held-out check on a half-size octagon rotated by half a vertex spacing
        err = 0.0
        for p in _held_out_points(cfg.center, cfg["fit"]["radius"] / 2):
            e = problem.solve(p, cfg["center"]["energy"], 2).energies[:2]
            pair = model.eigenvalues(p)
            err = max(err, min(max(abs(pair[0] - e[0]), abs(pair[1] - e[1])),
                               max(abs(pair[0] - e[1]), abs(pair[1] - e[0]))))
        threshold = 10 * max(model.fit_residual, 1e-14)
        text += ["", "[validation]", f"held_out_error = {_format(err)}", f"threshold = {_format(threshold)}",
                 f"passed = {_format(err <= threshold)}"]
        man.result.update(held_out_error=err, held_out_passed=err <= threshold)
    man.write_text("model.ini", "\n".join(text) + "\n")
    man.write_table(
        "fit_samples.csv", ["gamma", "f", "re_E1", "im_E1", "re_E2", "im_E2"],
        ([p.gamma, p.f, *_complex_cols(a), *_complex_cols(b)] for p, a, b in samples),
    )
    return EXIT_OK


def _held_out_points(center: FieldPoint, radius: float) -> list[FieldPoint]:
    sg = radius * abs(center.gamma) if center.gamma else radius
    sf = radius * abs(center.f) if center.f else radius
    angles = 2 * np.pi * (np.arange(8) + 0.5) / 8
    return [FieldPoint(center.gamma + sg * np.sin(a), center.f + sf * np.cos(a)) for a in angles]


def cmd_propagate(cfg: RunConfig, man: RunManifest) -> int:
    eng = _engine(cfg)
    tr = eng.run(cfg.loop)
    cols = ["t"]
    for lab in tr.labels:
        cols += [f"pop_{lab}", f"re_E_{lab}", f"im_E_{lab}"]
    pops = tr.populations

    def rows():
        for k, t in enumerate(tr.times):
            row = [t]
            for j in range(len(tr.labels)):
                row += [pops[k, j], tr.energies[k, j].real, tr.energies[k, j].imag]
            yield row

    man.write_table("trace.csv", cols, rows())
    man.result["transfer"] = tr.transfer
    for lab, p in tr.final_populations().items():
        man.result[f"final_pop_{lab}"] = p
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, man: RunManifest) -> int:
    eng = _engine(cfg)
    axis = cfg["sweep"]["axis"]
    lp = cfg["loop"]
    jobs = cfg["engine"]["jobs"]
    center = cfg.center
    if axis == "T":
        res = sweep_duration(eng, center, lp["r"], lp["phi0"], cfg.grid("T"), jobs)
    elif axis == "r":
        res = sweep_radius(eng, center, lp["T"], lp["phi0"], cfg.grid("r"), jobs)
    elif axis == "phi0":
        res = sweep_phase(eng, center, lp["r"], lp["T"], cfg.grid("phi0"), jobs)
    else:
        res = grid_search(eng, center, cfg.grid("r"), cfg.grid("T"), lp["phi0"], jobs)
    names = list(res.axes)
    cols = names + [f"pop_{lab}" for lab in res.labels] + ["pair_exchange"]
    man.write_table(
        f"sweep_{axis}.csv", cols,
        (vals + list(p) + [bool(x)] for (vals, p), x in zip(res.rows(), res.pair_exchange.ravel())),
    )
    if res.ridge is not None:
        man.write_table("ridge.csv", ["r", "T_opt"], zip(res.axes["r"], res.ridge))
    if res.failures:
        man.write_table("failures.csv", ["index", "error"],
                        ((";".join(map(str, idx)), err.replace(",", ";")) for idx, err in res.failures))
    man.result["failed_points"] = len(res.failures)
    man.result["other_permutation_points"] = res.manifest["other_permutation"]
    # loops that also enclose a side-resonance EP do not measure the pair transfer
    valid = res.masked(res.pair_exchange)
    try:
        opt = valid.optimum
    except ValueError:
        raise SolverError("no grid point completed with a plain EP-pair exchange")
    summary = [["grid", *[opt[n] for n in names], opt["transfer"]]]
    interp = valid.interpolated_optimum()
    summary.append(["interpolated", *[interp[n] for n in names], interp["transfer"]])
    if cfg["sweep"]["refine"]:
        seed = {"r": lp["r"], "T": lp["T"], "phi0": lp["phi0"]}
        seed.update({n: opt[n] for n in names})
        ref = refine_optimum((eng, center), seed, free=names, max_evaluations=cfg["sweep"]["refine_budget"])
        summary.append(["refined", *[ref.params[n] for n in names], ref.transfer])
        man.result["refine_evaluations"] = ref.evaluations
        man.result["refine_budget_exhausted"] = ref.budget_exhausted
    man.write_table("optimum.csv", ["kind", *names, "transfer"], summary)
    for n in names:
        man.result[f"optimum_{n}"] = opt[n]
    man.result["optimum_transfer"] = opt["transfer"]
    return EXIT_PARTIAL if res.failures else EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "fit": cmd_fit,
    "propagate": cmd_propagate,
    "sweep": cmd_sweep,
}


COMMAND_HELP = {
    "spectrum": "resonances at one field point or along the loop",
    "fit": "sample an octagon and fit the two-level model",
    "propagate": "one encircling loop, population trace",
    "sweep": "transfer versus T, r, phi0 or the (r, T) grid",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eptransfer", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", help="INI configuration (defaults for anything omitted)")
        p.add_argument("--engine", choices=["full", "two-level"], help="overrides [engine] name")
        p.add_argument("--jobs", type=int, help="overrides [engine] jobs")
        p.add_argument("--out", help="overrides [output] dir")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("defaults", help="print the annotated default configuration")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(describe_defaults())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.engine:
            cfg.set("engine", "name", args.engine)
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            cfg.set("engine", "jobs", args.jobs)
        if args.out:
            cfg.set("output", "dir", args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    man = RunManifest(cfg, args.command, Path(cfg["output"]["dir"]))
    try:
        code = COMMANDS[args.command](cfg, man)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        man.finish("config-error")
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"propagation failed: {exc}", file=sys.stderr)
        man.result["failure_time"] = exc.time if exc.time is not None else float("nan")
        man.finish("numerical-failure")
        return EXIT_NUMERIC
    except (SolverError, TrackingError, FitError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        man.finish("numerical-failure")
        return EXIT_NUMERIC
    man.finish("ok" if code == EXIT_OK else "partial")
    return code


if __name__ == "__main__":
    sys.exit(main())
