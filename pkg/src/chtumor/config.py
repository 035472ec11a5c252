"""INI run configuration: the defaults table, parsing, validation, round-trip.

A config file has ``key = value`` lines grouped in sections.  Every key the
program understands is listed in :data:`DEFAULTS`; anything else is rejected.
Lists are comma separated.  ``None`` in the table marks a key without a
built-in default (required or filled per command, see :func:`effective`).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from . import potentials as pot
from .discretization import Grid
from .solver import ModelParams, SolverConfig
from .studies import DEFAULT_EXACT, DEFAULT_VALUES, ManufacturedSolution, SweepConfig

COMMANDS = ("simulate", "sweep-beta", "sweep-alpha", "nonuniq", "manufactured")

# section -> key -> (type, default, description)
DEFAULTS = {
    "run": {
        "command": (str, None, "subcommand; may be given on the command line instead"),
    },
    "model": {
        "alpha": (float, None, "viscosity on d/dt mu, in [0, 1); required for simulate"),
        "beta": (float, None, "viscosity on d/dt phi, in [0, 1); required for simulate"),
        "gamma": (float, 1.0, "weight of mu in R = p(phi)(sigma - gamma mu)"),
        "T": (float, 1.0, "final time"),
    },
    "potential": {
        "family": (str, "double_well", "double_well, logarithmic, indicator or nonuniq"),
        "kappa": (float, 2.0, "coefficient of (1 - r^2)^+ in the logarithmic potential"),
        "eps": (float, 1e-3, "Moreau-Yosida level for indicator families"),
        "L": (float, 2.0, "slope of pi for the nonuniq family"),
    },
    "proliferation": {
        "kind": (str, "constant", "constant, clipped_sqrt_f or smooth_bump"),
        "value": (float, 0.0, "constant value of p"),
        "scale": (float, 1.0, "clipped_sqrt_f prefactor"),
        "center": (float, 0.0, "smooth_bump centre"),
        "width": (float, 0.5, "smooth_bump width"),
        "height": (float, 1.0, "smooth_bump height"),
    },
    "grid": {
        "dim": (int, 1, "1 or 2"),
        "n": (int, 128, "cells per axis"),
        "extent": (float, 1.0, "side length of the square domain"),
    },
    "solver": {
        "dt": (float, 1e-3, "time step"),
        "newton_tol": (float, 1e-10, "tolerance on the largest scaled equation residual"),
        "newton_max": (int, 50, "Newton iterations per step"),
        "damping": (float, 0.5, "backtracking factor"),
        "max_halvings": (int, 20, "backtracking halvings per Newton iteration"),
        "lin_tol": (float, 1e-12, "backward-error tolerance of Riesz solves"),
    },
    "initial": {
        "scale": (float, 1.0, "multiplies the default initial data"),
    },
    "sweep": {
        "fixed": (float, None, "fixed alpha (sweep-beta, default 0.05) or beta (sweep-alpha, default 0.5)"),
        "values": ("floats", DEFAULT_VALUES, "decreasing sweep values in (0, 1)"),
        "reference": (float, 0.0, "parameter of the reference run; 0 = limit problem"),
    },
    "nonuniq": {
        "L": (float, 2.0, "Lipschitz constant of pi; alpha is set to 1/L"),
        "psi_a": (str, "0", "first psi(t), expression in t with abs(psi) <= 1"),
        "psi_b": (str, "1/2", "second psi(t)"),
    },
    "manufactured": {
        "mu": (str, DEFAULT_EXACT["mu"], "exact mu(x, y, t)"),
        "phi": (str, DEFAULT_EXACT["phi"], "exact phi(x, y, t)"),
        "sigma": (str, DEFAULT_EXACT["sigma"], "exact sigma(x, y, t)"),
        "ns": ("ints", (16, 32, 64), "grids of the spatial study"),
        "dts": ("floats", (2e-2, 1e-2, 5e-3), "steps of the temporal study"),
        "space_dt": (float, 1e-5, "time step of the spatial study"),
        "space_T": (float, 2e-3, "final time of the spatial study"),
        "time_n": (int, 1024, "grid of the temporal study"),
    },
    "output": {
        "format": (str, "both", "json, csv or both"),
        "checkpoint_every": (int, 10, "steps between field checkpoints (simulate)"),
    },
}

REQUIRED = {"simulate": [("model", "alpha"), ("model", "beta")]}

COMMAND_DEFAULTS = {
    "sweep-beta": {("sweep", "fixed"): 0.05},
    "sweep-alpha": {("sweep", "fixed"): 0.5},
    "manufactured": {("model", "alpha"): 0.5, ("model", "beta"): 0.5, ("model", "T"): 0.2,
                     ("proliferation", "value"): 1.0},
}


class ConfigError(ValueError):
    """Collects every violation found in a config."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class RunConfig:
    command: str
    values: dict

    def get(self, section, key):
        return self.values[section][key]

    # builders -----------------------------------------------------------
    def potential(self) -> pot.PotentialSpec:
        return pot.PotentialSpec(**self.values["potential"])

    def proliferation(self) -> pot.ProliferationSpec:
        return pot.ProliferationSpec(**self.values["proliferation"])

    def grid(self) -> Grid:
        return Grid(**self.values["grid"])

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.values["solver"])

    def model(self) -> ModelParams:
        m = self.values["model"]
        return ModelParams(alpha=m["alpha"], beta=m["beta"], gamma=m["gamma"], T=m["T"],
                           potential=self.potential(), proliferation=self.proliferation())

    def sweep(self) -> SweepConfig:
        kind = "beta" if self.command == "sweep-beta" else "alpha"
        s = self.values["sweep"]
        solver = self.solver()
        return SweepConfig(kind=kind, fixed=s["fixed"], values=tuple(s["values"]), grid=self.grid(),
                           dt=solver.dt, T=self.get("model", "T"), gamma=self.get("model", "gamma"),
                           potential=self.potential(), proliferation=self.proliferation(),
                           data_scale=self.get("initial", "scale"), solver=solver,
                           reference=s["reference"])

    def exact(self) -> ManufacturedSolution:
        m = self.values["manufactured"]
        return ManufacturedSolution(m["mu"], m["phi"], m["sigma"])

    def to_ini(self) -> str:
        """Effective config as INI text; :func:`parse_text` maps it back to an equal RunConfig."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {"command": self.command}
        for section, table in DEFAULTS.items():
            if section == "run":
                continue
            cp[section] = {}
            for key in table:
                v = self.values[section][key]
                if v is None:
                    continue
                cp[section][key] = _fmt(v)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(kind, raw: str):
    if kind in (int, float, str):
        return kind(raw.strip())
    items = [x.strip() for x in raw.split(",") if x.strip()]
    cast = float if kind == "floats" else int
    return tuple(cast(x) for x in items)


def parse_text(text: str, command: str = None, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError([f"{source}: {err}"]) from err
    problems = []
    raw = {}
    for section in cp.sections():
        if section not in DEFAULTS:
            problems.append(f"unknown section [{section}]")
            continue
        for key, val in cp[section].items():
            if key not in DEFAULTS[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            kind = DEFAULTS[section][key][0]
            try:
                raw[section, key] = _convert(kind, val)
            except ValueError:
                problems.append(f"{section}.{key}: cannot read {val!r} as {getattr(kind, '__name__', kind)}")
    file_cmd = raw.pop(("run", "command"), None)
    command = command or file_cmd
    if command is None:
        problems.append("no command given (use the subcommand or run.command)")
    elif command not in COMMANDS:
        problems.append(f"run.command must be one of {COMMANDS}, got {command!r}")
    elif file_cmd is not None and file_cmd != command:
        problems.append(f"config is for {file_cmd!r} but {command!r} was requested")
    if problems:
        raise ConfigError(problems)
    return effective(command, raw)


def parse_config(path, command: str = None) -> RunConfig:
    """Read and validate a config file; raises :class:`ConfigError` listing all violations."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError([f"cannot read {path}: {err}"]) from err
    return parse_text(text, command, source=str(path))


def effective(command: str, given: dict) -> RunConfig:
    """Fill defaults for ``command`` and validate every module invariant."""
    problems = []
    for section, key in REQUIRED.get(command, []):
        if (section, key) not in given:
            problems.append(f"missing required key {section}.{key} for {command}")
    values = {}
    for section, table in DEFAULTS.items():
        if section == "run":
            continue
        values[section] = {}
        for key, (_, default, _) in table.items():
            default = COMMAND_DEFAULTS.get(command, {}).get((section, key), default)
            values[section][key] = given.get((section, key), default)
    cfg = RunConfig(command, values)
    problems += _validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _try(problems, label, fn):
    try:
        return fn()
    except ValueError as err:
        problems.append(f"{label}: {err}")
        return None


def _validate(cfg: RunConfig) -> list:
    problems = []
    out = cfg.values["output"]
    if out["format"] not in ("json", "csv", "both"):
        problems.append(f"output.format must be json, csv or both, got {out['format']!r}")
    if out["checkpoint_every"] < 1:
        problems.append("output.checkpoint_every must be at least 1")
    potential = _try(problems, "potential", cfg.potential)
    prolif = _try(problems, "proliferation", cfg.proliferation)
    _try(problems, "grid", cfg.grid)
    _try(problems, "solver", cfg.solver)
    if cfg.get("initial", "scale") <= 0:
        problems.append("initial.scale must be positive")
    cmd = cfg.command
    if cmd == "simulate" and potential and prolif:
        m = cfg.values["model"]
        if m["alpha"] is not None and m["beta"] is not None:
            _try(problems, "model", cfg.model)
    elif cmd in ("sweep-beta", "sweep-alpha") and potential and prolif:
        if cfg.get("model", "T") <= 0:
            problems.append("model.T must be positive")
        if cmd == "sweep-alpha" and not prolif.is_constant:
            problems.append("proliferation.kind: the alpha-sweep estimate assumes "
                            f"p is a nonnegative constant; got {prolif.kind!r}")
        else:
            try:
                cfg.sweep().validate()
            except ValueError as err:
                problems.append(f"sweep: {err}")
    elif cmd == "nonuniq":
        L = cfg.get("nonuniq", "L")
        if not L > 1.0:
            problems.append(f"nonuniq.L must exceed 1 so that alpha = 1/L lies in (0, 1), got {L}")
        import sympy as sp
        for key in ("psi_a", "psi_b"):
            try:
                expr = sp.sympify(cfg.get("nonuniq", key))
                if expr.free_symbols - {sp.Symbol("t")}:
                    raise ValueError("only the symbol t is allowed")
            except (sp.SympifyError, ValueError, TypeError) as err:
                problems.append(f"nonuniq.{key}: {err}")
    elif cmd == "manufactured":
        mcfg = cfg.values["manufactured"]
        if len(mcfg["ns"]) < 2 or len(mcfg["dts"]) < 2:
            problems.append("manufactured.ns and manufactured.dts need at least two entries")
        if any(n < 4 for n in mcfg["ns"]) or any(d <= 0 for d in mcfg["dts"]):
            problems.append("manufactured grids need n >= 4 and positive steps")
        if mcfg["space_dt"] <= 0 or mcfg["space_T"] <= 0:
            problems.append("manufactured.space_dt and space_T must be positive")
        if potential and prolif:
            _try(problems, "model", cfg.model)
    return problems


def defaults_table_markdown() -> str:
    """Render :data:`DEFAULTS` as a markdown table (used for the README)."""
    lines = ["| key | default | meaning |", "|---|---|---|"]
    for section, table in DEFAULTS.items():
        for key, (_, default, doc) in table.items():
            d = "(none)" if default is None else _fmt(default)
            lines.append(f"| `{section}.{key}` | `{d}` | {doc} |")
    return "\n".join(lines)
