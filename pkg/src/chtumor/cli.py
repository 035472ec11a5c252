"""Command-line front end.

    chtumor simulate     --config run.ini --out results/
    chtumor sweep-beta   --config sweep.ini --out results/ --jobs 4
    chtumor sweep-alpha  ...
    chtumor nonuniq      ...
    chtumor manufactured ...

Without ``--config`` the packaged example config for the subcommand is used.
Every run writes ``effective_config.ini`` and ``summary.json`` (unless
``--format csv``); on failure ``failure.json`` names the cause and the exit
status is nonzero (2 config, 3 solver, 4 other).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import studies
from .discretization import write_fields_csv
from .solver import StepFailure, conserved_quantity, energy_check, newton_tail_constants, solve

log = logging.getLogger("chtumor")

EXIT_CONFIG, EXIT_SOLVER, EXIT_OTHER = 2, 3, 4


def _clean(obj):
    """Make results JSON-safe: numpy scalars to floats, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_comment(cfg) -> str:
    return "effective config:\n" + cfg.to_ini().strip()


def run_simulate(cfg, out: Path, fmt: str, jobs: int) -> dict:
    params, grid, solver = cfg.model(), cfg.grid(), cfg.solver()
    init = studies.initial_state(grid, params.potential, cfg.get("initial", "scale"))
    traj = solve(init, params, grid, solver)
    rep = energy_check(traj)
    cons = np.array([conserved_quantity(s, params, grid) for s in traj.states])
    drift = float(np.max(np.abs(cons - cons[0])))
    tail = newton_tail_constants(traj)
    summary = {
        "steps": len(traj.states) - 1,
        "dt": traj.dt,
        "final_time": float(traj.times[-1]),
        "conservation": {"initial": float(cons[0]), "max_drift": drift,
                         "tolerance": 1e-9 * (1 + abs(float(cons[0]))),
                         "ok": drift <= 1e-9 * (1 + abs(float(cons[0])))},
        "energy": {"initial": float(rep.energies[0]), "final": float(rep.energies[-1]),
                   "max_increase": rep.max_increase,
                   "lyapunov": params.proliferation.is_constant and params.proliferation.value == 0.0},
        "bound": {"lhs": rep.bound_lhs, "data": rep.data_term, "ratio": rep.ratio},
        "newton": {"iterations": int(sum(i.iterations for i in traj.info)),
                   "halved_steps": int(sum(i.halved for i in traj.info)),
                   "max_tail_constant": float(tail.max()) if tail.size else None},
    }
    if fmt in ("csv", "both"):
        comment = _config_comment(cfg)
        with open(out / "timeseries.csv", "w") as fh:
            fh.writelines(f"# {line}\n" for line in comment.splitlines())
            fh.write("t,conserved,energy,newton_iterations\n")
            iters = [0] + [i.iterations for i in traj.info]
            for s, c, e, k in zip(traj.states, cons, rep.energies, iters):
                fh.write(f"{s.t:.17g},{c:.17g},{e:.17g},{k}\n")
        every = cfg.get("output", "checkpoint_every")
        keep = list(range(0, len(traj.states), every))
        if keep[-1] != len(traj.states) - 1:
            keep.append(len(traj.states) - 1)
        write_fields_csv(grid, out / "fields.csv",
                         {n: [getattr(traj.states[k], n) for k in keep] for n in ("mu", "phi", "sigma", "xi")},
                         times=[traj.states[k].t for k in keep], comment=comment)
    return summary


def run_sweep(cfg, out: Path, fmt: str, jobs: int) -> dict:
    sweep = cfg.sweep()
    fn = studies.sweep_beta if sweep.kind == "beta" else studies.sweep_alpha
    result = fn(sweep, jobs=jobs)
    if fmt in ("csv", "both"):
        result.write_csv(out / "study.csv")
        result.write_loglog(out / "study_loglog.dat")
    return {"study": result.to_dict(), "rate_ok": result.rate >= 0.45, "r2_ok": result.r2 >= 0.98}


def run_nonuniq(cfg, out: Path, fmt: str, jobs: int) -> dict:
    L = cfg.get("nonuniq", "L")
    res = studies.nonuniqueness_demo(L, cfg.get("nonuniq", "psi_a"), cfg.get("nonuniq", "psi_b"),
                                     cfg.grid(), cfg.get("solver", "dt"), cfg.get("model", "T"))
    d = res.to_dict()
    d["residual_ok"] = max(res.residuals_a + res.residuals_b) <= 1e-12
    d["separated"] = res.separation >= 0.1
    if fmt in ("csv", "both"):
        with open(out / "nonuniq.csv", "w") as fh:
            fh.write("candidate,r1,r2,r3\n")
            for name, r in (("a", res.residuals_a), ("b", res.residuals_b)):
                fh.write(f"{name}," + ",".join(f"{v:.17g}" for v in r) + "\n")
    return d


def run_manufactured(cfg, out: Path, fmt: str, jobs: int) -> dict:
    m = cfg.values["manufactured"]
    report = studies.manufactured_run(cfg.exact(), cfg.model(), cfg.grid(), cfg.solver(),
                                      ns=m["ns"], dts=m["dts"], space_dt=m["space_dt"],
                                      space_T=m["space_T"], time_n=m["time_n"])
    if fmt in ("csv", "both"):
        with open(out / "manufactured.csv", "w") as fh:
            fh.write("study,step,error_mu,error_phi,error_sigma,error_total\n")
            for kind in ("space", "time"):
                r = report[kind]
                for s, e in zip(r["steps"], r["errors"]):
                    fh.write(f"{kind},{s:.17g},{e['mu']:.17g},{e['phi']:.17g},{e['sigma']:.17g},{e['total']:.17g}\n")
    return report


RUNNERS = {
    "simulate": run_simulate,
    "sweep-beta": run_sweep,
    "sweep-alpha": run_sweep,
    "nonuniq": run_nonuniq,
    "manufactured": run_manufactured,
}


def default_config_path(command: str):
    return resources.files("chtumor") / "configs" / f"{command.replace('-', '_')}.ini"


def run(cfg: cfgmod.RunConfig, out, fmt: str = None, jobs: int = 1) -> int:
    """Execute a validated config, writing artifacts to ``out``; returns the exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fmt = fmt or cfg.get("output", "format")
    (out / "effective_config.ini").write_text(cfg.to_ini())
    try:
        payload = RUNNERS[cfg.command](cfg, out, fmt, jobs)
    except (StepFailure, np.linalg.LinAlgError) as err:
        return _fail(out, EXIT_SOLVER, err, cfg)
    except (cfgmod.ConfigError, studies.ConfigError) as err:
        return _fail(out, EXIT_CONFIG, err, cfg)
    except RuntimeError as err:
        code = EXIT_SOLVER if isinstance(err.__cause__, StepFailure) else EXIT_OTHER
        return _fail(out, code, err, cfg)
    summary = {"command": cfg.command, "version": __version__, "config": cfg.values, "result": payload}
    if fmt in ("json", "both"):
        _write_json(out / "summary.json", summary)
    log.info("%s finished; artifacts in %s", cfg.command, out)
    return 0


def _fail(out, code, err, cfg=None):
    payload = {"status": code, "error": type(err).__name__, "message": str(err)}
    if isinstance(err, cfgmod.ConfigError):
        payload["problems"] = err.problems
    if cfg is not None:
        payload["command"] = cfg.command
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(out) / "failure.json", payload)
    print(json.dumps(_clean(payload), sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chtumor", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in cfgmod.COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI config (default: packaged example)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel solves within a sweep")
        p.add_argument("--format", choices=("json", "csv", "both"), default=None,
                       help="artifact formats (default: output.format)")
    sub.add_parser("defaults", help="print the defaults table")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CHTUMOR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(cfgmod.defaults_table_markdown())
        return 0
    if args.jobs < 1:
        return _fail(args.out, EXIT_CONFIG, cfgmod.ConfigError(["--jobs must be at least 1"]))
    try:
        if args.config is None:
            cfg = cfgmod.parse_text(default_config_path(args.command).read_text(), args.command,
                                    source=f"<packaged {args.command}>")
        else:
            cfg = cfgmod.parse_config(args.config, args.command)
    except cfgmod.ConfigError as err:
        return _fail(args.out, EXIT_CONFIG, err)
    return run(cfg, args.out, args.format, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
