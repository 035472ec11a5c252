"""Singular-limit error sweeps, the non-uniqueness construction, and MMS order checks."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from . import potentials as pot
from .discretization import Grid, bochner_norm, norm_H
from .solver import (
    ModelParams,
    SolverConfig,
    State,
    Trajectory,
    conservation_drift,
    conserved_quantity,
    make_state,
    residual,
    solve,
    stability_aggregate,
)

log = logging.getLogger(__name__)

DEFAULT_VALUES = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)

BETA_NORMS = ("mu_L2_H", "phi_L2_V", "sigma_Linf_H", "sigma_L2_V", "combo_Linf_Vstar")
ALPHA_NORMS = ("mu_L2_V", "phi_Linf_H", "phi_L2_V", "sigma_Linf_H", "sigma_L2_V")


class ConfigError(ValueError):
    pass


class HypothesisError(ConfigError):
    """A study was requested outside the hypotheses of the estimate it checks."""


def initial_state(grid: Grid, potential: pot.PotentialSpec, scale: float = 1.0) -> State:
    """Default data phi0 = 0.2 c, mu0 = sigma0 = 0.1 + 0.1 c with c = prod cos(pi x_i)."""
    c = np.ones(grid.shape)
    for xi in grid.coords():
        c = c * np.cos(np.pi * xi)
    return make_state(grid, scale * (0.1 + 0.1 * c), scale * 0.2 * c, scale * (0.1 + 0.1 * c), potential)


@dataclass(frozen=True)
class SweepConfig:
    """One parameter sweep: ``kind`` is "beta" (alpha fixed) or "alpha" (beta fixed)."""

    kind: str = "beta"
    fixed: float = 0.05
    values: tuple = DEFAULT_VALUES
    grid: Grid = field(default_factory=Grid)
    dt: float = 5e-4
    T: float = 0.5
    gamma: float = 1.0
    potential: pot.PotentialSpec = field(default_factory=pot.PotentialSpec)
    proliferation: pot.ProliferationSpec = field(
        default_factory=lambda: pot.ProliferationSpec("constant", value=1.0))
    data_scale: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    # parameter value of the reference run; 0 means the limit problem itself
    reference: float = 0.0

    def validate(self):
        problems = []
        if self.kind not in ("beta", "alpha"):
            problems.append(f"sweep kind must be 'beta' or 'alpha', got {self.kind!r}")
        vals = list(self.values)
        if len(vals) < 3:
            problems.append("a sweep needs at least 3 parameter values")
        if any(not 0.0 < v < 1.0 for v in vals):
            problems.append(f"sweep values must lie in (0, 1), got {vals}")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            problems.append(f"sweep values must be strictly decreasing, got {vals}")
        if not 0.0 < self.fixed < 1.0:
            problems.append(f"fixed parameter must lie in (0, 1), got {self.fixed}")
        if self.reference < 0 or (vals and self.reference >= min(vals)):
            problems.append("reference parameter must be 0 or below every sweep value")
        if self.kind == "alpha" and not self.proliferation.is_constant:
            problems.append("the alpha-sweep estimate assumes p is a nonnegative constant; "
                            f"got proliferation kind {self.proliferation.kind!r}")
        if problems:
            cls = HypothesisError if any("p is a nonnegative constant" in p for p in problems) else ConfigError
            raise cls("; ".join(problems))

    def params(self, value: float) -> ModelParams:
        a, b = (self.fixed, value) if self.kind == "beta" else (value, self.fixed)
        return ModelParams(alpha=a, beta=b, gamma=self.gamma, potential=self.potential,
                           proliferation=self.proliferation, T=self.T)

    @property
    def hypotheses(self) -> str:
        if self.kind == "alpha" and self.potential.family != "double_well":
            return "outside theorem hypotheses: convex part not finite on R"
        return "within theorem hypotheses"


def fit_rate(pairs: Sequence) -> tuple:
    """Least-squares fit of log(error) = rate * log(param) + intercept.

    Returns ``(rate, intercept, r2)``; ``r2`` is 1 when the fit is exact.
    """
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 (param, error) pairs, got {len(pairs)}")
    x = np.log([float(p) for p, _ in pairs])
    y_raw = np.array([float(e) for _, e in pairs])
    if np.any(y_raw <= 0) or np.any(np.exp(x) <= 0):
        raise ValueError("parameters and errors must be positive")
    y = np.log(y_raw)
    A = np.vstack([x, np.ones_like(x)]).T
    (rate, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (rate * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) @ (y - y.mean())))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-24 else 0.0)
    return float(rate), float(intercept), float(r2)


def _diff(a: Trajectory, b: Trajectory, name: str) -> list:
    return [u - v for u, v in zip(a.field(name), b.field(name))]


def composite_error(kind: str, run: Trajectory, ref: Trajectory) -> dict:
    """Per-norm errors between a viscous run and its limit reference.

    For ``kind == "beta"`` the parts are those of the beta -> 0 estimate
    (the combination alpha mu + phi + sigma uses the shared alpha); for
    ``kind == "alpha"`` those of the alpha -> 0 estimate.  An intersection
    norm is the sum of its two parts.
    """
    g, dt = run.grid, run.dt
    if len(run.states) != len(ref.states) or abs(run.dt - ref.dt) > 1e-15:
        raise ValueError("run and reference must share time samples")
    dmu, dphi, dsig = (_diff(run, ref, n) for n in ("mu", "phi", "sigma"))
    if kind == "beta":
        a = run.params.alpha
        combo = [a * m + p + s for m, p, s in zip(dmu, dphi, dsig)]
        parts = {
            "mu_L2_H": bochner_norm(g, dmu, dt, "L2_H"),
            "phi_L2_V": bochner_norm(g, dphi, dt, "L2_V"),
            "sigma_Linf_H": bochner_norm(g, dsig, dt, "Linf_H"),
            "sigma_L2_V": bochner_norm(g, dsig, dt, "L2_V"),
            "combo_Linf_Vstar": bochner_norm(g, combo, dt, "Linf_Vstar"),
        }
    else:
        parts = {
            "mu_L2_V": bochner_norm(g, dmu, dt, "L2_V"),
            "phi_Linf_H": bochner_norm(g, dphi, dt, "Linf_H"),
            "phi_L2_V": bochner_norm(g, dphi, dt, "L2_V"),
            "sigma_Linf_H": bochner_norm(g, dsig, dt, "Linf_H"),
            "sigma_L2_V": bochner_norm(g, dsig, dt, "L2_V"),
        }
    parts["composite"] = sum(parts.values())
    return parts


def _individual_Vstar(run: Trajectory, ref: Trajectory) -> dict:
    return {f"{n}_Linf_Vstar": bochner_norm(run.grid, _diff(run, ref, n), run.dt, "Linf_Vstar")
            for n in ("mu", "phi", "sigma")}


def _run_summary(traj: Trajectory) -> dict:
    lhs, rhs = stability_aggregate(traj)
    c0 = conserved_quantity(traj.states[0], traj.params, traj.grid)
    return {
        "alpha": traj.params.alpha,
        "beta": traj.params.beta,
        "regime": traj.params.regime,
        "steps": len(traj.states) - 1,
        "dt": traj.dt,
        "newton_iterations": int(sum(i.iterations for i in traj.info)),
        "halved_steps": int(sum(i.halved for i in traj.info)),
        "conserved_initial": c0,
        "conservation_drift": conservation_drift(traj),
        "bound_lhs": lhs,
        "bound_data": rhs,
        "bound_ratio": lhs / rhs if rhs > 0 else math.inf,
    }


@dataclass
class StudyResult:
    kind: str
    fixed: float
    params: list
    errors: list
    breakdown: list
    rate: float
    intercept: float
    r2: float
    reference: dict
    runs: list
    hypotheses: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        names = list(self.breakdown[0]) if self.breakdown else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "composite"] + [n for n in names if n != "composite"])
            for p, e, parts in zip(self.params, self.errors, self.breakdown):
                w.writerow([f"{p:.17g}", f"{e:.17g}"] + [f"{parts[n]:.17g}" for n in names if n != "composite"])

    def write_loglog(self, path):
        with open(path, "w") as fh:
            fh.write(f"# {self.kind}-sweep: log10(param) log10(composite error); rate {self.rate:.6f}\n")
            for p, e in zip(self.params, self.errors):
                fh.write(f"{math.log10(p):.17g} {math.log10(e):.17g}\n")


def _solve_case(args):
    cfg, value = args
    params = cfg.params(value)
    init = initial_state(cfg.grid, cfg.potential, cfg.data_scale)
    solver_cfg = SolverConfig(**{**asdict(cfg.solver), "dt": cfg.dt})
    return solve(init, params, cfg.grid, solver_cfg)


def _sweep(cfg: SweepConfig, jobs: int = 1) -> StudyResult:
    cfg.validate()
    if cfg.hypotheses != "within theorem hypotheses":
        log.warning("%s-sweep: %s", cfg.kind, cfg.hypotheses)
    cases = [(cfg, cfg.reference)] + [(cfg, v) for v in cfg.values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            trajs = list(ex.map(_solve_case, cases))
    else:
        trajs = []
        for c in cases:
            log.info("%s-sweep: solving %s = %g", cfg.kind, cfg.kind, c[1])
            try:
                trajs.append(_solve_case(c))
            except Exception as err:
                raise RuntimeError(f"{cfg.kind}-sweep failed at {cfg.kind} = {c[1]}: {err}") from err
    ref, runs = trajs[0], trajs[1:]
    breakdown = [composite_error(cfg.kind, r, ref) for r in runs]
    errors = [b["composite"] for b in breakdown]
    rate, intercept, r2 = fit_rate(zip(cfg.values, errors))
    if rate > 0.55:
        log.info("observed rate %.3f exceeds 1/2; the estimate is an upper bound", rate)
    diagnostics = {}
    if cfg.kind == "beta":
        diagnostics["individual_Linf_Vstar"] = [_individual_Vstar(r, ref) for r in runs]
    return StudyResult(
        kind=cfg.kind, fixed=cfg.fixed, params=list(cfg.values), errors=errors, breakdown=breakdown,
        rate=rate, intercept=intercept, r2=r2, reference=_run_summary(ref),
        runs=[_run_summary(r) for r in runs], hypotheses=cfg.hypotheses, diagnostics=diagnostics,
    )


def sweep_beta(cfg: SweepConfig, jobs: int = 1) -> StudyResult:
    """Errors against the beta = 0 problem for decreasing beta at fixed alpha."""
    if cfg.kind != "beta":
        raise ConfigError("sweep_beta needs a config with kind 'beta'")
    return _sweep(cfg, jobs)


def sweep_alpha(cfg: SweepConfig, jobs: int = 1) -> StudyResult:
    """Errors against the alpha = 0 problem for decreasing alpha at fixed beta.

    Requires constant p; potentials other than the double well run but are
    labelled as outside the hypotheses of the estimate.
    """
    if cfg.kind != "alpha":
        raise ConfigError("sweep_alpha needs a config with kind 'alpha'")
    return _sweep(cfg, jobs)


# --- non-uniqueness ---------------------------------------------------------

@dataclass
class NonuniqResult:
    L: float
    alpha: float
    residuals_a: tuple
    residuals_b: tuple
    separation: float
    selection_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _psi_callable(psi) -> Callable:
    if callable(psi):
        return psi
    if isinstance(psi, (int, float)):
        return lambda t, c=float(psi): c
    t = sp.Symbol("t")
    fn = sp.lambdify(t, sp.sympify(psi), "numpy")
    return lambda s: float(fn(s))


def nonuniq_trajectory(L: float, psi, grid: Grid, dt: float, T: float) -> tuple:
    """States mu = -L psi, phi = psi, sigma = 0, xi = 0 at uniform times."""
    from .solver import n_steps
    f = _psi_callable(psi)
    k = n_steps(T, dt)
    step = T / k if k else dt
    states = []
    for j in range(k + 1):
        t = j * step
        v = f(t)
        if abs(v) > 1.0:
            raise ConfigError(f"psi({t:g}) = {v:g} leaves [-1, 1]")
        z = np.zeros(grid.shape)
        states.append(State(np.full(grid.shape, -L * v), np.full(grid.shape, float(v)), z.copy(), z.copy(), t))
    return states, step


def nonuniqueness_demo(L: float, psi_a, psi_b, grid: Grid, dt: float, T: float,
                       alpha: Optional[float] = None) -> NonuniqResult:
    """Certify two distinct discrete solutions of the beta = 0 problem when alpha L = 1.

    p = 0, indicator convex part, pi(r) = -L r on [-1, 1], zero data.  The
    residual uses the exact selection xi = 0, which lies in B(psi) whenever
    |psi| <= 1.
    """
    alpha = 1.0 / L if alpha is None else alpha
    if abs(alpha * L - 1.0) > 1e-12:
        raise ConfigError(f"the construction needs alpha * L = 1, got alpha * L = {alpha * L:g}")
    params = ModelParams(alpha=alpha, beta=0.0, potential=pot.PotentialSpec("nonuniq", L=L),
                         proliferation=pot.ProliferationSpec("constant", value=0.0), T=T)
    out = []
    selection_ok = True
    for psi in (psi_a, psi_b):
        states, step = nonuniq_trajectory(L, psi, grid, dt, T)
        worst = np.zeros(3)
        for prev, nxt in zip(states[:-1], states[1:]):
            worst = np.maximum(worst, residual(prev, nxt, params, step, grid))
            # 0 is the minimum-modulus element of B(phi) on [-1, 1]
            selection_ok &= bool(np.all(pot.eval_B0(params.potential, nxt.phi) == nxt.xi))
        out.append((states, step, tuple(float(w) for w in worst)))
    (sa, step, ra), (sb, _, rb) = out
    sep = bochner_norm(grid, [a.phi - b.phi for a, b in zip(sa, sb)], step, "L2_H")
    return NonuniqResult(L, alpha, ra, rb, sep, selection_ok)


# --- manufactured solutions -------------------------------------------------

X, Y, TT = sp.symbols("x y t")

DEFAULT_EXACT = {
    "mu": "exp(-t)*(0.3 + 0.5*cos(pi*x))",
    "phi": "exp(-t)*cos(pi*x)",
    "sigma": "1 + 0.5*exp(-t)*cos(pi*x)",
}


@dataclass
class ManufacturedSolution:
    """Closed-form triple (strings or sympy expressions in x, y, t)."""

    mu: object = DEFAULT_EXACT["mu"]
    phi: object = DEFAULT_EXACT["phi"]
    sigma: object = DEFAULT_EXACT["sigma"]

    def _compiled(self, dim):
        syms = (X, Y)[:dim]
        out = {}
        for name in ("mu", "phi", "sigma"):
            e = sp.sympify(getattr(self, name), locals={"x": X, "y": Y, "t": TT})
            lap = sum(sp.diff(e, s, 2) for s in syms)
            out[name] = tuple(sp.lambdify((*syms, TT), ex, "numpy") for ex in (e, sp.diff(e, TT), lap))
        return out

    def evaluator(self, grid: Grid):
        comp = self._compiled(grid.dim)
        coords = grid.coords()

        def ev(name, which, t):
            v = comp[name][which](*coords, t)
            return np.broadcast_to(np.asarray(v, dtype=float), grid.shape).copy()
        return ev


def manufactured_sources(exact: ManufacturedSolution, params: ModelParams, grid: Grid):
    """Return ``(sources(t), exact_state(t))`` for the forced system."""
    ev = exact.evaluator(grid)
    a, b, g = params.alpha, params.beta, params.gamma

    def state(t):
        return make_state(grid, ev("mu", 0, t), ev("phi", 0, t), ev("sigma", 0, t), params.potential, t)

    def sources(t):
        mu, phi, sig = ev("mu", 0, t), ev("phi", 0, t), ev("sigma", 0, t)
        R = pot.eval_p(params.proliferation, phi) * (sig - g * mu)
        s1 = a * ev("mu", 1, t) + ev("phi", 1, t) - ev("mu", 2, t) - R
        s2 = (mu - b * ev("phi", 1, t) + ev("phi", 2, t)
              - pot.eval_B(params.potential, phi, clamp=True) - pot.eval_pi(params.potential, phi))
        s3 = ev("sigma", 1, t) - ev("sigma", 2, t) + R
        return s1, s2, s3
    return sources, state


def manufactured_error(exact: ManufacturedSolution, params: ModelParams, grid: Grid, cfg: SolverConfig) -> dict:
    """Run the forced problem and report H-norm errors at the final time."""
    sources, state = manufactured_sources(exact, params, grid)
    traj = solve(state(0.0), params, grid, cfg, sources=sources)
    end = traj.states[-1]
    ref = state(traj.times[-1])
    errs = {n: norm_H(grid, getattr(end, n) - getattr(ref, n)) for n in ("mu", "phi", "sigma")}
    errs["total"] = errs["mu"] + errs["phi"] + errs["sigma"]
    return errs


@dataclass
class OrderReport:
    kind: str
    steps: list
    errors: list
    ratios: list
    orders: list

    def to_dict(self) -> dict:
        return asdict(self)


def _report(kind, steps, errors):
    tot = [e["total"] for e in errors]
    ratios = [a / b for a, b in zip(tot, tot[1:])]
    return OrderReport(kind, list(steps), errors, ratios, [math.log2(r) for r in ratios])


def spatial_order(exact: ManufacturedSolution, params: ModelParams, ns=(16, 32, 64), dim: int = 1,
                  cfg: SolverConfig = SolverConfig(dt=1e-5)) -> OrderReport:
    """Errors at T under h-halving with a fixed tiny dt; ratios near 4 mean second order."""
    errors = [manufactured_error(exact, params, Grid(dim, n), cfg) for n in ns]
    return _report("space", [1.0 / n for n in ns], errors)


def temporal_order(exact: ManufacturedSolution, params: ModelParams, dts=(2e-2, 1e-2, 5e-3), n: int = 1024,
                   dim: int = 1, cfg: SolverConfig = SolverConfig()) -> OrderReport:
    """Errors at T under dt-halving on a fine grid; ratios near 2 mean first order."""
    grid = Grid(dim, n)
    errors = [manufactured_error(exact, params, grid, SolverConfig(**{**asdict(cfg), "dt": d})) for d in dts]
    return _report("time", list(dts), errors)


def manufactured_run(exact: ManufacturedSolution, params: ModelParams, grid: Grid, cfg: SolverConfig,
                     ns=(16, 32, 64), dts=(2e-2, 1e-2, 5e-3), space_dt: float = 1e-5,
                     space_T: float = 2e-3, time_n: int = 1024) -> dict:
    """Spatial and temporal order study around the given configuration.

    The spatial study overrides T and dt with ``space_T`` and ``space_dt`` so
    the time error stays negligible; the temporal study uses ``params.T``.
    """
    from dataclasses import replace
    sp_params = replace(params, T=space_T)
    space = spatial_order(exact, sp_params, ns, grid.dim, SolverConfig(**{**asdict(cfg), "dt": space_dt}))
    time = temporal_order(exact, params, dts, time_n, grid.dim, cfg)
    return {"space": space.to_dict(), "time": time.to_dict()}
