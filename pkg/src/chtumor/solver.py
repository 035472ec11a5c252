"""Backward-Euler / Newton integrator for the viscous tumour-growth system.

Unknowns per time level are the chemical potential ``mu``, the order
parameter ``phi`` and the nutrient ``sigma``; ``xi`` records the selection
of the convex subdifferential at ``phi``.  One step solves, with every term
at the new time level,

    alpha (mu - mu_old) + (phi - phi_old) - dt Lap mu   = dt (R + s1)
    mu - beta (phi - phi_old) / dt + Lap phi - xi - pi(phi) = s2
    (sigma - sigma_old) - dt Lap sigma                  = dt (-R + s3)

with R = p(phi) (sigma - gamma mu) and xi = B(phi) (Yosida-regularized for
indicator potentials).  Setting ``beta = 0`` or ``alpha = 0`` gives the two
limit problems; the Newton machinery is identical.  The optional sources
``s1, s2, s3`` are only used for manufactured solutions.

Adding the first and third rows shows that, for zero sources, the sum of
``alpha mu + phi + sigma`` over the grid is an affine function of the new
level that every undamped Newton update sets exactly; the integrator always
finishes a step with an undamped update, so the total is conserved to
rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import potentials as pot
from .discretization import Grid, bochner_norm, inner_H, norm_grad, norm_H, norm_V, norm_Vstar

log = logging.getLogger(__name__)

MAX_STEPS = 10_000_000


class StepFailure(RuntimeError):
    """Newton did not converge; carries the last combined residual."""

    def __init__(self, message, residual, t=None):
        where = "" if t is None else f" at t = {t:.6g}"
        super().__init__(f"{message}{where} (last residual {residual:.3e})")
        self.residual = residual
        self.t = t


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    beta: float
    gamma: float = 1.0
    potential: pot.PotentialSpec = field(default_factory=pot.PotentialSpec)
    proliferation: pot.ProliferationSpec = field(default_factory=pot.ProliferationSpec)
    T: float = 1.0

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.alpha < 1.0:
            problems.append(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            problems.append(f"beta must lie in [0, 1), got {self.beta}")
        if self.alpha == 0.0 and self.beta == 0.0:
            problems.append("alpha = beta = 0 (pure Cahn-Hilliard limit) is not supported")
        if self.gamma <= 0:
            problems.append(f"gamma must be positive, got {self.gamma}")
        if self.T < 0:
            problems.append(f"T must be nonnegative, got {self.T}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def regime(self) -> str:
        if self.beta == 0.0:
            return "beta0"
        if self.alpha == 0.0:
            return "alpha0"
        return "viscous"


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    newton_tol: float = 1e-10
    newton_max: int = 50
    damping: float = 0.5
    max_halvings: int = 20
    lin_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.newton_tol > 0 and self.lin_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.newton_max < 1:
            raise ValueError("newton_max must be at least 1")
        if not 0.0 < self.damping < 1.0:
            raise ValueError(f"damping factor must lie in (0, 1), got {self.damping}")


@dataclass
class State:
    mu: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray
    t: float = 0.0

    def finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.mu, self.phi, self.sigma, self.xi))


def make_state(grid: Grid, mu, phi, sigma, potential: pot.PotentialSpec, t: float = 0.0) -> State:
    """Build a state on ``grid``, broadcasting scalars and recording xi = B(phi)."""
    arrs = [np.broadcast_to(np.asarray(a, dtype=float), grid.shape).copy() for a in (mu, phi, sigma)]
    xi = np.asarray(pot.eval_B(potential, arrs[1], clamp=True), dtype=float)
    return State(arrs[0], arrs[1], arrs[2], xi, t)


@dataclass
class StepInfo:
    iterations: int
    residuals: list
    halved: bool = False


def _lap(grid, f):
    return grid.unflat(grid.laplacian @ grid.flat(f))


def residual_fields(prev: State, nxt: State, params: ModelParams, dt: float, grid: Grid,
                    source=None, xi=None):
    """Pointwise residuals of the three discrete equations (scaled as in Newton).

    ``xi`` defaults to ``nxt.xi``: the residual certifies the equations for the
    selection carried by the state, so exact graph selections can be checked.
    """
    a, b = params.alpha, params.beta
    mu, phi, sigma = nxt.mu, nxt.phi, nxt.sigma
    xi = nxt.xi if xi is None else xi
    p = pot.eval_p(params.proliferation, phi)
    R = p * (sigma - params.gamma * mu)
    s1, s2, s3 = (0.0, 0.0, 0.0) if source is None else source
    g1 = a * (mu - prev.mu) + (phi - prev.phi) - dt * _lap(grid, mu) - dt * (R + s1)
    g2 = mu - b * (phi - prev.phi) / dt + _lap(grid, phi) - xi - pot.eval_pi(params.potential, phi) - s2
    g3 = (sigma - prev.sigma) - dt * _lap(grid, sigma) + dt * (R - s3)
    return g1, g2, g3


def residual(prev: State, nxt: State, params: ModelParams, dt: float, grid: Grid, source=None):
    """H-norms (r1, r2, r3) of the equation residuals for the transition prev -> nxt."""
    return tuple(norm_H(grid, g) for g in residual_fields(prev, nxt, params, dt, grid, source))


class _JacobianPattern:
    """Fixed CSC sparsity of the Newton matrix with slots for the nine block diagonals.

    Only the block diagonals depend on the iterate, so each Newton iteration
    copies the constant data and adds into precomputed slots.
    """

    def __init__(self, grid, a, b, dt):
        n = grid.size
        eye = sps.identity(n, format="csr")
        lap = grid.laplacian
        const = sps.bmat([[a * eye - dt * lap, eye, None],
                          [eye, -(b / dt) * eye + lap, None],
                          [None, None, eye - dt * lap]], format="coo")
        idx = np.arange(n)
        rows = [const.row] + [idx + r * n for r in range(3) for c in range(3)]
        cols = [const.col] + [idx + c * n for r in range(3) for c in range(3)]
        data = [const.data] + [np.zeros(n)] * 9
        mat = sps.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(3 * n, 3 * n)).tocsc()
        mat.sum_duplicates()
        mat.sort_indices()
        self.indptr, self.indices, self.data = mat.indptr, mat.indices, mat.data
        self.shape = mat.shape
        cols_of = np.repeat(np.arange(3 * n), np.diff(self.indptr))
        keys = cols_of * (3 * n) + self.indices
        self.slots = {(r, c): np.searchsorted(keys, (idx + c * n) * (3 * n) + idx + r * n)
                      for r in range(3) for c in range(3)}

    def assemble(self, blocks: dict) -> sps.csc_matrix:
        data = self.data.copy()
        for key, vals in blocks.items():
            data[self.slots[key]] += vals
        return sps.csc_matrix((data, self.indices, self.indptr), shape=self.shape)


@lru_cache(maxsize=32)
def _pattern(grid, alpha, beta, dt):
    return _JacobianPattern(grid, alpha, beta, dt)


def _jacobian(pattern, grid, mu, phi, sigma, params, dt):
    flat = grid.flat
    g = params.gamma
    p = flat(pot.eval_p(params.proliferation, phi))
    dp = flat(pot.eval_p_prime(params.proliferation, phi))
    dR_dphi = dp * (flat(sigma) - g * flat(mu))
    dF = flat(pot.eval_dB(params.potential, phi, clamp=True)) + flat(pot.eval_pi_prime(params.potential, phi))
    return pattern.assemble({
        (0, 0): dt * g * p, (0, 1): -dt * dR_dphi, (0, 2): -dt * p,
        (1, 1): -dF,
        (2, 0): -dt * g * p, (2, 1): dt * dR_dphi, (2, 2): dt * p,
    })


def step(state: State, params: ModelParams, cfg: SolverConfig, grid: Grid, dt: float = None,
         source=None) -> tuple:
    """Advance one backward-Euler step; returns ``(new_state, StepInfo)``.

    Raises :class:`StepFailure` if damped Newton fails to reach ``cfg.newton_tol``.
    """
    dt = cfg.dt if dt is None else dt
    spec = params.potential
    n = grid.size
    mu, phi, sigma = state.mu.copy(), state.phi.copy(), state.sigma.copy()
    if spec.family == "logarithmic":
        phi = np.clip(phi, -1.0 + pot.LOG_CLAMP, 1.0 - pot.LOG_CLAMP)

    def evaluate(mu, phi, sigma):
        xi = np.asarray(pot.eval_B(spec, phi, clamp=True), dtype=float)
        trial = State(mu, phi, sigma, xi, state.t + dt)
        gs = residual_fields(state, trial, params, dt, grid, source)
        norms = [norm_H(grid, g) for g in gs]
        return trial, gs, max(norms)

    pattern = _pattern(grid, params.alpha, params.beta, dt)
    trial, gs, res = evaluate(mu, phi, sigma)
    history = [res]
    last_full = False
    for it in range(1, cfg.newton_max + 1):
        if res <= cfg.newton_tol and last_full and it > 1:
            break
        jac = _jacobian(pattern, grid, mu, phi, sigma, params, dt)
        rhs = -np.concatenate([grid.flat(g) for g in gs])
        delta = spla.spsolve(jac, rhs)
        if not np.all(np.isfinite(delta)):
            raise StepFailure("singular Newton system", res, state.t + dt)
        dmu, dphi, dsig = (grid.unflat(delta[k * n:(k + 1) * n]) for k in range(3))
        lam = 1.0
        for _ in range(cfg.max_halvings + 1):
            cand_phi = phi + lam * dphi
            if spec.family == "logarithmic":
                cand_phi = np.clip(cand_phi, -1.0 + pot.LOG_CLAMP, 1.0 - pot.LOG_CLAMP)
            cand = evaluate(mu + lam * dmu, cand_phi, sigma + lam * dsig)
            # near convergence, rounding can stall the merit; a full step is then kept
            if cand[2] < res or (lam == 1.0 and cand[2] <= 10 * cfg.newton_tol):
                break
            lam *= cfg.damping
        else:
            raise StepFailure("Newton line search failed", res, state.t + dt)
        trial, gs, res = cand
        mu, phi, sigma = trial.mu, trial.phi, trial.sigma
        last_full = lam == 1.0
        history.append(res)
    else:
        if not (res <= cfg.newton_tol and last_full):
            raise StepFailure(f"Newton did not converge in {cfg.newton_max} iterations", res, state.t + dt)
    if not trial.finite():
        raise StepFailure("non-finite Newton iterate", res, state.t + dt)
    return trial, StepInfo(len(history) - 1, history)


@dataclass
class Trajectory:
    grid: Grid
    params: ModelParams
    dt: float
    states: list
    info: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def field(self, name: str) -> list:
        return [getattr(s, name) for s in self.states]


def n_steps(T: float, dt: float) -> int:
    """Number of uniform steps covering [0, T]; ratios within 1e-9 of an integer round."""
    if T == 0:
        return 0
    ratio = T / dt
    k = round(ratio)
    return int(k) if abs(ratio - k) <= 1e-9 * max(1.0, ratio) else int(math.ceil(ratio))


def solve(initial: State, params: ModelParams, grid: Grid, cfg: SolverConfig, sources=None) -> Trajectory:
    """Integrate from ``initial`` to ``params.T`` with uniform steps.

    The step is ``T / ceil(T / dt)`` so that the last sample lands on ``T``.
    A failed step is retried once as two half steps; a second failure aborts.
    ``sources``, if given, maps a time to the tuple (s1, s2, s3) at that time.
    """
    grid.check(initial.mu, initial.phi, initial.sigma, initial.xi)
    nsteps = n_steps(params.T, cfg.dt)
    if nsteps > MAX_STEPS:
        raise ValueError(f"T/dt = {nsteps} steps exceeds the limit of {MAX_STEPS}")
    dt = params.T / nsteps if nsteps else cfg.dt
    if nsteps and abs(dt - cfg.dt) > 1e-12 * cfg.dt:
        log.info("using dt = %.17g so that %d steps reach T = %g", dt, nsteps, params.T)
    traj = Trajectory(grid, params, dt, [initial])
    state = initial
    for k in range(nsteps):
        t_next = (k + 1) * dt
        src = sources(t_next) if sources is not None else None
        try:
            new, info = step(state, params, cfg, grid, dt=dt, source=src)
        except StepFailure as err:
            log.warning("step to t = %.6g failed (%s); retrying with two half steps", t_next, err)
            try:
                half_src = sources(t_next - dt / 2) if sources is not None else None
                mid, info1 = step(state, params, cfg, grid, dt=dt / 2, source=half_src)
                new, info2 = step(mid, params, cfg, grid, dt=dt / 2, source=src)
            except StepFailure as err2:
                raise StepFailure("step failed after dt halving", err2.residual, t_next) from err2
            info = StepInfo(info1.iterations + info2.iterations, info1.residuals + info2.residuals, True)
        new = replace(new, t=t_next)
        traj.states.append(new)
        traj.info.append(info)
        state = new
    return traj


def conserved_quantity(state: State, params: ModelParams, grid: Grid) -> float:
    """Integral of alpha mu + phi + sigma over the domain."""
    total = params.alpha * state.mu + state.phi + state.sigma
    return inner_H(grid, total, np.ones(grid.shape))


def conservation_drift(traj: Trajectory) -> float:
    vals = np.array([conserved_quantity(s, traj.params, traj.grid) for s in traj.states])
    return float(np.max(np.abs(vals - vals[0])))


def energy(state: State, params: ModelParams, grid: Grid) -> float:
    """Lyapunov functional for p = 0: 1/2|grad phi|^2 + F(phi) + alpha/2 mu^2."""
    F = pot.eval_F(params.potential, state.phi, clamp=True)
    return (0.5 * norm_grad(grid, state.phi) ** 2 + inner_H(grid, F, np.ones(grid.shape))
            + 0.5 * params.alpha * norm_H(grid, state.mu) ** 2)


@dataclass
class EnergyReport:
    energies: np.ndarray
    max_increase: float
    bound_lhs: float
    data_term: float

    @property
    def ratio(self) -> float:
        return self.bound_lhs / self.data_term if self.data_term > 0 else math.inf


def _time_derivative_L2(grid, samples, dt, space):
    """L2-in-time norm of difference quotients between consecutive samples."""
    if len(samples) < 2:
        return 0.0
    fn = {"H": norm_H, "Vstar": norm_Vstar}[space]
    vals = [fn(grid, (b - a) / dt) for a, b in zip(samples[:-1], samples[1:])]
    return float(np.sqrt(np.sum(np.square(vals)) * dt))


def stability_aggregate(traj: Trajectory) -> tuple:
    """Left and right sides of the uniform a-priori bound (without its constant).

    Left: alpha^1/2 |mu|_{Linf H} + |grad mu|_{L2 H} + beta^1/2 |dt phi|_{L2 H}
    + |phi|_{Linf V} + |F(phi)|_{Linf L1}^1/2 + |dt(alpha mu + phi)|_{L2 V*}
    + |sigma|_{H1 V*} + |sigma|_{Linf H} + |sigma|_{L2 V}.
    Right: alpha^1/2 |mu0|_H + |phi0|_V + |F(phi0)|_{L1}^1/2 + |sigma0|_H.
    """
    g, p, dt = traj.grid, traj.params, traj.dt
    mu, phi, sigma = traj.field("mu"), traj.field("phi"), traj.field("sigma")
    one = np.ones(g.shape)

    def F_L1(f):
        return inner_H(g, np.abs(pot.eval_F(p.potential, f, clamp=True)), one)

    left = mu[:-1] if len(mu) > 1 else mu
    grad_mu = math.sqrt(sum(norm_grad(g, m) ** 2 for m in left) * dt) if len(mu) > 1 else 0.0
    combo = [p.alpha * m + f for m, f in zip(mu, phi)]
    sig_H1Vstar = math.hypot(bochner_norm(g, sigma, dt, "L2_Vstar"), _time_derivative_L2(g, sigma, dt, "Vstar"))
    lhs = (math.sqrt(p.alpha) * bochner_norm(g, mu, dt, "Linf_H")
           + grad_mu
           + math.sqrt(p.beta) * _time_derivative_L2(g, phi, dt, "H")
           + bochner_norm(g, phi, dt, "Linf_V")
           + math.sqrt(max(F_L1(f) for f in (phi[:-1] if len(phi) > 1 else phi)))
           + _time_derivative_L2(g, combo, dt, "Vstar")
           + sig_H1Vstar + bochner_norm(g, sigma, dt, "Linf_H") + bochner_norm(g, sigma, dt, "L2_V"))
    s0 = traj.states[0]
    rhs = (math.sqrt(p.alpha) * norm_H(g, s0.mu) + norm_V(g, s0.phi)
           + math.sqrt(F_L1(s0.phi)) + norm_H(g, s0.sigma))
    return lhs, rhs


def energy_check(traj: Trajectory) -> EnergyReport:
    """Energy sequence E(t_k) and the a-priori bound aggregate for ``traj``.

    The energy is a Lyapunov functional only when p = 0; for other p the
    sequence is still reported.
    """
    E = np.array([energy(s, traj.params, traj.grid) for s in traj.states])
    inc = float(np.max(np.diff(E))) if len(E) > 1 else 0.0
    lhs, rhs = stability_aggregate(traj)
    return EnergyReport(E, inc, lhs, rhs)


def newton_tail_constants(traj: Trajectory, floor: float = 1e-11) -> np.ndarray:
    """Observed r_{k+1} / r_k^2 for the last Newton pair of each step above ``floor``.

    Pairs whose second residual sits at the rounding floor carry no
    information about the convergence order and are skipped.
    """
    out = []
    for info in traj.info:
        r = info.residuals
        pairs = [(a, b) for a, b in zip(r[:-1], r[1:]) if b > floor and a > 0]
        if pairs:
            a, b = pairs[-1]
            out.append(b / a**2)
    return np.array(out)
