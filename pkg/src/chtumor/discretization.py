"""Cell-centred finite differences on uniform 1D/2D grids with Neumann walls.

Fields are numpy arrays of shape ``grid.shape``.  The homogeneous Neumann
condition is imposed by mirror ghost cells, which makes the discrete
Laplacian exactly ``-D^T D`` for the face-centred forward difference ``D``.
Consequently the summation-by-parts identity and the discrete divergence
theorem hold to rounding, and the H, V and V* norms below are mutually
consistent: ``norm_V(f)**2 == inner_H(f, (I - Lap) f)``.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

NORM_KINDS = ("L2_H", "L2_V", "Linf_H", "Linf_V", "Linf_Vstar", "L2_Vstar")


class LinearSolveError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on (0, extent)^dim."""

    dim: int = 1
    n: int = 128
    extent: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"n must be at least 4, got {self.n}")
        if self.extent <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")

    @property
    def h(self) -> float:
        return self.extent / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_measure(self) -> float:
        return self.h**self.dim

    @property
    def centers_1d(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def coords(self) -> tuple:
        """Cell-centre coordinate arrays, each of shape ``self.shape``."""
        if self.dim == 1:
            return (self.centers_1d,)
        return tuple(np.meshgrid(self.centers_1d, self.centers_1d, indexing="ij"))

    def __getstate__(self):
        # drop cached operators and the factorization (not picklable)
        return {k: getattr(self, k) for k in ("dim", "n", "extent")}

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)

    def check(self, *fields):
        for f in fields:
            if np.shape(f) != self.shape:
                raise ValueError(f"field of shape {np.shape(f)} does not live on a grid of shape {self.shape}")

    # Flattening is column-major (first axis fastest), matching the CSV layout.
    def flat(self, f) -> np.ndarray:
        return np.asarray(f, dtype=float).ravel(order="F")

    def unflat(self, v) -> np.ndarray:
        return np.asarray(v).reshape(self.shape, order="F")

    @cached_property
    def laplacian(self) -> sps.csr_matrix:
        """Sparse Neumann Laplacian acting on column-major flattened fields."""
        d1 = self._difference_1d
        lap1 = -(d1.T @ d1)
        if self.dim == 1:
            return lap1.tocsr()
        eye = sps.identity(self.n, format="csr")
        return (sps.kron(eye, lap1) + sps.kron(lap1, eye)).tocsr()

    @cached_property
    def gradient(self) -> sps.csr_matrix:
        """Forward differences on interior faces, stacked over axes."""
        d1 = self._difference_1d
        if self.dim == 1:
            return d1
        eye = sps.identity(self.n, format="csr")
        return sps.vstack([sps.kron(eye, d1), sps.kron(d1, eye)]).tocsr()

    @cached_property
    def _difference_1d(self) -> sps.csr_matrix:
        n, h = self.n, self.h
        return sps.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h

    # A factorization shared by all solves on this grid; splu.solve is read-only.
    @cached_property
    def riesz_factor(self):
        a = sps.identity(self.size, format="csc") - self.laplacian.tocsc()
        return spla.splu(a.tocsc())


_factor_lock = threading.Lock()


def laplacian_apply(grid: Grid, f) -> np.ndarray:
    grid.check(f)
    return grid.unflat(grid.laplacian @ grid.flat(f))


def gradient_apply(grid: Grid, f) -> np.ndarray:
    """Face-centred gradient values (flat, all axes stacked)."""
    grid.check(f)
    return grid.gradient @ grid.flat(f)


def inner_H(grid: Grid, f, g) -> float:
    grid.check(f, g)
    return float(np.sum(np.asarray(f) * np.asarray(g)) * grid.cell_measure)


def norm_H(grid: Grid, f) -> float:
    return float(np.sqrt(max(inner_H(grid, f, f), 0.0)))


def norm_grad(grid: Grid, f) -> float:
    """H-norm of the discrete gradient; boundary faces carry zero flux."""
    g = gradient_apply(grid, f)
    return float(np.sqrt(np.sum(g * g) * grid.cell_measure))


def norm_V(grid: Grid, f) -> float:
    return float(np.hypot(norm_H(grid, f), norm_grad(grid, f)))


def riesz_inverse(grid: Grid, f, lin_tol: float = 1e-12) -> np.ndarray:
    """Solve the discrete (-Lap + I) w = f with Neumann walls.

    Accepts the solution when the normwise backward error
    ``|r| / (|A| |w| + |f|)`` is below ``lin_tol``; a relative residual test
    against ``|f|`` alone is below rounding for rough data on fine grids.
    """
    grid.check(f)
    rhs = grid.flat(f)
    with _factor_lock:
        lu = grid.riesz_factor
    norm_a = 1.0 + 4.0 * grid.dim / grid.h**2

    def backward_error(w):
        res = rhs - (w - grid.laplacian @ w)
        scale = norm_a * np.linalg.norm(w, np.inf) + np.linalg.norm(rhs, np.inf)
        err = np.linalg.norm(res, np.inf)
        return (err / scale if scale > 0 else err), res

    w = lu.solve(rhs)
    rel, res = backward_error(w)
    if not np.isfinite(rel) or rel > lin_tol:
        # one step of iterative refinement before giving up
        w = w + lu.solve(res)
        rel, _ = backward_error(w)
        if not np.isfinite(rel) or rel > lin_tol:
            raise LinearSolveError("Riesz solve did not reach the requested tolerance", rel)
    return grid.unflat(w)


def norm_Vstar(grid: Grid, f, lin_tol: float = 1e-12) -> float:
    """Dual norm ||f||_* = sqrt(<f, A^{-1} f>) with A = -Lap + I."""
    val = inner_H(grid, f, riesz_inverse(grid, f, lin_tol=lin_tol))
    return float(np.sqrt(max(val, 0.0)))


_SPACE_NORMS = {"H": norm_H, "V": norm_V, "Vstar": norm_Vstar}


def bochner_norm(grid: Grid, samples, dt: float, which: str) -> float:
    """Space-time norm of uniformly spaced samples f(t_0), ..., f(t_K).

    L2 norms use the left-endpoint rectangle rule with step ``dt``; Linf
    norms take the max over the same left endpoints.  A single sample
    gives L2 = 0 and Linf = its spatial norm.
    """
    if which not in NORM_KINDS:
        raise ValueError(f"unknown norm {which!r}; expected one of {NORM_KINDS}")
    samples = list(samples)
    if not samples:
        raise ValueError("empty trajectory")
    time_kind, space = which.split("_")
    left = samples[:-1] if len(samples) > 1 else samples
    vals = np.array([_SPACE_NORMS[space](grid, f) for f in left])
    if time_kind == "Linf":
        return float(vals.max())
    if len(samples) == 1:
        return 0.0
    return float(np.sqrt(np.sum(vals**2) * dt))


def write_fields_csv(grid: Grid, path, fields: dict, times=None, comment: str = None):
    """Write fields to CSV, one row per cell, first axis varying fastest.

    ``fields`` maps column names to arrays of shape ``grid.shape`` or, with
    ``times`` given, to sequences of such arrays (one per time).  Lines of
    ``comment`` are written first, each prefixed with ``#``.
    """
    coords = [grid.flat(c) for c in grid.coords()]
    axes = ["x", "y"][: grid.dim]
    names = list(fields)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.writelines(f"# {line}\n" for line in comment.splitlines())
        w = csv.writer(fh)
        head = (["t"] if times is not None else []) + ["cell"] + axes + names
        w.writerow(head)
        blocks = [(None, fields)] if times is None else [
            (t, {k: v[i] for k, v in fields.items()}) for i, t in enumerate(times)
        ]
        for t, block in blocks:
            cols = [grid.flat(block[k]) for k in names]
            for c in range(grid.size):
                row = [] if t is None else [f"{t:.17g}"]
                row.append(str(c))
                row += [f"{x[c]:.17g}" for x in coords]
                row += [f"{v[c]:.17g}" for v in cols]
                w.writerow(row)


def read_fields_csv(grid: Grid, path) -> dict:
    """Inverse of :func:`write_fields_csv` for a single time level."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    head, body = rows[0], rows[1:]
    if len(body) != grid.size:
        raise ValueError(f"expected {grid.size} rows, found {len(body)}")
    skip = {"t", "cell", "x", "y"}
    out = {}
    for j, name in enumerate(head):
        if name in skip:
            continue
        out[name] = grid.unflat(np.array([float(r[j]) for r in body]))
    return out
