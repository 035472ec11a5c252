"""Decomposed potentials F = Bhat + pihat and proliferation functions.

Four potential families are supported:

``double_well``
    F(r) = 1/4 (r^2 - 1)^2, split into the convex part 1/4((r^2-1)^+)^2 and
    the smooth part 1/4((1-r^2)^+)^2.
``logarithmic``
    Bhat(r) = (1-r)ln(1-r) + (1+r)ln(1+r) on [-1, 1], pihat(r) = kappa (1-r^2)^+.
``indicator``
    Bhat = indicator of [-1, 1], pihat(r) = ((1-r^2)^+)^2.  The multivalued
    subdifferential is replaced by its Moreau-Yosida approximation at level eps.
``nonuniq``
    Indicator convex part with pi(r) = -L r on [-1, 1], extended outside with
    slope +L so that |pi'| <= L everywhere and pihat stays nonnegative.

All evaluation functions are vectorized over numpy arrays and accept scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("double_well", "logarithmic", "indicator", "nonuniq")
PROLIFERATION_KINDS = ("constant", "clipped_sqrt_f", "smooth_bump")

# clamp margin for the logarithmic barrier inside Newton iterates
LOG_CLAMP = 1e-9


class DomainError(ValueError):
    """Raised when a potential is evaluated outside its effective domain."""


@dataclass(frozen=True)
class PotentialSpec:
    """Potential family and its parameters.

    ``kappa`` is used by the logarithmic family, ``eps`` is the Yosida level
    of the indicator families, ``L`` the slope of pi for ``nonuniq``.
    """

    family: str = "double_well"
    kappa: float = 2.0
    eps: float = 1e-3
    L: float = 2.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}; expected one of {FAMILIES}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.L < 0:
            raise ValueError(f"L must be nonnegative, got {self.L}")

    @property
    def lipschitz_L(self) -> float:
        """Lipschitz constant of pi = pihat'."""
        if self.family == "double_well":
            # pi' = 3r^2 - 1 on [-1, 1], zero outside
            return 2.0
        if self.family == "logarithmic":
            return 2.0 * self.kappa
        if self.family == "indicator":
            # pi' = 12 r^2 - 4 on [-1, 1]
            return 8.0
        return self.L

    @property
    def singular(self) -> bool:
        """True if the convex part is not finite on the whole real line."""
        return self.family != "double_well"

    def growth_constant(self, r_max: float = 10.0, n: int = 20001) -> float:
        """Observed max of |B0(r)| / (Bhat(r) + 1) over [-r_max, r_max].

        Only meaningful for ``double_well``, whose convex part is finite on R.
        """
        if self.family != "double_well":
            raise DomainError(f"growth bound needs a convex part finite on R; {self.family} is not")
        r = np.linspace(-r_max, r_max, n)
        return float(np.max(np.abs(eval_B0(self, r)) / (eval_Bhat(self, r) + 1.0)))


def _check_log_domain(r):
    bad = np.abs(r) > 1.0
    if np.any(bad):
        first = np.asarray(r)[bad].flat[0]
        raise DomainError(f"logarithmic potential evaluated at r = {first!r}, outside [-1, 1]")


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def _out(value, r):
    return float(value) if np.ndim(r) == 0 else value


def eval_Bhat(spec: PotentialSpec, r, clamp: bool = False):
    """Convex part Bhat(r), or its Moreau-Yosida envelope for indicator families."""
    x = np.asarray(r, dtype=float)
    fam = spec.family
    if fam == "double_well":
        val = 0.25 * np.maximum(x * x - 1.0, 0.0) ** 2
    elif fam == "logarithmic":
        if clamp:
            x = np.clip(x, -1.0 + LOG_CLAMP, 1.0 - LOG_CLAMP)
        _check_log_domain(x)
        # minus the value at 0 is zero, so Bhat >= 0 with Bhat(0) = 0
        val = _xlogx(1.0 - x) + _xlogx(1.0 + x)
    else:
        d = x - np.clip(x, -1.0, 1.0)
        val = d * d / (2.0 * spec.eps)
    return _out(val, r)


def eval_B(spec: PotentialSpec, r, clamp: bool = False):
    """Single-valued (possibly regularized) derivative of the convex part."""
    x = np.asarray(r, dtype=float)
    fam = spec.family
    if fam == "double_well":
        val = x * np.maximum(x * x - 1.0, 0.0)
    elif fam == "logarithmic":
        if clamp:
            x = np.clip(x, -1.0 + LOG_CLAMP, 1.0 - LOG_CLAMP)
        _check_log_domain(x)
        with np.errstate(divide="ignore"):
            val = np.log1p(x) - np.log1p(-x)
    else:
        val = (x - np.clip(x, -1.0, 1.0)) / spec.eps
    return _out(val, r)


def eval_dB(spec: PotentialSpec, r, clamp: bool = False):
    """Derivative of :func:`eval_B` (a.e.), used in Newton Jacobians."""
    x = np.asarray(r, dtype=float)
    fam = spec.family
    if fam == "double_well":
        val = np.where(np.abs(x) > 1.0, 3.0 * x * x - 1.0, 0.0)
    elif fam == "logarithmic":
        if clamp:
            x = np.clip(x, -1.0 + LOG_CLAMP, 1.0 - LOG_CLAMP)
        _check_log_domain(x)
        with np.errstate(divide="ignore"):
            val = 2.0 / (1.0 - x * x)
    else:
        val = np.where(np.abs(x) > 1.0, 1.0 / spec.eps, 0.0)
    return _out(val, r)


def eval_B0(spec: PotentialSpec, r):
    """Minimum-modulus element of the exact (unregularized) graph B(r)."""
    x = np.asarray(r, dtype=float)
    fam = spec.family
    if fam == "double_well":
        val = x * np.maximum(x * x - 1.0, 0.0)
    elif fam == "logarithmic":
        # B(r) is empty at |r| = 1: the derivative blows up there
        if np.any(np.abs(x) >= 1.0):
            first = x[np.abs(x) >= 1.0].flat[0]
            raise DomainError(f"B(r) is empty at r = {first!r} for the logarithmic potential")
        val = np.log1p(x) - np.log1p(-x)
    else:
        if np.any(np.abs(x) > 1.0):
            first = x[np.abs(x) > 1.0].flat[0]
            raise DomainError(f"r = {first!r} lies outside the domain [-1, 1] of the indicator")
        # interior: {0}; endpoints: half-lines that contain 0
        val = np.zeros_like(x)
    return _out(val, r)


def eval_pihat(spec: PotentialSpec, r):
    x = np.asarray(r, dtype=float)
    fam = spec.family
    if fam == "double_well":
        val = 0.25 * np.maximum(1.0 - x * x, 0.0) ** 2
    elif fam == "logarithmic":
        val = spec.kappa * np.maximum(1.0 - x * x, 0.0)
    elif fam == "indicator":
        val = np.maximum(1.0 - x * x, 0.0) ** 2
    else:
        a = np.abs(x)
        val = np.where(a <= 1.0, 0.5 * spec.L * (2.0 - x * x), 0.5 * spec.L * (a - 2.0) ** 2)
    return _out(val, r)


def eval_pi(spec: PotentialSpec, r):
    """pi = pihat', the Lipschitz part of F'."""
    x = np.asarray(r, dtype=float)
    fam = spec.family
    inside = np.abs(x) <= 1.0
    if fam == "double_well":
        val = np.where(inside, -x * (1.0 - x * x), 0.0)
    elif fam == "logarithmic":
        val = np.where(inside, -2.0 * spec.kappa * x, 0.0)
    elif fam == "indicator":
        val = np.where(inside, -4.0 * x * (1.0 - x * x), 0.0)
    else:
        val = np.where(inside, -spec.L * x, spec.L * (x - 2.0 * np.sign(x)))
    return _out(val, r)


def eval_pi_prime(spec: PotentialSpec, r):
    x = np.asarray(r, dtype=float)
    fam = spec.family
    inside = np.abs(x) <= 1.0
    if fam == "double_well":
        val = np.where(inside, 3.0 * x * x - 1.0, 0.0)
    elif fam == "logarithmic":
        val = np.where(inside, -2.0 * spec.kappa, 0.0)
    elif fam == "indicator":
        val = np.where(inside, 12.0 * x * x - 4.0, 0.0)
    else:
        val = np.where(inside, -spec.L, spec.L)
    return _out(val, r)


def eval_F(spec: PotentialSpec, r, clamp: bool = False):
    """Full potential Bhat + pihat (regularized envelope for indicator families)."""
    return eval_Bhat(spec, r, clamp=clamp) + eval_pihat(spec, r)


def eval_Fprime(spec: PotentialSpec, r, clamp: bool = False):
    return eval_B(spec, r, clamp=clamp) + eval_pi(spec, r)


@dataclass(frozen=True)
class ProliferationSpec:
    """Nonnegative, bounded, Lipschitz proliferation function p.

    ``constant`` uses ``value``; ``clipped_sqrt_f`` is ``scale * sqrt(F_cl(r))``
    for |r| < 1 and zero elsewhere, with F_cl the classical double well;
    ``smooth_bump`` is a Gaussian of the given ``height``, ``center``, ``width``.
    """

    kind: str = "constant"
    value: float = 0.0
    scale: float = 1.0
    center: float = 0.0
    width: float = 0.5
    height: float = 1.0

    def __post_init__(self):
        if self.kind not in PROLIFERATION_KINDS:
            raise ValueError(f"unknown proliferation kind {self.kind!r}; expected one of {PROLIFERATION_KINDS}")
        if self.kind == "constant" and self.value < 0:
            raise ValueError(f"constant proliferation must be nonnegative, got {self.value}")
        if self.kind == "clipped_sqrt_f" and self.scale < 0:
            raise ValueError(f"scale must be nonnegative, got {self.scale}")
        if self.kind == "smooth_bump" and (self.height < 0 or self.width <= 0):
            raise ValueError("smooth_bump needs height >= 0 and width > 0")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def bound(self) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "clipped_sqrt_f":
            return 0.5 * self.scale
        return self.height

    @property
    def lipschitz(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "clipped_sqrt_f":
            return self.scale
        return self.height * math.sqrt(2.0 / math.e) / self.width


def eval_p(spec: ProliferationSpec, r):
    x = np.asarray(r, dtype=float)
    if spec.kind == "constant":
        val = np.full_like(x, spec.value)
    elif spec.kind == "clipped_sqrt_f":
        # sqrt(1/4 (r^2-1)^2) = (1 - r^2)/2 on |r| < 1
        val = 0.5 * spec.scale * np.maximum(1.0 - x * x, 0.0)
    else:
        z = (x - spec.center) / spec.width
        val = spec.height * np.exp(-z * z)
    return _out(val, r)


def eval_p_prime(spec: ProliferationSpec, r):
    x = np.asarray(r, dtype=float)
    if spec.kind == "constant":
        val = np.zeros_like(x)
    elif spec.kind == "clipped_sqrt_f":
        val = np.where(np.abs(x) < 1.0, -spec.scale * x, 0.0)
    else:
        z = (x - spec.center) / spec.width
        val = -2.0 * z / spec.width * spec.height * np.exp(-z * z)
    return _out(val, r)
