import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chtumor import potentials as pot
from chtumor.potentials import DomainError, PotentialSpec, ProliferationSpec

DW = PotentialSpec("double_well")
LOG = PotentialSpec("logarithmic", kappa=2.0)
IND = PotentialSpec("indicator", eps=0.1)
NU = PotentialSpec("nonuniq", L=2.0)
ALL = [DW, LOG, IND, NU]


def central_diff(fn, r, h=1e-6):
    return (fn(r + h) - fn(r - h)) / (2 * h)


def domain_sample(spec, rng, size):
    if spec.family == "logarithmic":
        return rng.uniform(-0.999, 0.999, size)
    return rng.uniform(-3.0, 3.0, size)


# --- worked values ----------------------------------------------------------

def test_double_well_split_values():
    assert pot.eval_Bhat(DW, 1.0) == 0.0
    assert pot.eval_Bhat(DW, -1.0) == 0.0
    # at 0 only the smooth part is active
    assert pot.eval_Bhat(DW, 0.0) == 0.0
    assert pot.eval_pihat(DW, 0.0) == pytest.approx(0.25)
    assert pot.eval_F(DW, 0.0) == pytest.approx(0.25)


def test_double_well_recombines_to_classical_form():
    r = np.linspace(-3, 3, 601)
    np.testing.assert_allclose(pot.eval_F(DW, r), 0.25 * (r**2 - 1) ** 2, atol=1e-14)
    np.testing.assert_allclose(pot.eval_Fprime(DW, r), r**3 - r, atol=1e-12)


def test_indicator_envelope_value():
    # distance 0.2 to [-1, 1], eps = 0.1: 0.04 / 0.2
    assert pot.eval_Bhat(IND, 1.2) == pytest.approx(0.2, rel=1e-12)
    assert pot.eval_Bhat(IND, 0.3) == 0.0


def test_indicator_envelope_matches_brute_force_prox():
    ys = np.linspace(-1, 1, 400001)
    for r in (-2.5, -1.1, 0.0, 0.7, 1.2, 3.0):
        brute = np.min((r - ys) ** 2) / (2 * IND.eps)
        assert pot.eval_Bhat(IND, r) == pytest.approx(brute, abs=1e-9)


@pytest.mark.parametrize("r", [-2.0, -0.5, 0.0, 0.3, 1.5, 2.0])
def test_B_is_derivative_of_Bhat_double_well(r):
    fd = central_diff(lambda x: pot.eval_Bhat(DW, x), r)
    assert pot.eval_B(DW, r) == pytest.approx(fd, abs=1e-6)


def test_B_worked_values():
    assert pot.eval_B(DW, 0.0) == 0.0
    assert pot.eval_B(IND, 0.5) == 0.0
    assert pot.eval_B(IND, 1.2) == pytest.approx(2.0, rel=1e-12)
    fd = central_diff(lambda x: pot.eval_Bhat(IND, x), 1.2)
    assert pot.eval_B(IND, 1.2) == pytest.approx(fd, rel=1e-6)


def test_B0_worked_values():
    assert pot.eval_B0(IND, 0.9) == 0.0
    assert pot.eval_B0(DW, -1.0) == 0.0
    fd = central_diff(lambda x: pot.eval_Bhat(DW, x), 2.0)
    assert pot.eval_B0(DW, 2.0) == pytest.approx(6.0)
    assert pot.eval_B0(DW, 2.0) == pytest.approx(fd, rel=1e-8)


def test_B0_domain_errors():
    with pytest.raises(DomainError):
        pot.eval_B0(LOG, 1.0)
    with pytest.raises(DomainError):
        pot.eval_B0(IND, 1.5)
    assert pot.eval_B0(LOG, 0.0) == 0.0


def test_pi_worked_values():
    assert pot.eval_pi(DW, 0.0) == 0.0
    assert pot.eval_pi(NU, 0.5) == pytest.approx(-1.0)
    assert pot.eval_pi(NU, 0.0) == 0.0


def test_logarithmic_outside_domain():
    with pytest.raises(DomainError):
        pot.eval_Bhat(LOG, 1.5)
    with pytest.raises(DomainError):
        pot.eval_B(LOG, np.array([0.0, -1.01]))
    # clamping keeps Newton iterates evaluable
    v = pot.eval_B(LOG, 1.5, clamp=True)
    assert math.isfinite(v) and v > 0


def test_logarithmic_values():
    assert pot.eval_Bhat(LOG, 0.0) == 0.0
    assert pot.eval_Bhat(LOG, 1.0) == pytest.approx(2 * math.log(2))
    r = 0.4
    fd = central_diff(lambda x: pot.eval_Bhat(LOG, x), r)
    assert pot.eval_B(LOG, r) == pytest.approx(fd, rel=1e-7)


def test_scalar_in_scalar_out():
    for spec in ALL:
        assert isinstance(pot.eval_F(spec, 0.3), float)
        assert pot.eval_F(spec, np.zeros((2, 3))).shape == (2, 3)


def test_nonuniq_pihat_is_C1_and_nonnegative():
    r = np.linspace(-4, 4, 8001)
    assert np.all(pot.eval_pihat(NU, r) >= 0)
    for x in (-3.0, -1.0 - 1e-3, -0.4, 0.9, 1.0 + 1e-3, 2.5):
        fd = central_diff(lambda s: pot.eval_pihat(NU, s), x)
        assert pot.eval_pi(NU, x) == pytest.approx(fd, abs=1e-6)
    # continuity of pi at the joins
    assert pot.eval_pi(NU, 1.0 + 1e-12) == pytest.approx(pot.eval_pi(NU, 1.0), abs=1e-9)


def test_lipschitz_constants():
    assert DW.lipschitz_L == 2.0
    assert LOG.lipschitz_L == 4.0
    assert NU.lipschitz_L == 2.0
    for spec in ALL:
        r = np.linspace(-0.999 if spec.family == "logarithmic" else -3, 0.999 if spec.family == "logarithmic" else 3, 6001)
        assert np.max(np.abs(pot.eval_pi_prime(spec, r))) <= spec.lipschitz_L + 1e-12


def test_invalid_specs():
    with pytest.raises(ValueError):
        PotentialSpec("quartic")
    with pytest.raises(ValueError):
        PotentialSpec("indicator", eps=0.0)
    with pytest.raises(ValueError):
        ProliferationSpec("constant", value=-1.0)
    with pytest.raises(ValueError):
        ProliferationSpec("smooth_bump", width=0.0)


# --- properties --------------------------------------------------------------

@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.family)
def test_B_monotone_random_pairs(spec):
    rng = np.random.default_rng(7)
    r, s = domain_sample(spec, rng, 10_000), domain_sample(spec, rng, 10_000)
    prod = (pot.eval_B(spec, r) - pot.eval_B(spec, s)) * (r - s)
    assert prod.min() >= -1e-12


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.family)
def test_F_nonnegative(spec):
    rng = np.random.default_rng(3)
    r = domain_sample(spec, rng, 10_000)
    assert pot.eval_F(spec, r).min() >= 0.0
    assert pot.eval_Bhat(spec, r).min() >= 0.0


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.family)
def test_Fprime_consistent_with_F(spec):
    # smooth points only: stay away from the kinks at |r| = 1
    rng = np.random.default_rng(11)
    r = domain_sample(spec, rng, 200)
    r = r[np.abs(np.abs(r) - 1) > 1e-3]
    fd = (pot.eval_F(spec, r + 1e-6) - pot.eval_F(spec, r - 1e-6)) / 2e-6
    exact = pot.eval_Fprime(spec, r)
    np.testing.assert_allclose(fd, exact, rtol=1e-6, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([DW, IND, NU]))
def test_pi_lipschitz(r, s, spec):
    lhs = abs(pot.eval_pi(spec, r) - pot.eval_pi(spec, s))
    assert lhs <= spec.lipschitz_L * abs(r - s) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999))
def test_log_B_monotone(r, s):
    assert (pot.eval_B(LOG, r) - pot.eval_B(LOG, s)) * (r - s) >= -1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4), st.floats(1e-4, 1.0))
def test_yosida_B_is_lipschitz_in_one_over_eps(r, eps):
    spec = PotentialSpec("indicator", eps=eps)
    s = r + 1e-3
    assert abs(pot.eval_B(spec, s) - pot.eval_B(spec, r)) <= 1e-3 / eps * (1 + 1e-9)


def test_yosida_envelope_scales_like_one_over_eps():
    vals = [pot.eval_Bhat(PotentialSpec("indicator", eps=e), 1.5) for e in (1e-1, 1e-2, 1e-3)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[1] / vals[0] == pytest.approx(10.0, rel=0.01)
    assert vals[2] / vals[1] == pytest.approx(10.0, rel=0.01)


def test_double_well_growth_constant():
    c = DW.growth_constant()
    assert math.isfinite(c) and c < 5.0
    with pytest.raises(DomainError):
        IND.growth_constant()


# --- proliferation -----------------------------------------------------------

def test_proliferation_values():
    assert pot.eval_p(ProliferationSpec("constant", value=0.0), 0.3) == 0.0
    assert pot.eval_p(ProliferationSpec("constant", value=0.7), -2.0) == 0.7
    clipped = ProliferationSpec("clipped_sqrt_f", scale=1.0)
    assert pot.eval_p(clipped, 2.0) == 0.0
    r = np.linspace(-0.99, 0.99, 101)
    np.testing.assert_allclose(pot.eval_p(clipped, r), np.sqrt(0.25 * (r**2 - 1) ** 2), atol=1e-15)


@pytest.mark.parametrize("spec", [
    ProliferationSpec("constant", value=1.0),
    ProliferationSpec("clipped_sqrt_f", scale=2.0),
    ProliferationSpec("smooth_bump", center=0.2, width=0.3, height=1.5),
], ids=lambda s: s.kind)
def test_proliferation_bounds_and_lipschitz(spec):
    r = np.linspace(-4, 4, 40001)
    p = pot.eval_p(spec, r)
    assert p.min() >= 0.0
    assert p.max() <= spec.bound + 1e-12
    slopes = np.abs(np.diff(p) / np.diff(r))
    assert slopes.max() <= spec.lipschitz + 1e-6
    smooth = np.abs(np.abs(r) - 1) > 1e-3
    fd = (pot.eval_p(spec, r + 1e-6) - pot.eval_p(spec, r - 1e-6)) / 2e-6
    np.testing.assert_allclose(pot.eval_p_prime(spec, r)[smooth], fd[smooth], atol=1e-6)
