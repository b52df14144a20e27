import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orlicz_control.grid import build_quadrature
from orlicz_control.risk_core import (EXP_CAP, JumpDistribution, RiskParams, divergence, omega,
                                      rho, robust_discount, sup_objective, uniform_jumps,
                                      worst_case_phi)
from reference_values import ROBUST_DISCOUNT_CONVEX

positive = st.floats(1e-6, 1e6, allow_nan=False)


@pytest.mark.parametrize("kwargs", [
    {"p": 0.5}, {"psi": 0.0}, {"delta": -1.0}, {"lambda_N": -0.1}, {"lambda_Z": -1.0},
])
def test_risk_params_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        RiskParams(**kwargs)


def test_jump_distribution_support():
    with pytest.raises(ValueError):
        JumpDistribution(lambda z: 1.0, -1.5, 0.0)
    assert uniform_jumps(-1.0, 0.0).mass() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("phi, expected", [
    (1.0, 0.0),
    (math.e, 1.0),
    (2.0, 2 * math.log(2) - 1),
])
def test_divergence_values(phi, expected):
    assert divergence(phi) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("phi", [0.0, -1.0])
def test_divergence_domain(phi):
    with pytest.raises(ValueError):
        divergence(phi)


@pytest.mark.parametrize("x, y, expected", [
    (1.0, 0.0, 0.0),
    (1.0, 1.0, 1 - math.e),
    (2.0, -2.0, 2 * (1 - math.exp(-1))),
])
def test_rho_values(x, y, expected):
    assert rho(x, y) == pytest.approx(expected, rel=1e-15, abs=1e-15)


def test_rho_domain():
    with pytest.raises(ValueError):
        rho(0.0, 1.0)


@pytest.mark.parametrize("fj, fb, expected", [(5, 5, 0.0), (3, 6, -0.5), (6.6, 6, 0.1)])
def test_omega_values(fj, fb, expected):
    assert omega(fj, fb) == pytest.approx(expected, abs=1e-15)


def test_omega_requires_positive_base():
    with pytest.raises(ValueError):
        omega(1.0, 0.0)


@pytest.mark.parametrize("w, psi, expected", [
    (0.0, 10.0, 1.0),
    (-0.75, 0.01, math.exp(-0.0075)),
    (1.0, 1.0, math.e),
])
def test_worst_case_phi_values(w, psi, expected):
    assert worst_case_phi(w, psi) == pytest.approx(expected, rel=1e-15)


def test_worst_case_phi_saturation_flag():
    phi, sat = worst_case_phi(np.array([1.0, 2000.0]), 1.0, return_saturated=True)
    assert sat.tolist() == [False, True]
    assert phi[1] == math.exp(EXP_CAP)


def test_robust_discount_examples():
    q = build_quadrature(uniform_jumps(-1, 0), 4000)
    params = RiskParams(p=2, psi=0.01, delta=0.1, lambda_N=0.05)
    assert robust_discount(np.zeros(4000), q, params) == 0.0
    w = (1 + q.nodes) ** 2 - 1
    # rectangle rule error is O(1/M)
    assert robust_discount(w, q, params) == pytest.approx(ROBUST_DISCOUNT_CONVEX, rel=1e-3)
    assert robust_discount(w, q, RiskParams(2, 0.01, 0.1, 0.0)) == 0.0


def test_robust_discount_matches_sup():
    """The sup over distortions equals minus the discount times the base value."""
    rng = np.random.default_rng(3)
    q = build_quadrature(uniform_jumps(-1, 0), 50)
    params = RiskParams(p=2, psi=0.7, delta=0.1, lambda_N=1.0)
    F = 2.0
    Fj = F * rng.uniform(0.2, 1.5, 50)
    phi = worst_case_phi(omega(Fj, F), params.psi)
    sup = sup_objective(phi, Fj, F, q.weights, params.psi)
    assert sup == pytest.approx(-robust_discount(omega(Fj, F), q, params) * F, rel=1e-12)


@given(positive)
def test_divergence_nonnegative_property(phi):
    d = divergence(phi)
    assert d >= 0
    if phi != 1.0:
        assert d > 0 or abs(phi - 1) < 1e-7


@given(positive, positive)
def test_divergence_convex_property(a, b):
    mid = divergence((a + b) / 2)
    assert mid <= (divergence(a) + divergence(b)) / 2 + 1e-12 * (1 + mid)


@given(st.floats(0.1, 10), st.floats(1e-3, 10), st.floats(-5, 5), st.floats(1e-2, 5))
def test_rho_monotone_property(x, dx, y, dy):
    r = rho(x, y)
    assert rho(x + dx, y) >= r - 1e-12 * (1 + abs(r))
    # strict decrease only where the change survives rounding
    gap = x * (math.exp((y + dy) / x) - math.exp(y / x))
    if gap > 8 * np.finfo(float).eps * max(abs(r), x):
        assert rho(x, y + dy) < r
    else:
        assert rho(x, y + dy) <= r


@given(st.floats(0.1, 10), st.floats(-0.9, 0.9), st.floats(0.01, 5))
def test_phi_first_order_property(F, rel, psi):
    Fj = F * (1 + rel)
    phi = worst_case_phi(omega(Fj, F), psi)

    def obj(p):
        return -divergence(p) * F / psi + (Fj - F) * p

    h = 1e-6 * phi
    deriv = (obj(phi + h) - obj(phi - h)) / (2 * h)
    assert abs(deriv) <= 1e-6 * max(abs(Fj - F) + F / psi, 1.0)


@given(st.integers(0, 2 ** 32 - 1))
def test_sup_identity_property(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(0.1, 10)
    Fj = F * rng.uniform(0.05, 2, 8)
    w = rng.dirichlet(np.ones(8))
    psi = rng.uniform(0.01, 5)
    phi = worst_case_phi(omega(Fj, F), psi)
    best = sup_objective(phi, Fj, F, w, psi)
    for eta in rng.uniform(-0.5, 0.5, (100, 8)):
        assert sup_objective(phi * (1 + eta), Fj, F, w, psi) <= best + 1e-12 * (1 + abs(best))
