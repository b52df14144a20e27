import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orlicz_control.exact import (IllPosedError, LinearModelParams, compute_A, order_condition,
                                  exact_phi, exact_value, pointwise_residual, sensitivity_signs,
                                  verification_identity)
from orlicz_control.risk_core import RiskParams, worst_case_phi
from reference_values import ALPHA_P_CONDITION, DA_DPSI, EXACT_A, EXACT_DELTA_BAR


def params(alpha_p=2.0, **risk):
    base = dict(p=2.0, psi=0.01, delta=0.1, lambda_N=0.05)
    base.update(risk)
    return LinearModelParams(a=0.02, alpha=alpha_p / base["p"], risk=RiskParams(**base))


@pytest.mark.parametrize("ap", [2.0, 1.0, 0.5])
def test_coefficient_against_independent_quadrature(ap):
    sol = compute_A(params(ap))
    assert sol.A == pytest.approx(EXACT_A[ap], rel=1e-12)
    assert sol.delta_bar == pytest.approx(EXACT_DELTA_BAR[ap], rel=1e-9)
    assert sol.delta_bar >= 0


def test_coefficient_without_jumps():
    sol = compute_A(params(2.0, lambda_N=0.0))
    assert sol.A == pytest.approx(1 / 0.06, rel=1e-14)
    assert sol.delta_bar == 0.0


def test_ill_posed_raises():
    with pytest.raises(IllPosedError):
        compute_A(params(2.0, delta=0.005))


def test_exact_value_examples():
    sol = compute_A(params(2.0))
    assert exact_value(sol, 0.0) == 0.0
    assert exact_value(sol, 1.0) == pytest.approx(sol.A)
    assert exact_value(sol, 0.05) == pytest.approx(0.0268, abs=1e-4)


def test_exact_phi_examples():
    sol = compute_A(params(2.0))
    assert exact_phi(sol, 0.0, 0.01) == 1.0
    assert exact_phi(sol, -0.5, 0.01) == pytest.approx(math.exp(-0.0075), rel=1e-15)
    assert exact_phi(sol, -1 + 1e-9, 0.01) == pytest.approx(math.exp(-0.01), rel=1e-12)
    with pytest.raises(ValueError):
        exact_phi(sol, -1.0, 0.01)


@pytest.mark.parametrize("ap", [2.0, 1.0, 0.5])
def test_verification_identity(ap):
    sol = compute_A(params(ap))
    assert verification_identity(sol) == pytest.approx(1 / sol.A, rel=1e-8)


@pytest.mark.parametrize("ap", [2.0, 1.0, 0.5])
def test_pointwise_residual_small(ap):
    sol = compute_A(params(ap))
    xs = np.random.default_rng(0).uniform(1e-6, 2.0, 50)
    for x in xs:
        assert abs(pointwise_residual(sol, x)) < 1e-8 * (1 + x ** ap)


@given(st.floats(-0.999999, 0.0))
def test_exact_phi_matches_generic_formula(z):
    sol = compute_A(params(2.0))
    assert exact_phi(sol, z, 0.01) == worst_case_phi((1 + z) ** 2 - 1, 0.01)


def test_alpha_p_condition_value():
    assert order_condition(params(2.0)) == pytest.approx(ALPHA_P_CONDITION, rel=1e-10)


def test_sensitivity_report_structure():
    rep = sensitivity_signs(params(2.0))
    assert rep["delta"]["derivative"] < 0
    assert rep["a"]["derivative"] > 0
    assert rep["lambda_N"]["derivative"] <= 0
    assert rep["alpha"]["derivative"] > 0 and rep["p"]["derivative"] > 0
    # the finite difference agrees with an independent high-precision derivative
    assert rep["psi"]["derivative"] == pytest.approx(DA_DPSI, rel=1e-6)


def test_sensitivity_reports_ill_posed_bump_per_parameter():
    # delta sits just above the critical value, so a downward bump is ill-posed
    crit = 1 / EXACT_A[2.0] - 0.1
    rep = sensitivity_signs(params(2.0, delta=-crit + 1e-9), bump=1e-2)
    assert rep["delta"]["error"] is not None
