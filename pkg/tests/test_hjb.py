import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orlicz_control.dynamics import (DynamicsModel, load_station_parameters, logistic_model,
                                     macrophyte_model, zero_model)
from orlicz_control.grid import Field, Grid, build_quadrature
from orlicz_control.hjb import (ConfigError, Discretization, NumericalError, RobustHJBSolver,
                                SolverConfig, control_min, local_update, omega_lower_bound,
                                residual, residual_truncated, robust_jump_term, solve,
                                upwind_drift_term, write_outputs)
from orlicz_control.risk_core import RiskParams, uniform_jumps

CONVEX = RiskParams(p=2.0, psi=0.01, delta=0.1, lambda_N=0.05)
APP = RiskParams(p=2.0, psi=10.0, delta=1 / 30, lambda_N=1 / 50, lambda_Z=1 / 30)


def constant_model(c, dim=1):
    def f(x1, x2=0.0):
        return np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, float(c))

    base = zero_model(dim)
    return DynamicsModel("const", dim, base.drift, base.jump_gain, f, base.cost, base.jumps)


def harvest_1d(cost):
    base = zero_model(1)
    return DynamicsModel("harvest1d", 1, base.drift, base.jump_gain, base.disutility,
                         lambda u1, u2=0.0: cost(np.asarray(u1, float)), base.jumps,
                         harvest=True)


@pytest.fixture(scope="module")
def station7_small():
    model = macrophyte_model(load_station_parameters()[7])
    grid = Grid(1.0, 12, 1.0, 12)
    quad = build_quadrature(model.jumps, 8)
    return model, grid, quad


@pytest.fixture(scope="module")
def convex_run():
    model = logistic_model(0.02, 1.0)
    grid = Grid.line(1.0, 100)
    quad = build_quadrature(model.jumps, 100)
    config = SolverConfig(tol=1e-10)
    field, policy, report = solve(model, grid, quad, CONVEX, config)
    return model, grid, quad, config, field, policy, report


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("kwargs", [{"gamma": 1.0}, {"gamma": 0.0}, {"tol": 0.0},
                                    {"eps_div": -1.0}, {"control_stride": 0},
                                    {"control_search": "fast"}])
def test_solver_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SolverConfig(**kwargs)


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        Discretization(logistic_model(0.02, 1.0), Grid(1, 4, 1, 4),
                       build_quadrature(uniform_jumps(), 4), CONVEX)


# ---------------------------------------------------------------- per-vertex terms


def test_upwind_linear_field_exact():
    model = logistic_model(0.02, 1.0)
    grid = Grid.line(1.0, 10)
    slope = 3.0
    field = Field.from_function(grid, lambda x: 1 + slope * x)
    i = 5
    h, c, flagged = upwind_drift_term(field, i, 0, model)
    a = 0.02 * 0.5 * 0.5
    assert h - c * field.values[i] == pytest.approx(a * slope, rel=1e-12)
    assert not flagged


def test_upwind_zero_drift_and_outflow_boundary():
    model = logistic_model(0.02, 1.0)
    grid = Grid.line(1.0, 10)
    field = Field.from_function(grid, lambda x: x ** 2)
    assert upwind_drift_term(field, 10, 0, model) == (0.0, 0.0, False)
    zm = zero_model(1)
    assert upwind_drift_term(field, 4, 0, zm) == (0.0, 0.0, False)


def test_upwind_flags_outward_boundary_drift():
    model = DynamicsModel("out", 1, lambda x1, x2=0.0: (np.ones_like(np.asarray(x1, float)),
                                                         np.zeros_like(np.asarray(x1, float))),
                          zero_model(1).jump_gain, zero_model(1).disutility,
                          zero_model(1).cost, uniform_jumps())
    field = Field.from_function(Grid.line(1.0, 4), lambda x: x)
    assert upwind_drift_term(field, 4, 0, model) == (0.0, 0.0, True)


def test_control_min_constant_field():
    model = harvest_1d(lambda u: u)
    field = Field(Grid.line(2.0, 2), np.full(3, 4.0))
    assert control_min(field, 2, 0, model) == (4.0, (0, 0))
    assert control_min(field, 0, 0, model) == (4.0, (0, 0))


def test_control_min_enumeration_example():
    model = harvest_1d(lambda u: u)
    field = Field(Grid.line(2.0, 2), np.array([0.0, 10.0, 10.0]))
    assert control_min(field, 2, 0, model, p=1.0) == (2.0, (2, 0))


def test_control_min_ties_prefer_small_harvest():
    model = harvest_1d(lambda u: np.zeros_like(u))
    field = Field(Grid.line(3.0, 3), np.array([1.0, 1.0, 1.0, 1.0]))
    assert control_min(field, 3, 0, model)[1] == (0, 0)


def test_control_stride_keeps_saturating_index():
    model = harvest_1d(lambda u: 0.01 * u)
    field = Field(Grid.line(7.0, 7), np.array([0.0] + [5.0] * 7))
    value, (k, _) = control_min(field, 7, 0, model, stride=3)
    assert k == 7 and value == pytest.approx(0.07)


def test_jump_term_constant_field():
    model = logistic_model(0.02, 1.0)
    grid = Grid.line(1.0, 10)
    quad = build_quadrature(model.jumps, 10)
    field = Field(grid, np.full(11, 3.0))
    H, C, phi = robust_jump_term(field, 6, 0, model, quad, CONVEX)
    assert np.allclose(phi, 1.0)
    assert H == pytest.approx(0.05 * 3.0) and C == pytest.approx(0.05)
    H0, C0, _ = robust_jump_term(field, 6, 0, model, quad, RiskParams(2, 0.01, 0.1, 0.0))
    assert (H0, C0) == (0.0, 0.0)


def test_jump_term_hand_example():
    # single node z = -0.5 from x = 1 on F(x) = x: Fhat - F = -0.5 with F = 1
    model = logistic_model(0.02, 1.0, uniform_jumps(-0.5, -0.5))
    grid = Grid.line(1.0, 10)
    quad = build_quadrature(model.jumps, 1)
    field = Field.from_function(grid, lambda x: x)
    lam = 0.3
    H, C, phi = robust_jump_term(field, 10, 0, model, quad, RiskParams(2, 2.0, 0.1, lam))
    assert phi[0] == pytest.approx(math.exp(-1), rel=1e-14)
    assert C == pytest.approx(0.5 * lam, rel=1e-14)
    assert H == pytest.approx(lam * math.exp(-1) * 0.5, rel=1e-14)


def test_local_update_pure_discount():
    model = constant_model(0.7)
    grid = Grid.line(1.0, 4)
    field = Field(grid, np.full(5, 1.0))
    quad = build_quadrature(model.jumps, 4)
    value = local_update(field, 2, 0, model, quad, RiskParams(2, 1.0, 0.1, 0.0))
    assert value == pytest.approx(0.49 / 0.1, rel=1e-14)


def test_local_update_zero_fixed_point():
    model = zero_model(1)
    grid = Grid.line(1.0, 4)
    quad = build_quadrature(model.jumps, 4)
    value = local_update(Field(grid, np.zeros(5)), 2, 0, model, quad, CONVEX)
    assert value == 0.0


def _node_oracle(F, i, n, M, risk, a=0.02, eps=1e-12):
    """Independent re-derivation of one 1D logistic update (alpha = 1, p = 2)."""
    h = 1.0 / n
    x = i * h
    drift = a * x * (1 - x)
    H = x ** 2
    C = risk.delta
    if drift > 0:
        H += drift / h * F[i + 1]
        C += drift / h
    for m in range(M):
        z = -1.0 + m / M
        t = min(max(x * (1 + z), 0.0), 1.0)
        s = t / h
        lo = min(max(math.ceil(s) - 1, 0), n - 1)
        w = s - lo
        Fh = (1 - w) * F[lo] + w * F[lo + 1]
        phi = math.exp(risk.psi * (Fh - F[i]) / max(F[i], eps))
        D = phi * math.log(phi) - phi + 1
        H += risk.lambda_N / M * phi * Fh
        C += risk.lambda_N / M * (D / risk.psi + phi)
    return H / C


@pytest.mark.parametrize("i", [1, 17, 50, 99])
def test_local_update_matches_independent_oracle(i):
    n, M = 100, 100
    model = logistic_model(0.02, 1.0)
    grid = Grid.line(1.0, n)
    quad = build_quadrature(model.jumps, M)
    F = np.random.default_rng(i).uniform(0.05, 1.0, n + 1)
    value = local_update(Field(grid, F), i, 0, model, quad, CONVEX)
    assert value == pytest.approx(_node_oracle(F, i, n, M, CONVEX), rel=1e-12)


# ---------------------------------------------------------------- solve


def test_solve_constant_disutility_fixed_point():
    model = constant_model(0.8, dim=2)
    grid = Grid(1.0, 6, 1.0, 6)
    quad = build_quadrature(model.jumps, 4)
    field, policy, report = solve(model, grid, quad, RiskParams(2, 1.0, 0.1, 0.0, 0.0))
    assert report.converged
    assert np.allclose(field.values, 0.64 / 0.1, rtol=1e-12)
    assert np.all(policy.delta_tilde.values == 0)


def test_convex_case_converges(convex_run):
    *_, field, policy, report = convex_run
    assert report.converged and report.final_error < 1e-10
    assert report.stability_ok
    assert report.residual_inf < 1e-6
    assert 50 <= report.iterations <= 2000
    assert np.all(policy.delta_tilde.values >= 0)


def test_residual_trivial_fixed_point():
    model = constant_model(0.8)
    grid = Grid.line(1.0, 8)
    quad = build_quadrature(model.jumps, 4)
    params = RiskParams(2, 1.0, 0.1, 0.05, 0.0)
    res = residual(Field(grid, np.full(9, 0.64 / 0.1)), model, grid, quad, params)
    assert np.abs(res.values).max() < 1e-12


def _G_oracle(F, i, j, disc, params, eps=1e-12):
    """Straight-line evaluation of the monotone form G at one 2D vertex."""
    grid = disc.grid
    x1, x2 = i * grid.h1, j * grid.h2
    a1, a2 = disc.model.drift(x1, x2)
    G = params.delta * F[i, j]
    for a, nb_pos, nb_neg, h in ((a1, (i + 1, j), (i - 1, j), grid.h1),
                                 (a2, (i, j + 1), (i, j - 1), grid.h2)):
        if a > 0 and max(nb_pos) <= grid.n1:
            G += a / h * (F[i, j] - F[nb_pos])
        elif a < 0 and min(nb_neg) >= 0:
            G += -a / h * (F[i, j] - F[nb_neg])
    total = 0.0
    for z, p in zip(disc.quad.nodes, disc.quad.weights):
        t1 = min(max(x1 - x1 * z, 0.0), 1.0)
        t2 = min(max(x2 - x2 * z, 0.0), 1.0)
        Fh = float(Field(grid, F)(t1, t2))
        total += p * (1 - math.exp(-params.psi * (F[i, j] - Fh) / max(F[i, j], eps)))
    G += params.lambda_N / params.psi * total * F[i, j]
    best = min(F[i - k, j - l] + disc.model.cost(k * grid.h1, l * grid.h2) ** params.p
               for k in range(i + 1) for l in range(j + 1))
    G += params.lambda_Z * (F[i, j] - best)
    return G


def test_residual_matches_independent_oracle(station7_small):
    model, grid, quad = station7_small
    disc = Discretization(model, grid, quad, APP)
    rng = np.random.default_rng(11)
    F = rng.uniform(0.5, 50.0, grid.shape)
    res = disc.residual(F, SolverConfig()) + disc.FP
    for _ in range(10):
        i, j = (int(v) for v in rng.integers(0, 13, 2))
        assert res[i, j] == pytest.approx(_G_oracle(F, i, j, disc, APP), rel=1e-11, abs=1e-11)


def test_truncated_residual(station7_small):
    model, grid, quad = station7_small
    disc = Discretization(model, grid, quad, APP)
    assert omega_lower_bound(disc) == pytest.approx(1.75 ** 2 * 30, rel=1e-12)
    F = np.random.default_rng(2).uniform(1.0, 2.0, grid.shape)
    field = Field(grid, F)
    plain = residual(field, model, grid, quad, APP)
    trunc = residual_truncated(field, model, grid, quad, APP, omega_trunc=100.0)
    assert np.allclose(plain.values, trunc.values, rtol=1e-14, atol=1e-14)
    with pytest.raises(ConfigError):
        residual_truncated(field, model, grid, quad, APP, omega_trunc=91.0)
    with pytest.raises(ConfigError):
        solve(model, grid, quad, APP, SolverConfig(omega_trunc=50.0))


def test_truncated_residual_negative_centre():
    model = constant_model(1.0)
    grid = Grid.line(1.0, 4)
    quad = build_quadrature(model.jumps, 4)
    params = RiskParams(2, 1.0, 0.1, 0.05, 0.0)
    F = np.full(5, 3.0)
    F[2] = -1.0
    G = residual_truncated(Field(grid, F), model, grid, quad, params, omega_trunc=20.0)
    # the centre enters through max(F, 0) = 0, leaving only -f^p
    assert G.values[2] == pytest.approx(-1.0, abs=1e-12)


def test_stability_bound_on_converged_runs(convex_run, station7_small):
    *_, field, _, report = convex_run
    assert report.stability_ok
    model, grid, quad = station7_small
    field, _, report = solve(model, grid, quad, APP, SolverConfig(tol=1e-9))
    lo, hi = 0.0, 1.75 ** 2
    dF = APP.delta * field.values
    assert report.stability_ok
    assert dF.min() >= lo - 1e-12 * hi and dF.max() <= hi + 1e-12 * hi


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1))
def test_scheme_monotone_property(seed):
    rng = np.random.default_rng(seed)
    model = macrophyte_model(load_station_parameters()[int(rng.integers(1, 8))])
    grid = Grid(1.0, 5, 1.0, 5)
    disc = Discretization(model, grid, build_quadrature(model.jumps, 6), APP)
    config = SolverConfig()
    F = rng.uniform(0.05, 5.0, grid.shape)
    G = disc.residual(F, config)
    i, j = (int(v) for v in rng.integers(0, 6, 2))
    up = F.copy()
    up[i, j] += rng.uniform(1e-3, 2.0)
    slack = 1e-12 * (1 + abs(G[i, j]))
    assert disc.residual(up, config)[i, j] >= G[i, j] - slack
    a, b = (int(v) for v in rng.integers(0, 6, 2))
    if (a, b) != (i, j):
        nb = F.copy()
        nb[a, b] += rng.uniform(1e-3, 2.0)
        assert disc.residual(nb, config)[i, j] <= G[i, j] + slack


def test_lagged_phi_consistency(convex_run):
    model, grid, quad, config, field, _, _ = convex_run
    disc = Discretization(model, grid, quad, CONVEX)
    update, *_ = disc.extract(field.values, config)
    assert np.abs(update[:, 0] - field.values).max() <= config.tol / config.gamma


@pytest.mark.parametrize("risk", [RiskParams(2, 1e-8, 1 / 30, 1 / 50, 1 / 30),
                                  RiskParams(2, 10.0, 1 / 30, 0.0, 1 / 30)])
def test_ambiguity_off_switch(station7_small, risk):
    model, grid, quad = station7_small
    robust, pol, _ = solve(model, grid, quad, risk, SolverConfig(tol=1e-11))
    plain, _, _ = solve(model, grid, quad, risk, SolverConfig(tol=1e-11, ambiguity=False))
    assert np.allclose(robust.values, plain.values, rtol=1e-6, atol=0)
    assert np.abs(pol.delta_tilde.values).max() <= 1e-6


def test_determinism(station7_small):
    model, grid, quad = station7_small
    a = solve(model, grid, quad, APP, SolverConfig(tol=1e-8))
    b = solve(model, grid, quad, APP, SolverConfig(tol=1e-8))
    assert np.array_equal(a[0].values, b[0].values)
    assert np.array_equal(a[1].u1.values, b[1].u1.values)
    da, db = a[2].as_dict(), b[2].as_dict()
    da.pop("wall_time"), db.pop("wall_time")
    assert da == db


def test_argmin_invariance_under_scaling():
    st7 = load_station_parameters()[7]
    base = macrophyte_model(st7)
    c = 2.0
    scaled = DynamicsModel("scaled", 2, base.drift, base.jump_gain,
                           lambda x1, x2: c * base.disutility(x1, x2),
                           lambda u1, u2: c * base.cost(u1, u2), base.jumps,
                           intervention=base.intervention, harvest=True)
    grid = Grid(1.0, 10, 1.0, 10)
    quad = build_quadrature(base.jumps, 8)
    config = SolverConfig(tol=1e-12)
    F1, P1, _ = solve(base, grid, quad, APP, config)
    F2, P2, _ = solve(scaled, grid, quad, APP, config)
    assert np.allclose(F2.values, c ** APP.p * F1.values, rtol=1e-6)
    assert np.array_equal(P1.u1.values, P2.u1.values)
    assert np.array_equal(P1.u2.values, P2.u2.values)


@pytest.mark.parametrize("sid", [3, 7])
def test_control_search_variants_agree_exactly(sid):
    model = macrophyte_model(load_station_parameters()[sid])
    grid = Grid(1.0, 16, 1.0, 16)
    quad = build_quadrature(model.jumps, 8)
    runs = [solve(model, grid, quad, APP, SolverConfig(tol=1e-9, control_search=mode,
                                                       prune=prune))
            for mode, prune in (("direct", False), ("direct", True), ("diagonal", True))]
    ref = runs[0]
    for other in runs[1:]:
        assert np.array_equal(ref[0].values, other[0].values)
        assert np.array_equal(ref[1].u1.values, other[1].u1.values)
        assert np.array_equal(ref[1].u2.values, other[1].u2.values)


def test_diagonal_search_rejects_unsupported(station7_small):
    model, grid, quad = station7_small
    with pytest.raises(ConfigError):
        solve(model, grid, quad, APP, SolverConfig(control_search="diagonal", control_stride=2))


def test_non_convergence_is_reported(station7_small):
    model, grid, quad = station7_small
    _, _, report = solve(model, grid, quad, APP, SolverConfig(max_iters=3))
    assert not report.converged and report.iterations == 3


def test_nan_aborts_with_vertex():
    base = logistic_model(0.02, 1.0)

    def bad_f(x1, x2=0.0):
        x1 = np.asarray(x1, dtype=float)
        return np.where(np.isclose(x1, 0.5), np.nan, x1)

    model = DynamicsModel("bad", 1, base.drift, base.jump_gain, bad_f, base.cost, base.jumps)
    with pytest.raises((NumericalError, ConfigError)):
        solve(model, Grid.line(1.0, 10), build_quadrature(base.jumps, 4), CONVEX)


def test_write_outputs(tmp_path, station7_small):
    model, grid, quad = station7_small
    field, policy, report = solve(model, grid, quad, APP, SolverConfig(tol=1e-6))
    write_outputs(tmp_path, field, policy, report, {"p": 2.0})
    header = (tmp_path / "policy.csv").read_text().splitlines()[0]
    assert header == "i,j,x1,x2,u1,u2,delta_tilde"
    assert (tmp_path / "value.csv").read_text().splitlines()[0] == "i,j,x1,x2,F,Psi"
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["iterations"] == report.iterations
    assert "converged=True" in (tmp_path / "report.txt").read_text()


def test_estimator_fit_predict():
    est = RobustHJBSolver(n1=50, M=50, p=2.0, psi=0.01, delta=0.1, lambda_N=0.05)
    est.fit(logistic_model(0.02, 1.0))
    assert est.report_.converged
    pred = est.predict([0.0, 0.5, 1.0])
    assert pred.shape == (3,) and pred[0] < pred[1] < pred[2]
    assert est.get_params()["n1"] == 50
    with pytest.raises(AttributeError):
        RobustHJBSolver().predict([0.1])
