"""Randomised invariant suite shared by the ``verify`` command and the tests.

Each check returns a :class:`CheckResult`; a failing check carries the first
counterexample it found.  All randomness flows from one seed.
"""
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import risk_core as rc
from .calibration import forward_euler
from .dynamics import (load_station_parameters, logistic_model, macrophyte_model, proportional_jump,
                       verify_state_constraints)
from .exact import LinearModelParams, compute_A, exact_phi, growth_factor, verification_identity
from .grid import Field, Grid, build_quadrature, interpolate, jump_target
from .hjb import Discretization, SolverConfig
from .risk_core import RiskParams


@dataclass
class CheckResult:
    name: str
    passed: bool
    trials: int
    counterexample: Optional[dict] = None
    detail: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def _num(v):
    return float(v) if np.ndim(v) == 0 else [float(x) for x in np.ravel(v)]


def check_divergence_nonnegative(rng, trials=2000, divergence: Callable = rc.divergence):
    phi = np.exp(rng.uniform(np.log(1e-6), np.log(1e6), trials))
    phi[0] = 1.0
    D = np.asarray(divergence(phi))
    bad = np.flatnonzero(D < 0)
    if len(bad):
        k = bad[0]
        return CheckResult("divergence_nonnegative", False, trials,
                           {"phi": float(phi[k]), "D": float(D[k])})
    if abs(float(divergence(np.array([1.0]))[0])) > 0:
        return CheckResult("divergence_nonnegative", False, trials, {"phi": 1.0})
    return CheckResult("divergence_nonnegative", True, trials)


def check_divergence_convex(rng, trials=2000, divergence: Callable = rc.divergence):
    a = np.exp(rng.uniform(-10, 10, trials))
    b = np.exp(rng.uniform(-10, 10, trials))
    lhs = np.asarray(divergence((a + b) / 2))
    rhs = (np.asarray(divergence(a)) + np.asarray(divergence(b))) / 2
    bad = np.flatnonzero(lhs > rhs + 1e-12 * (1 + np.abs(rhs)))
    if len(bad):
        k = bad[0]
        return CheckResult("divergence_convex", False, trials,
                           {"phi1": float(a[k]), "phi2": float(b[k])})
    return CheckResult("divergence_convex", True, trials)


def check_rho_monotone(rng, trials=2000):
    x1 = rng.uniform(0.1, 10, trials)
    x2 = x1 + rng.uniform(1e-3, 10, trials)
    y = rng.uniform(-5, 5, trials)
    y2 = y + rng.uniform(1e-3, 5, trials)
    r1 = rc.rho(x1, y)
    up = rc.rho(x2, y) >= r1 - 1e-12 * (1 + np.abs(r1))
    # strict decrease is only demanded where it survives rounding
    gap = x1 * (np.exp(y2 / x1) - np.exp(y / x1))
    resolvable = gap > 8 * np.finfo(float).eps * np.maximum(np.abs(r1), x1)
    r2 = rc.rho(x1, y2)
    down = np.where(resolvable, r2 < r1, r2 <= r1)
    bad = np.flatnonzero(~(up & down))
    if len(bad):
        k = bad[0]
        return CheckResult("rho_monotone", False, trials,
                           {"x1": x1[k], "x2": x2[k], "y1": y[k], "y2": y2[k]})
    return CheckResult("rho_monotone", True, trials)


def check_phi_first_order(rng, trials=500):
    """Derivative of the sup objective vanishes at the worst-case phi."""
    for _ in range(trials):
        F = rng.uniform(0.1, 10.0)
        Fj = F * (1 + rng.uniform(-0.9, 0.9))
        psi = rng.uniform(0.01, 5.0)
        phi = rc.worst_case_phi(rc.omega(Fj, F), psi)

        def obj(p):
            return -rc.divergence(p) * F / psi + (Fj - F) * p

        h = 1e-6 * phi
        deriv = (obj(phi + h) - obj(phi - h)) / (2 * h)
        scale = abs(Fj - F) + F / psi * abs(np.log(phi)) + 1e-300
        if abs(deriv) > 1e-6 * max(scale, 1.0):
            return CheckResult("phi_first_order", False, trials,
                               {"F": F, "F_jump": Fj, "psi": psi, "derivative": deriv})
    return CheckResult("phi_first_order", True, trials)


def check_sup_identity(rng, trials=50, perturbations=100, M=8):
    for _ in range(trials):
        F = rng.uniform(0.1, 10.0)
        Fj = F * rng.uniform(0.05, 2.0, M)
        w = rng.uniform(0.1, 1.0, M)
        w /= w.sum()
        psi = rng.uniform(0.01, 5.0)
        phi = rc.worst_case_phi(rc.omega(Fj, F), psi)
        best = rc.sup_objective(phi, Fj, F, w, psi)
        for eta in rng.uniform(-0.5, 0.5, (perturbations, M)):
            val = rc.sup_objective(phi * (1 + eta), Fj, F, w, psi)
            if val > best + 1e-12 * (1 + abs(best)):
                return CheckResult("sup_identity", False, trials * perturbations,
                                   {"F": F, "F_jump": _num(Fj), "psi": psi, "eta": _num(eta)})
    return CheckResult("sup_identity", True, trials * perturbations)


def check_exact_benchmark(rng, trials=20):
    """Identity to 1e-8, analytic phi against the generic formula, delta_bar >= 0."""
    for ap in (2.0, 1.0, 0.5):
        sol = compute_A(LinearModelParams(alpha=ap / 2))
        ident = verification_identity(sol)
        if abs(ident - 1 / sol.A) > 1e-8 / sol.A or sol.delta_bar < 0:
            return CheckResult("exact_benchmark", False, trials,
                               {"alpha_p": ap, "identity": ident, "delta_bar": sol.delta_bar})
        z = rng.uniform(-0.999, 0.0, trials)
        psi = sol.params.risk.psi
        ref = rc.worst_case_phi(growth_factor(z, ap) - 1.0, psi)
        if np.any(exact_phi(sol, z, psi) != ref):
            return CheckResult("exact_benchmark", False, trials, {"alpha_p": ap, "z": _num(z)})
    return CheckResult("exact_benchmark", True, 3 * trials)


def check_quadrature_mass(rng, trials=50):
    from .risk_core import triangular_jumps, uniform_jumps

    for _ in range(trials):
        M = int(rng.integers(1, 400))
        lo = rng.uniform(-1, 0)
        for dist in (uniform_jumps(lo, lo + rng.uniform(0.01, 1)), triangular_jumps()):
            q = build_quadrature(dist, M)
            if q.weights.sum() != 1.0:
                return CheckResult("quadrature_mass", False, trials,
                                   {"M": M, "sum": float(q.weights.sum())})
    return CheckResult("quadrature_mass", True, trials)


def check_interpolation_monotone(rng, trials=200):
    grid = Grid(1.0, 6, 1.0, 5)
    for _ in range(trials):
        V = rng.uniform(0, 1, grid.shape)
        pts = rng.uniform(-0.1, 1.1, (20, 2))
        before = interpolate(Field(grid, V), (pts[:, 0], pts[:, 1]))
        W = V.copy()
        idx = tuple(rng.integers(0, s) for s in grid.shape)
        W[idx] += rng.uniform(0, 1)
        after = interpolate(Field(grid, W), (pts[:, 0], pts[:, 1]))
        if np.any(after < before):
            return CheckResult("interpolation_monotone", False, trials, {"vertex": list(idx)})
    return CheckResult("interpolation_monotone", True, trials)


def check_clamp(rng, trials=200):
    """Zero jumps are the identity, and compliant models never leave the box."""
    st = load_station_parameters()[7]
    model = macrophyte_model(st)
    grid = Grid(1.0, 10, 1.0, 10)
    s = rng.uniform(0, 1, (trials, 2))
    t1, t2 = jump_target((s[:, 0], s[:, 1]), model, 0.0, grid)
    if np.any(t1 != s[:, 0]) or np.any(t2 != s[:, 1]):
        return CheckResult("clamp", False, trials, {"kind": "z=0 not identity"})
    z = rng.uniform(model.jumps.z_lo, model.jumps.z_hi, trials)
    b1, b2 = proportional_jump((s[:, 0], s[:, 1]))
    raw1, raw2 = s[:, 0] + b1 * z, s[:, 1] + b2 * z
    out = (raw1 < 0) | (raw1 > 1) | (raw2 < 0) | (raw2 > 1)
    if np.any(out):
        k = np.flatnonzero(out)[0]
        return CheckResult("clamp", False, trials, {"state": _num(s[k]), "z": float(z[k])})
    return CheckResult("clamp", True, 2 * trials)


def check_inward_drift(n=101):
    """Inward drift on the axes and in-box jumps/harvests for every station."""
    xs = np.linspace(0.0, 1.0, n)
    for sid, st in load_station_parameters().items():
        model = macrophyte_model(st)
        a1, _ = model.drift(np.zeros(n), xs)
        _, a2 = model.drift(xs, np.zeros(n))
        rep = verify_state_constraints(model, n)
        if np.any(a1 < 0) or np.any(a2 < 0) or not (rep.jump_ok and rep.intervention_ok):
            return CheckResult("inward_drift", False, 7,
                               {"station": sid, "violations": rep.violations[:3]})
    return CheckResult("inward_drift", True, 7)


def _monotone_cases():
    risk1 = RiskParams(p=2.0, psi=0.5, delta=0.1, lambda_N=0.05, lambda_Z=0.0)
    m1 = logistic_model(0.02, 1.0)
    g1 = Grid.line(1.0, 12)
    risk2 = RiskParams(p=2.0, psi=10.0, delta=1 / 30, lambda_N=1 / 50, lambda_Z=1 / 30)
    m2 = macrophyte_model(load_station_parameters()[7])
    g2 = Grid(1.0, 6, 1.0, 6)
    return [Discretization(m1, g1, build_quadrature(m1.jumps, 10), risk1),
            Discretization(m2, g2, build_quadrature(m2.jumps, 10), risk2)]


def check_scheme_monotone(rng, trials=1000):
    """Raising the centre never lowers G there; raising a neighbour never raises it."""
    config = SolverConfig()
    discs = _monotone_cases()
    for t in range(trials):
        disc = discs[t % len(discs)]
        F = rng.uniform(0.05, 5.0, disc.shape)
        G0 = disc.residual(F, config)
        i, j = (int(rng.integers(0, s)) for s in disc.shape)
        raised = F.copy()
        raised[i, j] += rng.uniform(1e-3, 2.0)
        slack = 1e-12 * (1 + abs(G0[i, j]))
        if disc.residual(raised, config)[i, j] < G0[i, j] - slack:
            return CheckResult("scheme_monotone", False, trials,
                               {"case": disc.model.name, "vertex": [i, j], "kind": "centre"})
        a, b = (int(rng.integers(0, s)) for s in disc.shape)
        if (a, b) == (i, j):
            continue
        raised = F.copy()
        raised[a, b] += rng.uniform(1e-3, 2.0)
        if disc.residual(raised, config)[i, j] > G0[i, j] + slack:
            return CheckResult("scheme_monotone", False, trials,
                               {"case": disc.model.name, "vertex": [i, j],
                                "raised": [a, b], "kind": "neighbour"})
    return CheckResult("scheme_monotone", True, trials)


def check_euler_nonnegative(rng, trials=500):
    for _ in range(trials):
        theta = (rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 1), rng.uniform(1e-3, 2))
        times = np.cumsum(rng.uniform(1, 60, 8)) - 1
        traj = forward_euler(theta, np.r_[0.0, times + 1], rng.uniform(0, 1))
        if np.any(traj < 0):
            return CheckResult("euler_nonnegative", False, trials, {"theta": _num(theta)})
    return CheckResult("euler_nonnegative", True, trials)


CHECKS = {
    "divergence_nonnegative": check_divergence_nonnegative,
    "divergence_convex": check_divergence_convex,
    "rho_monotone": check_rho_monotone,
    "phi_first_order": check_phi_first_order,
    "sup_identity": check_sup_identity,
    "exact_benchmark": check_exact_benchmark,
    "quadrature_mass": check_quadrature_mass,
    "interpolation_monotone": check_interpolation_monotone,
    "clamp": check_clamp,
    "inward_drift": lambda rng: check_inward_drift(),
    "scheme_monotone": check_scheme_monotone,
    "euler_nonnegative": check_euler_nonnegative,
}


def run_suite(seed=0, only=None, divergence: Callable = rc.divergence):
    """Run every check (or those named in ``only``) from one seeded generator.

    ``divergence`` replaces the penalty in the two divergence checks, which is
    how the fault-injection self-test feeds in a broken implementation.
    """
    out = []
    for name, fn in CHECKS.items():
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([seed, len(out)])
        if name.startswith("divergence"):
            out.append(fn(rng, divergence=divergence))
        else:
            out.append(fn(rng))
    return out
