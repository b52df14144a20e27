"""Coefficient bundles of the controlled jump system.

A model supplies vectorised callables for the drift ``a``, the jump gain
``b``, the intervention ``c``, the running disutility ``f`` and the
intervention cost ``g``.  Three built-ins are registered by name: the
exactly solvable linear model, its logistic variant, and the two-population
macrophyte model.
"""
import csv
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .risk_core import JumpDistribution, triangular_jumps, uniform_jumps


@dataclass(frozen=True)
class StationParameters:
    r: float
    d: float
    alpha_src: float
    Q: float
    mu: float = 0.1

    def __post_init__(self):
        if not 0 < self.Q <= 1:
            raise ValueError(f"Q must lie in (0, 1], got {self.Q}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if min(self.r, self.d, self.alpha_src) < 0:
            raise ValueError("r, d, alpha must be nonnegative")
        if self.r <= self.d:
            warnings.warn(f"r={self.r} <= d={self.d}: outside the logistic-growth regime",
                          stacklevel=2)


def load_station_parameters():
    """Calibrated station parameters shipped with the package, keyed by id."""
    text = resources.files("orlicz_control.data").joinpath("station_params.csv").read_text()
    out = {}
    for row in csv.DictReader(text.splitlines()):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out[int(row["station_id"])] = StationParameters(
                float(row["r"]), float(row["d"]), float(row["alpha"]), float(row["Q"]))
    return out


def chi_mu(x, Q, mu):
    """Growth truncation ``min(1, (1 - x/Q)/mu)``."""
    return np.minimum(1.0, (1.0 - np.asarray(x, dtype=float) / Q) / mu)


def growing_drift(x1, r, d, alpha_src, Q):
    """Drift of the growing population; shared with the calibration model."""
    x1 = np.asarray(x1, dtype=float)
    return r * x1 * (1.0 - x1 / Q) - d * x1 + alpha_src * np.maximum(Q - x1, 0.0)


def macrophyte_drift(s, params, e1=0.0, e2=0.0):
    x1, x2 = (np.asarray(v, dtype=float) for v in s)
    p = params
    a1 = growing_drift(x1, p.r, p.d, p.alpha_src, p.Q) + e1 * x2
    a2 = chi_mu(x2, p.Q, p.mu) * (p.r * x2 * (1.0 - x2 / p.Q) + p.d * x1 + e2 * x1)
    return a1, a2


def proportional_jump(s):
    x1, x2 = (np.asarray(v, dtype=float) for v in s)
    return -x1, -x2


def harvest_intervention(s, u):
    x1, x2 = (np.asarray(v, dtype=float) for v in s)
    u1, u2 = (np.asarray(v, dtype=float) for v in u)
    if np.any(u1 < 0) or np.any(u2 < 0):
        raise ValueError("controls must be nonnegative")
    return -np.minimum(x1, u1), -np.minimum(x2, u2)


def application_disutility(s):
    x1, x2 = (np.asarray(v, dtype=float) for v in s)
    return np.abs(x1 - 0.25) + x2


def application_cost(u, c0=1.0, c1=5.0):
    u1, u2 = (np.asarray(v, dtype=float) for v in u)
    if np.any(u1 < 0) or np.any(u2 < 0):
        raise ValueError("controls must be nonnegative")
    return c0 + c1 * (u1 + u2)


def _zero2(x1, x2):
    z = np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)
    return z, z.copy()


def _no_intervention(x1, x2, u1, u2):
    return _zero2(x1, x2)


@dataclass(frozen=True)
class DynamicsModel:
    """Immutable coefficient bundle.

    All callables take broadcastable arrays ``(x1, x2)`` (``x2`` is ignored by
    one-dimensional models) and ``g`` takes ``(u1, u2)``.  ``harvest`` marks
    the saturating-removal intervention ``c_i = -min(x_i, u_i)``, which is
    the only intervention form the grid solver discretises.
    """

    name: str
    dim: int
    drift: Callable
    jump_gain: Callable
    disutility: Callable
    cost: Callable
    jumps: JumpDistribution
    intervention: Callable = _no_intervention
    harvest: bool = False
    control_bound: float = 1.0
    params: dict = field(default_factory=dict)
    # analytic flow x(t) = flow(x0, t) between jumps, when known
    flow: Optional[Callable] = None
    # g as a function of u1 + u2, when the cost depends on the total only
    cost_of_total: Optional[Callable] = None

    def coefficients(self, x1, x2=0.0):
        a1, a2 = self.drift(x1, x2)
        b1, b2 = self.jump_gain(x1, x2)
        return a1, a2, b1, b2


def linear_model(a, alpha, jumps=None):
    """One-dimensional ``dX = X(a dt + dN)`` with disutility ``x**alpha``."""
    jumps = jumps or uniform_jumps(-1.0, 0.0)

    def drift(x1, x2=0.0):
        x1 = np.asarray(x1, dtype=float)
        return a * x1, np.zeros_like(x1)

    def flow(x0, t):
        return x0 * np.exp(a * t)

    return DynamicsModel("linear", 1, drift, _jump_gain_1d, _power_disutility(alpha),
                         _zero_cost, jumps, params={"a": a, "alpha": alpha}, flow=flow)


def logistic_model(a, alpha, jumps=None):
    """Logistic variant ``a x (1 - x)`` of the linear model on [0, 1]."""
    jumps = jumps or uniform_jumps(-1.0, 0.0)

    def drift(x1, x2=0.0):
        x1 = np.asarray(x1, dtype=float)
        return a * x1 * (1.0 - x1), np.zeros_like(x1)

    def flow(x0, t):
        x0 = np.asarray(x0, dtype=float)
        e = np.exp(a * t)
        return x0 * e / (1.0 - x0 + x0 * e)

    return DynamicsModel("logistic", 1, drift, _jump_gain_1d, _power_disutility(alpha),
                         _zero_cost, jumps, params={"a": a, "alpha": alpha}, flow=flow)


def macrophyte_model(station, c0=1.0, c1=5.0, e1=0.0, e2=0.0, jumps=None):
    """Growing/drifting macrophyte populations with harvesting."""
    jumps = jumps or triangular_jumps()

    def drift(x1, x2):
        return macrophyte_drift((x1, x2), station, e1, e2)

    def jump_gain(x1, x2):
        return proportional_jump((x1, x2))

    def intervention(x1, x2, u1, u2):
        return harvest_intervention((x1, x2), (u1, u2))

    def disutility(x1, x2):
        return application_disutility((x1, x2))

    def cost(u1, u2):
        return application_cost((u1, u2), c0, c1)

    def cost_of_total(s):
        return application_cost((s, 0.0), c0, c1)

    return DynamicsModel("macrophyte", 2, drift, jump_gain, disutility, cost, jumps,
                         intervention=intervention, harvest=True,
                         params={"station": station, "c0": c0, "c1": c1, "e1": e1, "e2": e2},
                         cost_of_total=cost_of_total)


def zero_model(dim=2, jumps=None):
    jumps = jumps or uniform_jumps(-1.0, 0.0)

    def disutility(x1, x2=0.0):
        return np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)

    return DynamicsModel("zero", dim, _zero2, _zero2, disutility, _zero_cost, jumps)


def _jump_gain_1d(x1, x2=0.0):
    # X jumps to X (1 + z), z in (-1, 0)
    x1 = np.asarray(x1, dtype=float)
    return x1, np.zeros_like(x1)


def _zero_cost(u1, u2=0.0):
    return np.zeros(np.broadcast(np.asarray(u1), np.asarray(u2)).shape)


def _power_disutility(alpha):
    def f(x1, x2=0.0):
        return np.power(np.maximum(np.asarray(x1, dtype=float), 0.0), alpha)

    return f


MODELS = {
    "linear": linear_model,
    "logistic": logistic_model,
    "macrophyte": macrophyte_model,
    "zero": zero_model,
}


@dataclass
class StateConstraintReport:
    theta: Optional[float]
    b_bar: float
    c_bar: float
    drift_ok: bool
    jump_ok: bool
    intervention_ok: bool
    violations: list

    @property
    def passed(self):
        return self.drift_ok and self.jump_ok and self.intervention_ok


def verify_state_constraints(model, lattice_resolution=201, extent=1.0, max_violations=20):
    """Lattice check of the sign/bound conditions on drift, jumps and harvest.

    ``theta`` is the smallest lattice value beyond which every drift
    component is nonpositive (``None`` when no such value exists).  The
    inward-drift condition on the axes is checked as well.
    """
    xs = np.linspace(0.0, extent, lattice_resolution)
    two_d = model.dim == 2
    X1, X2 = np.meshgrid(xs, xs if two_d else np.zeros(1), indexing="ij")
    a1, a2 = model.drift(X1, X2)
    a1 = np.broadcast_to(a1, X1.shape)
    a2 = np.broadcast_to(a2, X1.shape) if two_d else np.zeros_like(X1)
    violations = []

    def note(kind, where):
        if len(violations) < max_violations:
            violations.append({"condition": kind, "state": [float(v) for v in where]})

    # (i) eventual outflow and inward drift on the axes
    theta = None
    nonpos = (a1 <= 0) & (a2 <= 0)
    for k in range(len(xs) - 1, -1, -1):
        block = nonpos[k:, k:] if two_d else nonpos[k:, :]
        if not block.all():
            break
        theta = float(xs[k])
    if theta is None:
        note("drift_outflow", [xs[-1], xs[-1] if two_d else 0.0])
    inward = bool(np.all(a1[0, :] >= 0)) and (not two_d or bool(np.all(a2[:, 0] >= 0)))
    if not inward:
        bad = np.argwhere(np.r_[a1[0, :] < 0])
        note("drift_inward", [0.0, xs[bad[0][0]] if two_d and len(bad) else 0.0])
    drift_ok = theta is not None and inward

    # (ii) post-jump states
    b1, b2 = model.jump_gain(X1, X2)
    b_bar, jump_ok = 0.0, True
    for z in (model.jumps.z_lo, model.jumps.z_hi):
        for x, b in ((X1, b1), (X2, b2)) if two_d else ((X1, b1),):
            post = x + z * np.broadcast_to(b, x.shape)
            b_bar = max(b_bar, float(post.max()))
            if np.any(post < -1e-14):
                jump_ok = False
                k = np.argwhere(post < -1e-14)[0]
                note("jump_nonnegative", [X1[tuple(k)], X2[tuple(k)]])

    # (iii) post-intervention states on the control lattice
    c_bar, intervention_ok = 0.0, True
    us = np.linspace(0.0, model.control_bound, min(lattice_resolution, 41))
    for u in us:
        c1, c2 = model.intervention(X1, X2, u, u)
        for x, c in ((X1, c1), (X2, c2)) if two_d else ((X1, c1),):
            post = x + np.broadcast_to(c, x.shape)
            c_bar = max(c_bar, float(post.max()))
            if np.any(post < -1e-14):
                intervention_ok = False
                k = np.argwhere(post < -1e-14)[0]
                note("intervention_nonnegative", [X1[tuple(k)], X2[tuple(k)]])

    return StateConstraintReport(theta, b_bar, c_bar, drift_ok, jump_ok, intervention_ok,
                             violations)
