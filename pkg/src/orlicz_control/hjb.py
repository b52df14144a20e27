"""Finite-difference HJB solver with Orlicz-risk ambiguity.

The discretised equation ``C_ij F_ij = H_ij`` is solved by relaxed
Gauss-Seidel sweeps (fast sweeping).  Upwind differences treat the drift,
bilinear interpolation the jump targets, and the intervention term is an
exhaustive (optionally strided and pruned) search over grid-valued harvests.
"""
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K
from .grid import Field, Grid, build_quadrature, cell_index, fmt, write_vertex_csv
from .risk_core import RiskParams


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, msg, vertex=None):
        super().__init__(msg)
        self.vertex = vertex


@dataclass(frozen=True)
class SolverConfig:
    gamma: float = 0.5
    tol: float = 1e-10
    eps_div: float = 1e-12
    max_iters: int = 100_000
    omega_trunc: Optional[float] = None
    control_stride: int = 1
    # None starts from the upper stability bound max f^p / delta
    init_value: Optional[float] = None
    prune: bool = True
    # "auto" uses the diagonal recursion when the cost depends on u1 + u2 only
    control_search: str = "auto"
    # False forces phi = 1 (risk-only problem)
    ambiguity: bool = True

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.tol > 0 or not self.eps_div > 0:
            raise ConfigError("tol and eps_div must be positive")
        if self.control_stride < 1 or self.max_iters < 1:
            raise ConfigError("control_stride and max_iters must be >= 1")
        if self.control_search not in ("auto", "direct", "diagonal"):
            raise ConfigError(f"unknown control_search {self.control_search!r}")


@dataclass
class PolicyBundle:
    u1: Field
    u2: Field
    phi_hat: np.ndarray
    delta_tilde: Field
    k: np.ndarray = None
    l: np.ndarray = None


@dataclass
class SolveReport:
    iterations: int
    final_error: float
    converged: bool
    stability_ok: bool
    residual_inf: float
    boundary_flag: bool = False
    saturation_flag: bool = False
    wall_time: float = 0.0
    error_history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        d = asdict(self)
        d.pop("error_history")
        return d

    def to_text(self):
        return "\n".join(f"{k}={fmt(v) if isinstance(v, float) else v}"
                         for k, v in self.as_dict().items()) + "\n"


class Discretization:
    """Precomputed coefficient arrays for one (model, grid, quadrature, risk) tuple."""

    def __init__(self, model, grid, quad, params):
        if model.dim != grid.dim:
            raise ConfigError(f"model dimension {model.dim} != grid dimension {grid.dim}")
        self.model, self.grid, self.quad, self.params = model, grid, quad, params
        X1, X2 = grid.mesh()
        X1 = X1.reshape(-1, 1) if grid.dim == 1 else X1
        X2 = X2.reshape(-1, 1) if grid.dim == 1 else X2
        shape = X1.shape
        a1, a2 = model.drift(X1, X2)
        self.A1 = np.ascontiguousarray(np.broadcast_to(a1, shape) / grid.h1, dtype=float)
        self.A2 = (np.zeros(shape) if grid.dim == 1
                   else np.ascontiguousarray(np.broadcast_to(a2, shape) / grid.h2, dtype=float))
        f = np.broadcast_to(model.disutility(X1, X2), shape)
        if np.any(f < 0):
            raise ConfigError("disutility must be nonnegative")
        self.FP = np.ascontiguousarray(f ** params.p, dtype=float)

        b1, b2 = model.jump_gain(X1, X2)
        z = np.asarray(quad.nodes, dtype=float)
        t1 = np.clip(X1[..., None] + np.broadcast_to(b1, shape)[..., None] * z, 0, grid.x1_max)
        self.ti, self.wx = cell_index(t1, grid.h1, grid.n1)
        if grid.dim == 1:
            self.tj = np.zeros_like(self.ti)
            self.wy = np.zeros_like(self.wx)
        else:
            t2 = np.clip(X2[..., None] + np.broadcast_to(b2, shape)[..., None] * z,
                         0, grid.x2_max)
            self.tj, self.wy = cell_index(t2, grid.h2, grid.n2)
        self.qw = np.ascontiguousarray(quad.weights, dtype=float)

        k = np.arange(grid.n1 + 1) * grid.h1
        l = np.arange(grid.n2 + 1) * grid.h2 if grid.dim == 2 else np.zeros(1)
        # a cost of u1 + u2 alone on a square mesh gives a table indexed by k + l
        self.diagonal_ok = (grid.dim == 2 and model.harvest and grid.h1 == grid.h2
                            and model.cost_of_total is not None)
        if self.diagonal_ok:
            s = np.arange(grid.n1 + grid.n2 + 1) * grid.h1
            self.Gs = np.ascontiguousarray(
                np.maximum(model.cost_of_total(s), 0.0) ** params.p, dtype=float)
            self.Gp = np.ascontiguousarray(
                self.Gs[np.add.outer(np.arange(grid.n1 + 1), np.arange(grid.n2 + 1))])
        else:
            U1, U2 = np.meshgrid(k, l, indexing="ij")
            g = np.broadcast_to(model.cost(U1, U2), U1.shape)
            self.Gp = np.ascontiguousarray(np.maximum(g, 0.0) ** params.p, dtype=float)
            self.Gs = np.zeros(1)
        # pruning is valid only for a cost table nondecreasing along both axes
        self.monotone_cost = bool(np.all(np.diff(self.Gp, axis=0) >= 0)
                                  and np.all(np.diff(self.Gp, axis=1) >= 0))

    def use_diagonal(self, config):
        if config.control_search == "direct" or self.params.lambda_Z == 0:
            return False
        ok = self.diagonal_ok and config.control_stride == 1
        if config.control_search == "diagonal" and not ok:
            raise ConfigError("diagonal control search needs a square 2D grid, a cost of "
                              "u1 + u2 and control_stride == 1")
        return ok

    @property
    def shape(self):
        return self.A1.shape

    def fp_range(self):
        return float(self.FP.min()), float(self.FP.max())

    def _args(self, config):
        p = self.params
        return (self.A1, self.A2, self.FP, self.Gp, self.ti, self.tj, self.wx, self.wy, self.qw,
                p.delta, p.lambda_N, p.lambda_Z, p.psi, config.eps_div, config.ambiguity,
                config.control_stride, self.model.harvest)

    def _prune(self, config):
        return config.prune and self.monotone_cost

    def to2d(self, values):
        return np.ascontiguousarray(np.asarray(values, dtype=float).reshape(self.shape))

    def sweep(self, F, config):
        if self.use_diagonal(config):
            p = self.params
            return K.sweep_diagonal(F, self.A1, self.A2, self.FP, self.Gs, self.ti, self.tj,
                                    self.wx, self.wy, self.qw, p.delta, p.lambda_N, p.lambda_Z,
                                    p.psi, config.eps_div, config.ambiguity, config.gamma)
        return K.sweep(F, *self._args(config), self._prune(config), config.gamma)

    def _given(self, F, config):
        if self.use_diagonal(config):
            return (True, *K.diagonal_field(F, self.Gs))
        z = np.zeros((1, 1))
        zi = np.zeros((1, 1), dtype=np.int64)
        return False, z, zi, zi

    def extract(self, F, config):
        F2 = self.to2d(F)
        return K.extract(F2, *self._args(config), self._prune(config), *self._given(F2, config))

    def residual(self, F, config, truncated=False, omega=0.0):
        A1, A2, FP, Gp, ti, tj, wx, wy, qw, *rest = self._args(config)
        F2 = self.to2d(F)
        given, GV, _, _ = self._given(F2, config)
        if not given:
            GV = np.zeros(F2.shape)
        G = K.residual_field(F2, A1, A2, Gp, ti, tj, wx, wy, qw, *rest,
                             self._prune(config), truncated, float(omega), given, GV)
        return G - FP

    def node(self, F, i, j, config):
        """``(H, C, k, l, boundary_flag, saturated, phi)`` at vertex (i, j)."""
        phi = np.empty(len(self.qw))
        A1, A2, FP, Gp, ti, tj, wx, wy, qw, d, lN, lZ, psi, eps, rob, stride, harv = \
            self._args(config)
        F2 = self.to2d(F)
        CM, RM = K.prefix_minima(F2)
        out = K.assemble_node(F2, i, j, A1, A2, FP, Gp, ti, tj, wx, wy, qw, d, lN, lZ, psi,
                              eps, rob, stride, harv, CM, RM, self._prune(config), phi)
        return (*out, phi)


def omega_lower_bound(disc):
    lo, hi = disc.fp_range()
    return (hi - lo) / disc.params.delta


def stability_ok(F, disc, slack=1e-12):
    lo, hi = disc.fp_range()
    dF = disc.params.delta * np.asarray(F)
    tol = slack * max(hi, 1.0)
    return bool(np.all(dF >= lo - tol) and np.all(dF <= hi + tol))


def solve(model, grid, quad, params, config=SolverConfig(), disc=None, callback=None):
    """Run the fast-sweeping iteration to convergence.

    Returns ``(Field, PolicyBundle, SolveReport)``.  Non-convergence is reported
    through ``SolveReport.converged``; a non-finite value raises
    ``NumericalError`` naming the vertex.
    """
    disc = disc or Discretization(model, grid, quad, params)
    if config.omega_trunc is not None and not config.omega_trunc > omega_lower_bound(disc):
        raise ConfigError(f"omega_trunc={config.omega_trunc} must exceed "
                          f"{omega_lower_bound(disc):.6g}")
    t0 = time.perf_counter()
    init = config.init_value
    if init is None:
        init = disc.fp_range()[1] / params.delta
    F = np.full(disc.shape, float(init))
    history = []
    bflag = sflag = False
    converged = False
    err = np.inf
    n = 0
    for n in range(1, config.max_iters + 1):
        err, bi, bj, bf, sf = disc.sweep(F, config)
        bflag |= bf
        sflag |= sf
        history.append(err)
        if bi >= 0:
            vertex = (bi,) if grid.dim == 1 else (bi, bj)
            raise NumericalError(f"non-finite value at vertex {vertex} in sweep {n}", vertex)
        if callback is not None:
            callback(n, err)
        if err < config.tol:
            converged = True
            break

    values = F[:, 0].copy() if grid.dim == 1 else F
    policy = _policy(disc, F, config)
    if config.omega_trunc is not None:
        res = disc.residual(F, config, truncated=True, omega=config.omega_trunc)
    else:
        res = disc.residual(F, config)
    report = SolveReport(
        iterations=n, final_error=float(err), converged=converged,
        stability_ok=stability_ok(F, disc), residual_inf=float(np.abs(res).max()),
        boundary_flag=bool(bflag), saturation_flag=bool(sflag),
        wall_time=time.perf_counter() - t0, error_history=history)
    return Field(grid, values), policy, report


def _policy(disc, F, config):
    grid = disc.grid
    _, Kk, Ll, PHI, DT = disc.extract(F, config)
    u1 = Kk * grid.h1
    u2 = Ll * grid.h2 if grid.dim == 2 else np.zeros_like(u1, dtype=float)
    if grid.dim == 1:
        u1, u2, DT, PHI, Kk, Ll = u1[:, 0], u2[:, 0], DT[:, 0], PHI[:, 0], Kk[:, 0], Ll[:, 0]
    return PolicyBundle(Field(grid, u1), Field(grid, u2), PHI, Field(grid, DT), Kk, Ll)


def residual(field, model, grid, quad, params, config=SolverConfig()):
    """Per-vertex ``G(F) - f^p`` of the untruncated monotone form."""
    disc = Discretization(model, grid, quad, params)
    return Field(grid, disc.residual(field.values, config).reshape(grid.shape))


def residual_truncated(field, model, grid, quad, params, omega_trunc, config=SolverConfig()):
    """Per-vertex ``G'(F) - f^p`` of the truncated auxiliary form."""
    disc = Discretization(model, grid, quad, params)
    bound = omega_lower_bound(disc)
    if not omega_trunc > bound:
        raise ConfigError(f"omega_trunc={omega_trunc} must exceed {bound:.6g}")
    G = disc.residual(field.values, config, truncated=True, omega=omega_trunc)
    return Field(grid, G.reshape(grid.shape))


def _vertex(field, i, j):
    return (i, 0) if field.grid.dim == 1 else (i, j)


def upwind_drift_term(field, i, j, model):
    """``(H contribution, C contribution, flagged)`` of the drift at (i, j)."""
    grid = field.grid
    disc = _light_disc(model, grid)
    F = disc.to2d(field.values)
    return K.upwind_node(F, *_vertex(field, i, j), disc.A1, disc.A2)


def control_min(field, i, j, model, p=1.0, stride=1):
    """``(min value, (k, l))`` of the intervention search at (i, j)."""
    grid = field.grid
    F = np.ascontiguousarray(field.values.reshape(grid.n1 + 1, -1))
    k = np.arange(grid.n1 + 1) * grid.h1
    l = np.arange(grid.n2 + 1) * grid.h2 if grid.dim == 2 else np.zeros(1)
    U1, U2 = np.meshgrid(k, l, indexing="ij")
    Gp = np.ascontiguousarray(np.broadcast_to(model.cost(U1, U2), U1.shape) ** p, dtype=float)
    CM, RM = K.prefix_minima(F)
    v, bk, bl = K.control_node(F, *_vertex(field, i, j), Gp, stride, model.harvest,
                               CM, RM, False)
    return v, (bk, bl)


def robust_jump_term(field, i, j, model, quad, params, eps_div=1e-12):
    """``(H contribution, C contribution, phi)`` of the jump term at (i, j)."""
    disc = Discretization(model, field.grid, quad, params)
    if params.lambda_N == 0:
        return 0.0, 0.0, np.ones(len(quad))
    F = disc.to2d(field.values)
    phi = np.empty(len(quad))
    h, c, _ = K.jump_node(F, *_vertex(field, i, j), disc.ti, disc.tj, disc.wx, disc.wy,
                          disc.qw, params.psi, eps_div, True, phi)
    return params.lambda_N * h, params.lambda_N * c, phi


def local_update(field, i, j, model, quad, params, config=SolverConfig()):
    """``H/C`` at (i, j) with phi lagged at the given field."""
    disc = Discretization(model, field.grid, quad, params)
    H, C, *_ = disc.node(field.values, *_vertex(field, i, j), config)
    return H / C


def _light_disc(model, grid):
    X1, X2 = grid.mesh()
    X1 = X1.reshape(-1, 1) if grid.dim == 1 else X1
    X2 = X2.reshape(-1, 1) if grid.dim == 1 else X2
    a1, a2 = model.drift(X1, X2)

    class _D:
        A1 = np.ascontiguousarray(np.broadcast_to(a1, X1.shape) / grid.h1, dtype=float)
        A2 = (np.zeros(X1.shape) if grid.dim == 1 else
              np.ascontiguousarray(np.broadcast_to(a2, X1.shape) / grid.h2, dtype=float))

        @staticmethod
        def to2d(v):
            return np.ascontiguousarray(np.asarray(v, float).reshape(X1.shape))

    return _D


def write_outputs(out_dir, field, policy, report, extra=None):
    """``value.csv``, ``policy.csv``, ``report.json`` and ``report.txt``."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    p = (extra or {}).get("p", 1.0)
    F = field.values
    write_vertex_csv(out / "value.csv", grid,
                     {"F": F, "Psi": np.power(np.maximum(F, 0.0), 1.0 / p)})
    write_vertex_csv(out / "policy.csv", grid,
                     {"u1": policy.u1.values, "u2": policy.u2.values,
                      "delta_tilde": policy.delta_tilde.values})
    payload = dict(report.as_dict(), **(extra or {}))
    (out / "report.json").write_text(json.dumps(payload, indent=2, default=_jsonable))
    (out / "report.txt").write_text(report.to_text())


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


class RobustHJBSolver(BaseEstimator):
    """Estimator-style wrapper: ``fit`` solves, ``predict`` interpolates ``F``.

    ``fit`` takes the dynamics model; there is no training data in the usual
    sense, so ``X`` is the model and ``y`` is ignored.
    """

    def __init__(self, n1=100, n2=100, x1_max=1.0, x2_max=1.0, M=100, p=2.0, psi=1.0,
                 delta=0.1, lambda_N=0.0, lambda_Z=0.0, gamma=0.5, tol=1e-10,
                 max_iters=100_000, control_stride=1, ambiguity=True):
        self.n1 = n1
        self.n2 = n2
        self.x1_max = x1_max
        self.x2_max = x2_max
        self.M = M
        self.p = p
        self.psi = psi
        self.delta = delta
        self.lambda_N = lambda_N
        self.lambda_Z = lambda_Z
        self.gamma = gamma
        self.tol = tol
        self.max_iters = max_iters
        self.control_stride = control_stride
        self.ambiguity = ambiguity

    def fit(self, X, y=None):
        model = X
        if model.dim == 1:
            grid = Grid.line(self.x1_max, self.n1)
        else:
            grid = Grid(self.x1_max, self.n1, self.x2_max, self.n2)
        params = RiskParams(self.p, self.psi, self.delta, self.lambda_N, self.lambda_Z)
        config = SolverConfig(gamma=self.gamma, tol=self.tol, max_iters=self.max_iters,
                              control_stride=self.control_stride, ambiguity=self.ambiguity)
        quad = build_quadrature(model.jumps, self.M)
        self.value_, self.policy_, self.report_ = solve(model, grid, quad, params, config)
        self.grid_ = grid
        return self

    def predict(self, X):
        """Interpolated value at states ``X`` of shape ``(n,)`` or ``(n, 2)``."""
        if not hasattr(self, "value_"):
            raise AttributeError("call fit before predict")
        X = np.asarray(X, dtype=float)
        if self.grid_.dim == 1:
            return np.asarray(self.value_(X.reshape(-1)))
        X = X.reshape(-1, 2)
        return np.asarray(self.value_(X[:, 0], X[:, 1]))

    def policy_at(self, X):
        """Nearest-vertex harvest ``(u1, u2)`` at states ``X`` of shape ``(n, 2)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        g = self.grid_
        i = np.clip(np.rint(X[:, 0] / g.h1), 0, g.n1).astype(int)
        j = np.clip(np.rint(X[:, 1] / g.h2), 0, g.n2).astype(int)
        return self.policy_.u1.values[i, j], self.policy_.u2.values[i, j]
