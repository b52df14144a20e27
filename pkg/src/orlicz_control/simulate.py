"""Monte Carlo evaluation of the discounted objective under fixed policies.

Paths are advanced in lockstep: every path owns its next event time, the
drift and the discount/cost integrals are integrated with RK4 up to that
time, and the event (exogenous jump or intervention) is then applied.  The
distorted exogenous intensity is handled by thinning against an upper bound.
"""
import csv
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .grid import build_quadrature, fmt
from .risk_core import EXP_CAP


@dataclass(frozen=True)
class SimConfig:
    T: float
    paths: int = 10_000
    seed: int = 0
    state0: tuple = (0.5, 0.0)
    policy: Any = "null"
    dt: float = 0.1
    block_size: int = 32768
    M: int = 20_000
    truncation_bound: Optional[float] = None

    def __post_init__(self):
        if not self.T > 0 or self.paths < 1:
            raise ValueError("T and paths must be positive")
        if not self.dt > 0 or self.block_size < 1:
            raise ValueError("dt and block_size must be positive")


class NullPolicy:
    """No harvest and no distortion."""

    distorted = False
    # phi does not vary with the state
    constant_phi = False

    def controls(self, x1, x2):
        z = np.zeros_like(x1)
        return z, z.copy()

    def phi(self, x1, x2):
        return None

    def delta_tilde(self, x1, x2):
        return np.zeros_like(x1)


class ExactPolicy(NullPolicy):
    """State-independent worst-case distortion of the power solution.

    ``delta_tilde`` is the closed-form added discount of the benchmark.
    """

    distorted = True
    constant_phi = True

    def __init__(self, sol, quad):
        from .exact import growth_factor

        self.sol = sol
        psi = sol.params.risk.psi
        self._phi = np.exp(np.clip(psi * (growth_factor(quad.nodes, sol.alpha_p) - 1.0),
                                   -EXP_CAP, EXP_CAP))
        self._dt = sol.delta_bar

    def phi(self, x1, x2):
        return np.broadcast_to(self._phi, (len(x1), len(self._phi)))

    def delta_tilde(self, x1, x2):
        return np.full_like(x1, self._dt)


class GridPolicy(NullPolicy):
    """Nearest-vertex lookup of a solved policy bundle."""

    distorted = True

    def __init__(self, bundle, grid):
        self.bundle, self.grid = bundle, grid

    def _idx(self, x1, x2):
        g = self.grid
        i = np.clip(np.rint(x1 / g.h1), 0, g.n1).astype(np.int64)
        if g.dim == 1:
            return (i,)
        j = np.clip(np.rint(x2 / g.h2), 0, g.n2).astype(np.int64)
        return i, j

    def controls(self, x1, x2):
        idx = self._idx(x1, x2)
        return self.bundle.u1.values[idx], self.bundle.u2.values[idx]

    def phi(self, x1, x2):
        return self.bundle.phi_hat[self._idx(x1, x2)]

    def delta_tilde(self, x1, x2):
        return self.bundle.delta_tilde.values[self._idx(x1, x2)]


class ForcedUnitPhi(NullPolicy):
    """Wraps a policy's controls but keeps the nominal measure (phi = 1)."""

    def __init__(self, inner):
        self.inner = inner

    def controls(self, x1, x2):
        return self.inner.controls(x1, x2)


@dataclass
class PathRecord:
    times: np.ndarray
    states: np.ndarray
    kinds: list
    jump_sizes: np.ndarray
    cost: float
    n_jumps: int


def _resolve_policy(policy, model, params, quad):
    if isinstance(policy, str):
        if policy == "null":
            return NullPolicy()
        if policy == "exact":
            from .exact import LinearModelParams, compute_A

            prm = LinearModelParams(model.params["a"], model.params["alpha"], params, model.jumps)
            return ExactPolicy(compute_A(prm), quad)
        raise ValueError(f"unknown policy {policy!r}")
    return policy


class _Sim:
    """Shared state of a block of paths."""

    def __init__(self, model, params, config, policy, quad, rng, n):
        self.model, self.params, self.cfg, self.policy = model, params, config, policy
        self.quad, self.rng, self.n = quad, rng, n
        x0 = np.broadcast_to(np.asarray(config.state0, dtype=float), (2,))
        self.x1 = np.full(n, x0[0])
        self.x2 = np.full(n, x0[1] if model.dim == 2 else 0.0)
        self.t = np.zeros(n)
        self.L = np.zeros(n)
        self.J = np.zeros(n)
        self.failed = np.zeros(n, dtype=bool)
        self.n_jumps = np.zeros(n, dtype=np.int64)
        # thinning bound for the distorted exogenous rate
        lam = params.lambda_N
        if policy.distorted and lam > 0:
            self.lam_bar = lam * self._max_phi_mass()
        else:
            self.lam_bar = lam
        self.rate = self.lam_bar + params.lambda_Z
        w = quad.weights
        if policy.distorted and policy.constant_phi:
            w = policy.phi(self.x1[:1], self.x2[:1])[0] * w
        self.cdf = np.cumsum(w) / np.sum(w)
        self.t_next = self._draw_wait(np.arange(n))

    def _max_phi_mass(self):
        pol = self.policy
        if isinstance(pol, GridPolicy):
            return float((pol.bundle.phi_hat * self.quad.weights).sum(axis=-1).max())
        phi = pol.phi(self.x1[:1], self.x2[:1])
        return float((phi * self.quad.weights).sum(axis=-1).max())

    def _draw_wait(self, idx):
        if self.rate == 0:
            return np.full(len(idx), np.inf)
        return self.t[idx] + self.rng.exponential(1.0 / self.rate, len(idx))

    def _rhs(self, x1, x2, L):
        a1, a2 = self.model.drift(x1, x2)
        a1 = np.broadcast_to(a1, x1.shape)
        a2 = np.broadcast_to(a2, x1.shape) if self.model.dim == 2 else np.zeros_like(x1)
        dL = self.params.delta + self.policy.delta_tilde(x1, x2)
        fp = np.broadcast_to(self.model.disutility(x1, x2), x1.shape) ** self.params.p
        return a1, a2, dL, np.exp(-L) * fp

    def step(self, idx, h):
        x1, x2, L = self.x1[idx], self.x2[idx], self.L[idx]
        k1 = self._rhs(x1, x2, L)
        k2 = self._rhs(x1 + 0.5 * h * k1[0], x2 + 0.5 * h * k1[1], L + 0.5 * h * k1[2])
        k3 = self._rhs(x1 + 0.5 * h * k2[0], x2 + 0.5 * h * k2[1], L + 0.5 * h * k2[2])
        k4 = self._rhs(x1 + h * k3[0], x2 + h * k3[1], L + h * k3[2])
        inc = [(a + 2 * b + 2 * c + d) / 6.0 * h for a, b, c, d in zip(k1, k2, k3, k4)]
        self.x1[idx] = x1 + inc[0]
        self.x2[idx] = x2 + inc[1]
        self.L[idx] = L + inc[2]
        self.J[idx] += inc[3]
        self.t[idx] += h

    def event(self, idx, log=None):
        """Apply events at paths ``idx`` (which sit exactly on their event time)."""
        prm, rng = self.params, self.rng
        u = rng.random(len(idx))
        is_z = u * self.rate < prm.lambda_Z
        zi = idx[is_z]
        if len(zi):
            u1, u2 = self.policy.controls(self.x1[zi], self.x2[zi])
            u1, u2 = np.asarray(u1, float), np.asarray(u2, float)
            g = np.broadcast_to(self.model.cost(u1, u2), zi.shape) ** prm.p
            self.J[zi] += np.exp(-self.L[zi]) * g
            c1, c2 = self.model.intervention(self.x1[zi], self.x2[zi], u1, u2)
            self.x1[zi] += c1
            if self.model.dim == 2:
                self.x2[zi] += c2
            if log is not None:
                log.extend(("Z", int(k), 0.0) for k in zi)
        ni = idx[~is_z]
        if len(ni):
            phi = self.policy.phi(self.x1[ni], self.x2[ni]) if self.policy.distorted else None
            w = self.quad.weights
            if phi is None or self.policy.constant_phi:
                accept = np.ones(len(ni), dtype=bool)
                probs = None
            else:
                mass = (phi * w).sum(axis=-1)
                accept = rng.random(len(ni)) * self.lam_bar < prm.lambda_N * mass
                probs = phi * w / mass[:, None]
            ai = ni[accept]
            if len(ai):
                if probs is None:
                    m = np.minimum(np.searchsorted(self.cdf, rng.random(len(ai)), side="right"),
                                   len(w) - 1)
                else:
                    cum = np.cumsum(probs[accept], axis=-1)
                    r = rng.random(len(ai))[:, None] * cum[:, -1:]
                    m = np.minimum((cum < r).sum(axis=-1), len(w) - 1)
                z = self.quad.nodes[m]
                b1, b2 = self.model.jump_gain(self.x1[ai], self.x2[ai])
                self.x1[ai] += np.broadcast_to(b1, ai.shape) * z
                if self.model.dim == 2:
                    self.x2[ai] += np.broadcast_to(b2, ai.shape) * z
                self.n_jumps[ai] += 1
                if log is not None:
                    log.extend(("N", int(k), float(zz)) for k, zz in zip(ai, z))
        self.t_next[idx] = self._draw_wait(idx)

    def run(self, log=None, trace=None):
        T, dt = self.cfg.T, self.cfg.dt
        active = np.arange(self.n)
        while len(active):
            h = np.minimum(np.minimum(dt, self.t_next[active] - self.t[active]),
                           T - self.t[active])
            self.step(active, h)
            bad = ~(np.isfinite(self.x1[active]) & np.isfinite(self.x2[active])
                    & np.isfinite(self.J[active]))
            self.failed[active[bad]] = True
            active = active[~bad]
            hit = active[(self.t_next[active] - self.t[active] <= 0)
                         & (self.t[active] < T)]
            if len(hit):
                # land exactly on the event time before applying it
                self.t[hit] = self.t_next[hit]
                self.event(hit, log)
                if trace is not None:
                    trace(self, hit)
            active = active[self.t[active] < T]
        return self.J


def simulate_path(model, params, config, policy=None, quad=None):
    """Single path with its event log: times, post-event states, kinds, jump sizes."""
    quad = quad or build_quadrature(model.jumps, config.M)
    policy = _resolve_policy(policy if policy is not None else config.policy, model, params, quad)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0])))
    sim = _Sim(model, params, config, policy, quad, rng, 1)
    log, times, states = [], [0.0], [(sim.x1[0], sim.x2[0])]

    def trace(s, hit):
        times.append(float(s.t[0]))
        states.append((float(s.x1[0]), float(s.x2[0])))

    sim.run(log, trace)
    return PathRecord(np.array(times), np.array(states), [e[0] for e in log],
                      np.array([e[2] for e in log]), float(sim.J[0]), int(sim.n_jumps[0]))


@dataclass
class Estimate:
    mean: float
    stderr: float
    paths: int
    failed: int
    T: float
    truncation_bound: Optional[float]
    jump_counts: np.ndarray = None
    samples: np.ndarray = None


def estimate_value(model, params, config, policy=None, quad=None, keep_samples=False):
    """Mean and standard error of the discounted objective over ``config.paths`` paths.

    Paths are grouped in fixed blocks; block ``b`` draws from the stream
    ``SeedSequence([seed, b])``, so results do not depend on execution order.
    """
    quad = quad or build_quadrature(model.jumps, config.M)
    policy = _resolve_policy(policy if policy is not None else config.policy, model, params, quad)
    values, counts, failed = [], [], 0
    for b, start in enumerate(range(0, config.paths, config.block_size)):
        n = min(config.block_size, config.paths - start)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, b])))
        sim = _Sim(model, params, config, policy, quad, rng, n)
        J = sim.run()
        failed += int(sim.failed.sum())
        values.append(J[~sim.failed])
        counts.append(sim.n_jumps[~sim.failed])
    if failed > 0.01 * config.paths:
        raise RuntimeError(f"{failed} of {config.paths} paths failed; estimate refused")
    vals = np.concatenate(values)
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return Estimate(float(vals.mean()), se, len(vals), failed, config.T, config.truncation_bound,
                    np.concatenate(counts), vals if keep_samples else None)


def exact_horizon(sol, rel_tol=1e-3):
    """Horizon whose discarded tail is ``rel_tol`` of the exact value.

    Along the distorted dynamics the expected discounted integrand decays
    like ``exp(-t / A)``.
    """
    return sol.A * np.log(1.0 / rel_tol)


def generic_horizon(delta, fp_max, abs_tol):
    """Smallest T with ``exp(-delta T) fp_max / delta <= abs_tol``."""
    return max(np.log(fp_max / (delta * abs_tol)) / delta, 0.0)


def write_estimate_csv(path, state, est):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "mean", "stderr", "paths", "T", "truncation_bound"])
        tb = "" if est.truncation_bound is None else fmt(est.truncation_bound)
        w.writerow([fmt(state[0]), fmt(state[1]), fmt(est.mean), fmt(est.stderr), est.paths,
                    fmt(est.T), tb])
