"""Robust Orlicz-risk primitives: divergence penalty, worst-case distortion and
the uncertainty-induced discount rate."""
from dataclasses import dataclass
from typing import Callable

import numpy as np

# exponent cap applied before exp() in the worst-case distortion
EXP_CAP = 700.0


@dataclass(frozen=True)
class RiskParams:
    """Risk and ambiguity knobs of the controlled problem.

    p is the power of the certainty equivalent, psi the uncertainty aversion,
    delta the discount rate and lambda_N / lambda_Z the intensities of the
    exogenous and intervention jump processes.
    """

    p: float = 2.0
    psi: float = 1.0
    delta: float = 0.1
    lambda_N: float = 0.0
    lambda_Z: float = 0.0

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not self.psi > 0:
            raise ValueError(f"psi must be > 0, got {self.psi}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not (self.lambda_N >= 0 and self.lambda_Z >= 0):
            raise ValueError("jump intensities must be nonnegative")


@dataclass(frozen=True)
class JumpDistribution:
    """Jump-size density ``density`` supported on ``[z_lo, z_hi]``.

    ``z_lo = -1`` is allowed (total washout under proportional jumps).
    """

    density: Callable
    z_lo: float
    z_hi: float

    def __post_init__(self):
        if self.z_lo < -1:
            raise ValueError(f"z_lo must be >= -1, got {self.z_lo}")
        if not self.z_hi >= self.z_lo or not np.isfinite(self.z_hi):
            raise ValueError("need z_lo <= z_hi < inf")

    def mass(self, tol=1e-10):
        from scipy.integrate import quad

        if self.z_hi == self.z_lo:
            return 1.0
        return quad(self.density, self.z_lo, self.z_hi, epsabs=tol, limit=200)[0]


def uniform_jumps(z_lo=-1.0, z_hi=0.0):
    width = z_hi - z_lo

    def density(z):
        z = np.asarray(z, dtype=float)
        inside = (z >= z_lo) & (z <= z_hi)
        out = np.where(inside, 1.0 / width, 0.0)
        return out if out.ndim else float(out)

    return JumpDistribution(density, z_lo, z_hi)


def triangular_jumps():
    """Density 2(1 - z) on [0, 1]: small disturbances are more likely."""

    def density(z):
        z = np.asarray(z, dtype=float)
        out = np.where((z >= 0) & (z <= 1), 2.0 * (1.0 - z), 0.0)
        return out if out.ndim else float(out)

    return JumpDistribution(density, 0.0, 1.0)


def divergence(phi):
    """Relative-entropy penalty ``phi ln phi - phi + 1`` (zero iff phi = 1)."""
    phi_arr = np.asarray(phi, dtype=float)
    if np.any(~(phi_arr > 0)):
        raise ValueError("divergence is defined for phi > 0 only")
    out = phi_arr * np.log(phi_arr) - phi_arr + 1.0
    return out if out.ndim else float(out)


def rho(x, y):
    """``x (1 - exp(y / x))``: nondecreasing in x, strictly decreasing in y."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr > 0)):
        raise ValueError("rho requires x > 0")
    out = x_arr * (1.0 - np.exp(np.asarray(y, dtype=float) / x_arr))
    return out if out.ndim else float(out)


def omega(F_jump, F_base):
    """Relative value increment of a jump, ``(F_jump - F_base) / F_base``.

    A non-positive base value violates the positivity of the value function
    and is an error here; the solver applies its own division guard.
    """
    F_base = np.asarray(F_base, dtype=float)
    if np.any(~(F_base > 0)):
        raise ValueError("omega requires a strictly positive base value")
    out = (np.asarray(F_jump, dtype=float) - F_base) / F_base
    return out if out.ndim else float(out)


def worst_case_phi(omega_value, psi, return_saturated=False):
    """Maximising distortion ``exp(psi * omega)``.

    The exponent is clipped to +-EXP_CAP; with ``return_saturated`` the
    clipping mask is returned as well.
    """
    if not psi > 0:
        raise ValueError("psi must be > 0")
    expo = psi * np.asarray(omega_value, dtype=float)
    saturated = np.abs(expo) > EXP_CAP
    out = np.exp(np.clip(expo, -EXP_CAP, EXP_CAP))
    if not out.ndim:
        out, saturated = float(out), bool(saturated)
    if return_saturated:
        return out, saturated
    return out


def robust_discount(omega_samples, quadrature, params):
    """Uncertainty-induced discount ``(lambda_N/psi) sum (1 - exp(psi w_m)) p_m``."""
    weights = np.asarray(quadrature.weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("quadrature weights must sum to 1")
    if params.lambda_N == 0:
        return 0.0
    phi = worst_case_phi(np.asarray(omega_samples, dtype=float), params.psi)
    return float(params.lambda_N / params.psi * np.sum((1.0 - phi) * weights))


def sup_objective(phi, F_jump, F_base, weights, psi):
    """Objective inside the sup over distortions, evaluated at one state.

    ``-psi^-1 sum D(phi_m) p_m F_base + sum (F_jump_m - F_base) phi_m p_m``.
    """
    phi = np.asarray(phi, dtype=float)
    weights = np.asarray(weights, dtype=float)
    F_jump = np.asarray(F_jump, dtype=float)
    return float(-np.sum(divergence(phi) * weights) * F_base / psi
                 + np.sum((F_jump - F_base) * phi * weights))
