"""Closed-form benchmark for the one-dimensional linear-growth model.

With drift ``a x``, proportional jumps and disutility ``x**alpha`` the HJB
equation has the power solution ``F(x) = A x**(alpha p)`` and the worst-case
distortion ``exp(psi ((1+z)**(alpha p) - 1))`` does not depend on the state.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad

from .risk_core import JumpDistribution, RiskParams, divergence, uniform_jumps

QUAD_TOL = 1e-10


class IllPosedError(ValueError):
    """Discounting is too weak for the power solution to exist (A <= 0)."""


@dataclass(frozen=True)
class LinearModelParams:
    a: float = 0.02
    alpha: float = 1.0
    risk: RiskParams = RiskParams(p=2.0, psi=0.01, delta=0.1, lambda_N=0.05)
    jumps: JumpDistribution = None

    def __post_init__(self):
        if not self.a > 0 or not self.alpha > 0:
            raise ValueError("a and alpha must be positive")
        if self.jumps is None:
            object.__setattr__(self, "jumps", uniform_jumps(-1.0, 0.0))

    @property
    def alpha_p(self):
        return self.alpha * self.risk.p


@dataclass(frozen=True)
class ExactSolution:
    A: float
    alpha_p: float
    delta_bar: float
    params: LinearModelParams = None

    def __post_init__(self):
        if not self.A > 0:
            raise IllPosedError(f"A must be positive, got {self.A}")


def growth_factor(z, alpha_p):
    """``(1+z)**alpha_p`` evaluated through logs; zero where ``1+z < 1e-30``."""
    t = 1.0 + np.asarray(z, dtype=float)
    safe = np.where(t < 1e-30, 1.0, t)
    out = np.where(t < 1e-30, 0.0, np.exp(alpha_p * np.log(safe)))
    return out if out.ndim else float(out)


def _integrate(func, jumps):
    if jumps.z_hi == jumps.z_lo:
        return float(func(jumps.z_lo))
    val, _ = quad(lambda z: func(z) * jumps.density(z), jumps.z_lo, jumps.z_hi,
                  epsabs=QUAD_TOL, epsrel=1e-12, limit=500)
    return val


def _jump_integral(params):
    """``(lambda_N/psi) int (exp(psi w) - 1) P dz`` with ``w = (1+z)**ap - 1``."""
    r, ap = params.risk, params.alpha_p
    if r.lambda_N == 0:
        return 0.0
    integral = _integrate(lambda z: np.expm1(r.psi * (growth_factor(z, ap) - 1.0)),
                          params.jumps)
    return r.lambda_N / r.psi * integral


def denominator(params):
    r = params.risk
    return r.delta - params.alpha_p * params.a - _jump_integral(params)


def compute_A(params):
    """Coefficient A of the power solution together with the added discount."""
    den = denominator(params)
    if not den > 0:
        raise IllPosedError(
            f"insufficient discounting: delta - alpha p a - jump term = {den:.6g} <= 0")
    r, ap = params.risk, params.alpha_p
    if r.lambda_N == 0:
        delta_bar = 0.0
    else:
        delta_bar = r.lambda_N / r.psi * _integrate(
            lambda z: divergence(np.exp(r.psi * (growth_factor(z, ap) - 1.0))),
            params.jumps)
    return ExactSolution(1.0 / den, ap, delta_bar, params)


def exact_value(sol, x1):
    x1 = np.asarray(x1, dtype=float)
    if np.any(x1 < 0):
        raise ValueError("x1 must be nonnegative")
    out = sol.A * np.power(x1, sol.alpha_p)
    return out if out.ndim else float(out)


def exact_phi(sol, z, psi):
    z = np.asarray(z, dtype=float)
    if np.any(z <= -1):
        raise ValueError("exact_phi requires z > -1")
    out = np.exp(psi * (growth_factor(z, sol.alpha_p) - 1.0))
    return out if out.ndim else float(out)


def verification_identity(sol):
    """``delta + delta_bar - alpha p a - lambda_N int w e^{psi w} P dz``.

    Equals ``1/A`` for the power solution.
    """
    prm = sol.params
    r, ap = prm.risk, sol.alpha_p

    def integrand(z):
        w = growth_factor(z, ap) - 1.0
        return w * np.exp(r.psi * w)

    jump = r.lambda_N * _integrate(integrand, prm.jumps) if r.lambda_N else 0.0
    return r.delta + sol.delta_bar - ap * prm.a - jump


def pointwise_residual(sol, x1):
    """Residual of the HJB equation with the sup taken analytically.

    Evaluated at the power solution, with the jump integral by quadrature.
    """
    prm = sol.params
    r, ap = prm.risk, sol.alpha_p
    F = sol.A * x1 ** ap
    dF = sol.A * ap * x1 ** (ap - 1.0)
    if r.lambda_N:
        def integrand(z):
            Fj = sol.A * (x1 * (1.0 + z)) ** ap if z > -1 else 0.0
            return 1.0 - np.exp(r.psi * (Fj - F) / F)
        jump = -r.lambda_N / r.psi * _integrate(integrand, prm.jumps) * F
    else:
        jump = 0.0
    return jump - r.delta * F + prm.a * x1 * dF + x1 ** ap


def order_condition(params):
    """``a + lambda_N int e^{psi w} (1+z)**ap ln(1+z) P dz``; its sign fixes
    the monotonicity of A in alpha and p."""
    r, ap = params.risk, params.alpha_p

    def integrand(z):
        t = 1.0 + z
        if t < 1e-30:
            return 0.0
        g = t ** ap
        return np.exp(r.psi * (g - 1.0)) * g * np.log(t)

    jump = r.lambda_N * _integrate(integrand, params.jumps) if r.lambda_N else 0.0
    return params.a + jump


def _bumped(params, name, value):
    if name in ("a", "alpha"):
        return replace(params, **{name: value})
    return replace(params, risk=replace(params.risk, **{name: value}))


def _current(params, name):
    return getattr(params, name) if name in ("a", "alpha") else getattr(params.risk, name)


SENSITIVITY_PARAMS = ("delta", "a", "lambda_N", "psi", "alpha", "p")


def sensitivity_signs(params, bump=1e-4):
    """Central finite differences of A and a comparison against the
    monotonicity predictions.

    Returns ``{name: {"derivative", "predicted", "consistent", "error"}}``.
    ``predicted`` is one of ``"<0", ">0", "<=0", ">=0"`` or ``None`` when no
    prediction applies to the given jump support.
    """
    lo, hi = params.jumps.z_lo, params.jumps.z_hi
    cond = order_condition(params)
    predictions = {"delta": "<0", "a": ">0"}
    if hi <= 0:
        predictions.update(lambda_N="<=0", psi="<=0")
    elif lo >= 0:
        predictions.update(lambda_N=">=0", psi=">=0")
    if cond > 0:
        predictions.update(alpha=">0", p=">0")
    elif cond < 0:
        predictions.update(alpha="<0", p="<0")

    report = {"order_condition": cond}
    for name in SENSITIVITY_PARAMS:
        x0 = _current(params, name)
        step = bump * abs(x0) if x0 != 0 else bump
        if name == "p":
            # keep p >= 1 on both sides
            step = min(step, max(x0 - 1.0, 0.0)) or step
        entry = {"derivative": None, "predicted": predictions.get(name),
                 "consistent": None, "error": None}
        try:
            lo_x = x0 - step if not (name == "p" and x0 - step < 1) else x0
            hi_x = x0 + step
            A_hi = compute_A(_bumped(params, name, hi_x)).A
            A_lo = compute_A(_bumped(params, name, lo_x)).A
            deriv = (A_hi - A_lo) / (hi_x - lo_x)
            entry["derivative"] = deriv
            entry["consistent"] = _sign_ok(deriv, entry["predicted"])
        except (IllPosedError, ValueError) as exc:
            entry["error"] = str(exc)
        report[name] = entry
    return report


def _sign_ok(value, predicted):
    if predicted is None:
        return None
    return {"<0": value < 0, ">0": value > 0, "<=0": value <= 0, ">=0": value >= 0}[predicted]
