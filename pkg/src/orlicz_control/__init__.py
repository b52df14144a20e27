"""Robust optimal harvesting under Orlicz-risk ambiguity.

HJB finite-difference solver, closed-form benchmark, Monte Carlo oracle and
station calibration for a controlled two-population jump model.
"""
from .risk_core import RiskParams, JumpDistribution, divergence, worst_case_phi
from .grid import Grid, Field, JumpQuadrature, build_quadrature, interpolate
from .dynamics import DynamicsModel, StationParameters, MODELS
from .exact import LinearModelParams, compute_A, exact_value
from .hjb import RobustHJBSolver, SolverConfig, solve

__version__ = "0.1.0"
