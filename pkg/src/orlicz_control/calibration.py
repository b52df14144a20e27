"""Least-squares calibration of the growing population's logistic model.

The model is advanced with one explicit Euler step per inter-survey interval
and fitted to normalised survey areas by multi-start bounded Nelder-Mead.
"""
import csv
import json
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from .dynamics import StationParameters, growing_drift, load_station_parameters

BOUNDS = ((0.0, 2.0), (0.0, 1.0), (0.0, 0.1), (1e-6, 1.0))


@dataclass(frozen=True)
class ObservationSeries:
    day_offsets: np.ndarray
    values: np.ndarray
    station_id: int = 0

    def __post_init__(self):
        t = np.asarray(self.day_offsets, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or len(t) < 2:
            raise ValueError("need matching 1-D times and values of length >= 2")
        if np.any(np.diff(t) <= 0):
            raise ValueError("day offsets must be strictly increasing")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("normalised observations must lie in [0, 1]")
        object.__setattr__(self, "day_offsets", t)
        object.__setattr__(self, "values", v)


@dataclass
class FitResult:
    params: StationParameters
    sse: float
    trajectory: np.ndarray
    per_point_error: np.ndarray
    mean_error: float
    station_id: int = 0
    improved: bool = True


def forward_euler(params, times, x0):
    """Trajectory at ``times`` from ``x0`` with one Euler step per interval."""
    t = np.asarray(times, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    r, d, a, Q = _unpack(params)
    out = np.empty(len(t))
    out[0] = x = float(x0)
    for n, dt in enumerate(np.diff(t), start=1):
        x = max(0.0, x + dt * float(growing_drift(x, r, d, a, Q)))
        out[n] = x
    return out


def _unpack(params):
    if isinstance(params, StationParameters):
        return params.r, params.d, params.alpha_src, params.Q
    return tuple(float(v) for v in params)


def sse(params, series):
    traj = forward_euler(params, series.day_offsets, series.values[0])
    return float(np.sum((traj - series.values) ** 2))


def error_table(params, series):
    """Per-point absolute errors and their mean over points after the first."""
    traj = forward_euler(params, series.day_offsets, series.values[0])
    err = np.abs(traj - series.values)
    return err, float(err[1:].mean())


def _batch_sse(thetas, times, y):
    """Vectorised SSE of many parameter rows (used for start screening)."""
    r, d, a, Q = thetas.T
    x = np.full(len(thetas), y[0])
    total = np.zeros(len(thetas))
    for n, dt in enumerate(np.diff(times), start=1):
        x = np.maximum(0.0, x + dt * growing_drift(x, r, d, a, Q))
        total += (x - y[n]) ** 2
    return total


def _station(theta):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return StationParameters(*[float(v) for v in theta])


def fit_station(series, n_starts=20, seed=0, bounds=BOUNDS, maxiter=4000, reference=None,
                screen=20000):
    """Multi-start Nelder-Mead over the box ``bounds``.

    The ``n_starts`` starts are the best points of a ``screen``-point Latin
    hypercube, plus ``reference`` when given.  Ties in SSE resolve to the
    lexicographically smallest parameter vector.
    """
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    t, y = series.day_offsets, series.values

    def objective(theta):
        traj = forward_euler(theta, t, y[0])
        return float(np.sum((traj - y) ** 2))

    span = hi - lo

    def scaled(u):
        # optimise on the unit box so all four parameters have comparable scale
        return objective(lo + np.clip(u, 0.0, 1.0) * span)

    # screen a large Latin hypercube and keep the n_starts best points
    pool = qmc.LatinHypercube(d=4, seed=seed).random(max(n_starts, screen))
    scores = _batch_sse(lo + pool * span, t, y)
    starts = pool[np.argsort(scores, kind="stable")[:n_starts]]
    if reference is not None:
        ref = (np.clip(np.asarray(_unpack(reference)), lo, hi) - lo) / span
        starts = np.vstack([ref, starts])
    unit = [(0.0, 1.0)] * 4
    opts = {"maxiter": maxiter, "xatol": 1e-10, "fatol": 1e-16}
    initial_best = min(scaled(s) for s in starts)
    best_theta, best_val = None, np.inf
    for s in starts:
        res = minimize(scaled, s, method="Nelder-Mead", bounds=unit, options=opts)
        # one restart from the converged point to escape a collapsed simplex
        res = minimize(scaled, res.x, method="Nelder-Mead", bounds=unit, options=opts)
        cand = lo + np.clip(res.x, 0.0, 1.0) * span
        val = objective(cand)
        if val < best_val or (val == best_val and tuple(cand) < tuple(best_theta)):
            best_theta, best_val = cand, val
    params = _station(best_theta)
    traj = forward_euler(best_theta, t, y[0])
    err = np.abs(traj - y)
    return FitResult(params, float(np.sum((traj - y) ** 2)), traj, err, float(err[1:].mean()),
                     series.station_id, improved=best_val < initial_best or best_val == 0)


def load_observations(normalization=None):
    """Bundled survey series, normalised by the stored transect area."""
    pkg = resources.files("orlicz_control.data")
    meta = json.loads(pkg.joinpath("survey_meta.json").read_text())
    norm = normalization or meta["normalization_m2"]
    rows = {}
    for row in csv.DictReader(pkg.joinpath("survey_areas.csv").read_text().splitlines()):
        rows.setdefault(int(row["station_id"]), []).append(
            (float(row["day_offset"]), float(row["area_m2"]) / norm))
    return {sid: ObservationSeries(np.array([r[0] for r in v]), np.array([r[1] for r in v]), sid)
            for sid, v in sorted(rows.items())}


def read_series_csv(path):
    """Station CSV with columns ``station_id,day_offset,observed_normalized``."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["station_id"]), []).append(
                (float(row["day_offset"]), float(row["observed_normalized"])))
    return {sid: ObservationSeries(np.array([r[0] for r in v]), np.array([r[1] for r in v]), sid)
            for sid, v in sorted(rows.items())}


def reference_params():
    return load_station_parameters()


class StationCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit(t, y)`` calibrates, ``predict(t)`` runs Euler."""

    def __init__(self, n_starts=20, seed=0, maxiter=4000):
        self.n_starts = n_starts
        self.seed = seed
        self.maxiter = maxiter

    def fit(self, X, y):
        series = ObservationSeries(np.ravel(X), np.ravel(y))
        self.result_ = fit_station(series, self.n_starts, self.seed, maxiter=self.maxiter)
        self.x0_ = float(series.values[0])
        return self

    def predict(self, X):
        if not hasattr(self, "result_"):
            raise AttributeError("call fit before predict")
        return forward_euler(self.result_.params, np.ravel(X), self.x0_)

    def score(self, X, y):
        """Negative SSE (higher is better)."""
        return -float(np.sum((self.predict(X) - np.ravel(y)) ** 2))
