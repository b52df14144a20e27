"""Command-line front end.

``orlicz-control <command> --config run.json [--out DIR] [--seed N]``

Exit codes: 0 success, 1 failed invariants (``verify``), 2 configuration
error, 3 numerical failure, 4 I/O error.
"""
import argparse
import csv
import json
import platform
import sys
import time
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .calibration import (error_table, fit_station, forward_euler, load_observations,
                          read_series_csv, sse)
from .dynamics import linear_model, load_station_parameters, logistic_model, macrophyte_model
from .exact import IllPosedError, LinearModelParams, compute_A, exact_value, sensitivity_signs
from .grid import Grid, build_quadrature, fmt
from .hjb import ConfigError, NumericalError, SolverConfig, solve, write_outputs
from .risk_core import RiskParams, uniform_jumps
from .simulate import SimConfig, estimate_value, exact_horizon, write_estimate_csv

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4
COMMANDS = ("solve", "exact-compare", "sensitivity", "calibrate", "simulate", "verify")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MacrophyteBlock(_Strict):
    name: Literal["macrophyte"]
    station: int = Field(ge=1, le=7)
    c0: float = Field(1.0, ge=0)
    c1: float = Field(5.0, ge=0)
    e1: float = Field(0.0, ge=0)
    e2: float = Field(0.0, ge=0)
    mu: Optional[float] = Field(None, gt=0)


class GrowthBlock(_Strict):
    name: Literal["linear", "logistic"]
    a: float = Field(0.02, gt=0)
    alpha: float = Field(1.0, gt=0)


class RiskBlock(_Strict):
    p: float = Field(ge=1)
    psi: float = Field(gt=0)
    delta: float = Field(gt=0)
    lambda_N: float = Field(ge=0)
    lambda_Z: float = Field(0.0, ge=0)

    def build(self):
        return RiskParams(self.p, self.psi, self.delta, self.lambda_N, self.lambda_Z)


class GridBlock(_Strict):
    n1: int = Field(ge=2)
    n2: int = Field(0, ge=0)
    x1_max: float = Field(1.0, gt=0)
    x2_max: float = Field(1.0, gt=0)
    M: int = Field(ge=1)


class SolverBlock(_Strict):
    gamma: float = 0.5
    tol: float = 1e-10
    eps_div: float = 1e-12
    max_iters: int = 100_000
    omega_trunc: Optional[float] = None
    control_stride: int = 1
    init_value: Optional[float] = None
    prune: bool = True
    control_search: Literal["auto", "direct", "diagonal"] = "auto"
    ambiguity: bool = True

    def build(self):
        return SolverConfig(**self.model_dump())


class SimBlock(_Strict):
    # None picks the horizon from the closed-form value (exact policy only)
    T: Optional[float] = Field(None, gt=0)
    rel_tol: float = Field(1e-3, gt=0, lt=1)
    paths: int = Field(10_000, ge=2)
    seed: int = Field(0, ge=0)
    state0: Tuple[float, float] = (0.5, 0.0)
    policy: Literal["null", "exact"] = "null"
    dt: float = Field(0.1, gt=0)
    M: int = Field(20_000, ge=1)


class ExactBlock(_Strict):
    alpha_p: List[float] = [2.0, 1.0, 0.5]
    resolutions: List[int] = [100, 500]
    x_check: float = Field(0.05, gt=0)
    rel_tol: float = Field(0.02, gt=0)


class CalibrationBlock(_Strict):
    stations: List[int] = [1, 2, 3, 4, 5, 6, 7]
    n_starts: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    maxiter: int = Field(4000, ge=1)
    data: Optional[str] = None


class VerifyBlock(_Strict):
    seed: int = Field(0, ge=0)
    only: Optional[List[str]] = None


REQUIRED = {
    "solve": ("model", "risk", "grid", "solver"),
    "exact-compare": ("model", "risk", "solver", "exact"),
    "sensitivity": ("model", "risk"),
    "calibrate": ("calibration",),
    "simulate": ("model", "risk", "sim"),
    "verify": (),
}


class RunConfig(_Strict):
    command: Literal["solve", "exact-compare", "sensitivity", "calibrate", "simulate", "verify"]
    model: Optional[Union[MacrophyteBlock, GrowthBlock]] = Field(None, discriminator="name")
    risk: Optional[RiskBlock] = None
    grid: Optional[GridBlock] = None
    solver: Optional[SolverBlock] = None
    sim: Optional[SimBlock] = None
    exact: Optional[ExactBlock] = None
    calibration: Optional[CalibrationBlock] = None
    verify: Optional[VerifyBlock] = None
    output: str = "out"

    @model_validator(mode="after")
    def _blocks_present(self):
        missing = [b for b in REQUIRED[self.command] if getattr(self, b) is None]
        if missing:
            raise ValueError(f"command {self.command!r} needs block(s): {', '.join(missing)}")
        growth_only = ("exact-compare", "sensitivity")
        if self.command in growth_only and self.model.name == "macrophyte":
            raise ValueError(f"{self.command} needs the linear or logistic model")
        return self


def load_config(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not raw:
        raise ConfigError(f"{path}: empty config; expected at least a 'command' key")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def bundled_config(name):
    """Path-like handle to a config file shipped with the package."""
    return resources.files("orlicz_control.configs").joinpath(name)


def build_model(block):
    if block.name == "macrophyte":
        st = load_station_parameters()[block.station]
        if block.mu is not None:
            st = type(st)(st.r, st.d, st.alpha_src, st.Q, block.mu)
        return macrophyte_model(st, block.c0, block.c1, block.e1, block.e2)
    factory = linear_model if block.name == "linear" else logistic_model
    return factory(block.a, block.alpha)


def build_grid(block, dim):
    if dim == 1:
        return Grid.line(block.x1_max, block.n1)
    if block.n2 < 2:
        raise ConfigError("two-dimensional models need grid.n2 >= 2")
    return Grid(block.x1_max, block.n1, block.x2_max, block.n2)


def metadata(cfg, started, **extra):
    import numba
    import scipy
    import sklearn

    return dict({
        "config": cfg.model_dump(mode="json"),
        "versions": {"orlicz_control": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "scikit-learn": sklearn.__version__},
        "wall_time": time.perf_counter() - started,
    }, **extra)


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def run_solve(cfg, out, started):
    model = build_model(cfg.model)
    grid = build_grid(cfg.grid, model.dim)
    params = cfg.risk.build()
    field, policy, report = solve(model, grid, build_quadrature(model.jumps, cfg.grid.M),
                                  params, cfg.solver.build())
    write_outputs(out, field, policy, report, metadata(cfg, started, p=params.p))
    if not report.converged:
        raise NumericalError(f"no convergence after {report.iterations} sweeps "
                             f"(last update {report.final_error:.3g})")
    return report.as_dict()


def run_exact_compare(cfg, out, started):
    base = cfg.model
    jumps = uniform_jumps(-1.0, 0.0)
    params = cfg.risk.build()
    # refuse ill-posed cases before spending time on any solve
    sols = {ap: compute_A(LinearModelParams(base.a, ap / params.p, params, jumps))
            for ap in cfg.exact.alpha_p}
    summary = []
    for ap, sol in sols.items():
        model = (logistic_model if base.name == "logistic" else linear_model)(
            base.a, ap / params.p, jumps)
        for n in cfg.exact.resolutions:
            grid = Grid.line(1.0, n)
            field, _, report = solve(model, grid, build_quadrature(jumps, n), params,
                                     cfg.solver.build())
            x = grid.x1
            F = field.values
            ex = exact_value(sol, x)
            err = np.abs(F - ex)
            rel = np.divide(err, ex, out=np.full_like(err, np.nan), where=ex > 0)
            _write_rows(Path(out) / f"exact_ap{ap:g}_n{n}.csv",
                        ["x1", "F", "exact", "abs_error", "rel_error"],
                        zip(x, F, ex, err, rel))
            near = (x > 0) & (x <= cfg.exact.x_check + 1e-12)
            worst = float(np.nanmax(rel[near]))
            summary.append({"alpha_p": ap, "n": n, "A": sol.A, "iterations": report.iterations,
                            "converged": report.converged, "max_rel_error_near_origin": worst,
                            "within_tolerance": worst < cfg.exact.rel_tol})
    _write_json(Path(out) / "report.json", metadata(cfg, started, cases=summary))
    return {"cases": summary}


def run_sensitivity(cfg, out, started):
    params = LinearModelParams(cfg.model.a, cfg.model.alpha, cfg.risk.build())
    rep = sensitivity_signs(params)
    rows = [(name, e["derivative"], e["predicted"], e["consistent"], e["error"] or "")
            for name, e in rep.items() if name != "order_condition"]
    _write_rows(Path(out) / "sensitivity.csv",
                ["parameter", "derivative", "predicted", "consistent", "error"], rows)
    _write_json(Path(out) / "report.json", metadata(cfg, started, signs=rep))
    return rep


def run_calibrate(cfg, out, started, seed):
    block = cfg.calibration
    series = read_series_csv(block.data) if block.data else load_observations()
    table = load_station_parameters()
    fits, traj_rows = [], []
    for sid in block.stations:
        if sid not in series:
            raise ConfigError(f"no observations for station {sid}")
        s = series[sid]
        res = fit_station(s, block.n_starts, seed, maxiter=block.maxiter, reference=table[sid])
        ref_traj = forward_euler(table[sid], s.day_offsets, s.values[0])
        ref_err, ref_mean = error_table(table[sid], s)
        p = res.params
        fits.append([sid, p.r, p.d, p.alpha_src, p.Q, res.sse, res.mean_error,
                     sse(table[sid], s), ref_mean])
        for k, t in enumerate(s.day_offsets):
            traj_rows.append([sid, int(t), s.values[k], ref_traj[k], ref_err[k],
                              res.trajectory[k], res.per_point_error[k]])
    _write_rows(Path(out) / "fit.csv",
                ["station_id", "r", "d", "alpha", "Q", "sse", "mean_abs_error",
                 "sse_reference", "mean_abs_error_reference"], fits)
    _write_rows(Path(out) / "trajectories.csv",
                ["station_id", "day_offset", "observed", "reference", "reference_error",
                 "fitted", "fitted_error"], traj_rows)
    _write_json(Path(out) / "report.json", metadata(cfg, started, seed=seed))
    return {"stations": len(fits)}


def run_simulate(cfg, out, started, seed):
    block = cfg.sim
    model = build_model(cfg.model)
    params = cfg.risk.build()
    T, bound = block.T, None
    if T is None:
        if block.policy != "exact" or model.name != "linear":
            raise ConfigError("sim.T may be omitted only for the exact policy on the linear model")
        sol = compute_A(LinearModelParams(model.params["a"], model.params["alpha"], params,
                                          model.jumps))
        T = exact_horizon(sol, block.rel_tol)
        bound = block.rel_tol * exact_value(sol, block.state0[0])
    sc = SimConfig(T=T, paths=block.paths, seed=seed, state0=block.state0,
                   policy=block.policy, dt=block.dt, M=block.M, truncation_bound=bound)
    try:
        est = estimate_value(model, params, sc)
    except RuntimeError as exc:
        raise NumericalError(str(exc)) from exc
    write_estimate_csv(Path(out) / "mc.csv", block.state0, est)
    summary = {"mean": est.mean, "stderr": est.stderr, "paths": est.paths,
               "failed": est.failed, "T": T}
    _write_json(Path(out) / "report.json", metadata(cfg, started, **summary))
    return summary


def run_verify(cfg, out, started, seed):
    from .verify import CHECKS, run_suite

    only = cfg.verify.only if cfg.verify else None
    unknown = set(only or ()) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks: {sorted(unknown)}")
    results = [r.as_dict() for r in run_suite(seed, only)]
    _write_json(Path(out) / "verify.json",
                metadata(cfg, started, seed=seed, results=results))
    return {"passed": all(r["passed"] for r in results), "results": results}


def _seed(cfg, override):
    if override is not None:
        return override
    for block in (cfg.sim, cfg.calibration, cfg.verify):
        if block is not None:
            return block.seed
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="orlicz-control", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    args = ap.parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if cfg.command != args.command:
            raise ConfigError(f"config is for {cfg.command!r}, not {args.command!r}")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        out = Path(args.out or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        seed = _seed(cfg, args.seed)
        if cfg.command == "solve":
            result = run_solve(cfg, out, started)
        elif cfg.command == "exact-compare":
            result = run_exact_compare(cfg, out, started)
        elif cfg.command == "sensitivity":
            result = run_sensitivity(cfg, out, started)
        elif cfg.command == "calibrate":
            result = run_calibrate(cfg, out, started, seed)
        elif cfg.command == "simulate":
            result = run_simulate(cfg, out, started, seed)
        else:
            result = run_verify(cfg, out, started, seed)
    except (ConfigError, IllPosedError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(result, indent=2, default=str))
    if cfg.command == "verify" and not result["passed"]:
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
