"""Synthetic data generation from known parameter trajectories.

Scenarios pin down a true coefficient vector, an exogenous bachelor's
input shape, and explicit initial stocks; observations are the implied
flows with optional multiplicative log-normal noise.  First-year
observations are always the noise-free implied flows, so the anchoring
convention used in estimation is exactly satisfiable and a noise-free
scenario can be refitted to zero loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import (
    ModelSpec,
    ObservedSeries,
    SimulationResult,
    YearGrid,
    eval_param_trajectories,
    run_recurrence,
)


@dataclass(frozen=True)
class ConstantInput:
    level: float

    def values(self, grid: YearGrid) -> np.ndarray:
        return np.full(grid.n_years, float(self.level))


@dataclass(frozen=True)
class ExponentialInput:
    """level * exp(rate * (t - t_min)): smooth exponential trend."""

    level: float
    rate: float

    def values(self, grid: YearGrid) -> np.ndarray:
        return float(self.level) * np.exp(float(self.rate) * (grid.years - grid.t_min))


@dataclass(frozen=True)
class PiecewiseLinearInput:
    """Linear interpolation through (year, value) breakpoints, flat beyond them."""

    points: tuple[tuple[float, float], ...]

    def values(self, grid: YearGrid) -> np.ndarray:
        if len(self.points) < 2:
            raise ValueError("piecewise-linear input needs at least two breakpoints")
        xs = np.array([p[0] for p in self.points], dtype=float)
        ys = np.array([p[1] for p in self.points], dtype=float)
        if np.any(np.diff(xs) <= 0):
            raise ValueError("breakpoint years must be strictly increasing")
        return np.interp(grid.years, xs, ys)


InputSeries = Union[ConstantInput, ExponentialInput, PiecewiseLinearInput]


@dataclass
class SyntheticScenario:
    grid: YearGrid
    spec: ModelSpec
    theta_true: np.ndarray
    b_input: InputSeries
    stock_m0: float
    stock_p0: float
    noise_sd: float = 0.0
    seed: int = 0
    # Proxy-series shape; required by forcing specs, optional otherwise
    # (emitting one lets forcing specs be fitted against the data).
    p_intl_input: Optional[InputSeries] = None


def generate(scenario: SyntheticScenario) -> tuple[ObservedSeries, SimulationResult]:
    """Simulate the true system and wrap its flows as noisy observations.

    Returns the observed series together with the true latent simulation.
    """
    if scenario.stock_m0 <= 0 or scenario.stock_p0 <= 0:
        raise ValueError("initial stocks must be strictly positive")
    if scenario.noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    grid = scenario.grid
    b = scenario.b_input.values(grid)
    if np.any(b <= 0):
        raise ValueError("degenerate input generator: bachelor's series must stay positive")
    p_intl = None
    if scenario.p_intl_input is not None:
        p_intl = scenario.p_intl_input.values(grid)
        if np.any(p_intl < 0):
            raise ValueError("degenerate input generator: p_intl series must be nonnegative")
    if scenario.spec.forcing and p_intl is None:
        raise ValueError("forcing scenario requires a p_intl input")

    traj = eval_param_trajectories(scenario.theta_true, scenario.spec, grid)
    truth = run_recurrence(
        b,
        traj,
        scenario.stock_m0,
        scenario.stock_p0,
        p_intl=p_intl if scenario.spec.forcing else None,
    )
    if np.any(truth.flow_m <= 0) or np.any(truth.flow_p <= 0):
        raise ValueError("degenerate scenario: implied flows must stay positive")

    rng = np.random.default_rng(scenario.seed)
    n = grid.n_years
    m = truth.flow_m * np.exp(rng.normal(0.0, scenario.noise_sd, n))
    p = truth.flow_p * np.exp(rng.normal(0.0, scenario.noise_sd, n))
    # Anchor the first observations at the noise-free flows.
    m[0] = truth.flow_m[0]
    p[0] = truth.flow_p[0]
    obs = ObservedSeries(grid=grid, b=b, m=m, p=p, p_intl=p_intl)
    return obs, truth


def input_from_dict(d: dict) -> InputSeries:
    kind = d.get("kind")
    if kind == "constant":
        return ConstantInput(level=float(d["level"]))
    if kind == "exponential":
        return ExponentialInput(level=float(d["level"]), rate=float(d["rate"]))
    if kind == "piecewise":
        return PiecewiseLinearInput(points=tuple((float(y), float(v)) for y, v in d["points"]))
    raise ValueError(f"unknown input generator kind {kind!r}")


def scenario_from_dict(d: dict) -> SyntheticScenario:
    """Build a scenario from the structured config format used by the CLI."""
    try:
        grid = YearGrid(int(d["t_min"]), int(d["t_max"]))
        spec_d = d["spec"]
        spec = ModelSpec(
            deg_gamma=int(spec_d["deg_gamma"]),
            deg_rho=int(spec_d["deg_rho"]),
            forcing=bool(spec_d.get("forcing", False)),
        )
        scenario = SyntheticScenario(
            grid=grid,
            spec=spec,
            theta_true=np.asarray(d["theta_true"], dtype=float),
            b_input=input_from_dict(d["b_input"]),
            stock_m0=float(d["stock_m0"]),
            stock_p0=float(d["stock_p0"]),
            noise_sd=float(d.get("noise_sd", 0.0)),
            seed=int(d.get("seed", 0)),
            p_intl_input=input_from_dict(d["p_intl_input"]) if "p_intl_input" in d else None,
        )
    except KeyError as exc:
        raise ValueError(f"scenario config missing required field {exc.args[0]!r}") from exc
    if scenario.theta_true.shape != (spec.n_params,):
        raise ValueError(
            f"theta_true has length {scenario.theta_true.size}, spec needs {spec.n_params}"
        )
    return scenario
