"""Latent two-compartment stock-flow system and its forward simulation.

Two unobserved stocks (a master's-level and a PhD-level degree-producing
population) are driven by an exogenous bachelor's completion flow.  Each
year a fraction of bachelor's completions is routed into each stock, a
fraction of master's completions feeds the PhD stock, and each stock
releases completions at a per-year hazard.  Routing fractions and hazards
are logistic images of low-degree polynomials in rescaled time, so the
whole system is parameterized by a single unconstrained coefficient
vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

# Logistic outputs are clamped away from {0, 1} before they enter the
# recurrences: hazards and routing fractions must stay in the open interval.
LOGISTIC_CLAMP = 1e-12

# Floor on the unconstrained forcing coefficient; exp(-40) is numerically
# zero at the scale of the flows and avoids subnormal underflow.
LAMBDA_RAW_FLOOR = -40.0

TRAJECTORY_NAMES = ("rho_bm", "rho_bp", "rho_mp", "gamma_m", "gamma_p")


@dataclass(frozen=True)
class YearGrid:
    """Contiguous annual observation window, inclusive of both endpoints."""

    t_min: int
    t_max: int

    def __post_init__(self) -> None:
        if self.t_max <= self.t_min:
            raise ValueError(
                f"year grid must span at least two years, got [{self.t_min}, {self.t_max}]"
            )

    @property
    def n_years(self) -> int:
        return self.t_max - self.t_min + 1

    @property
    def t_mid(self) -> float:
        # Exact real midpoint, never rounded to an integer year.
        return (self.t_min + self.t_max) / 2.0

    @property
    def half_width(self) -> float:
        return (self.t_max - self.t_min) / 2.0

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.t_min, self.t_max + 1)


@dataclass(frozen=True)
class ModelSpec:
    """One point of the specification grid: polynomial degrees plus forcing flag."""

    deg_gamma: int
    deg_rho: int
    forcing: bool = False

    def __post_init__(self) -> None:
        if self.deg_gamma not in (0, 1, 2):
            raise ValueError(f"deg_gamma must be in {{0, 1, 2}}, got {self.deg_gamma}")
        if self.deg_rho not in (0, 1, 2):
            raise ValueError(f"deg_rho must be in {{0, 1, 2}}, got {self.deg_rho}")

    @property
    def n_params(self) -> int:
        """Free-parameter count: three routing blocks, two hazard blocks, optional forcing."""
        return 3 * (self.deg_rho + 1) + 2 * (self.deg_gamma + 1) + (1 if self.forcing else 0)

    def label(self) -> str:
        return f"{self.deg_gamma},{self.deg_rho},{'intl' if self.forcing else 'none'}"


def theta_labels(spec: ModelSpec) -> list[str]:
    """Coefficient names in the fixed parameter-vector order.

    Routing blocks (bachelor's->master's, bachelor's->PhD, master's->PhD)
    come first, each ordered constant, linear, quadratic; then the two
    hazard blocks (master's, PhD); then the raw forcing coefficient.
    """
    labels = []
    for block in ("rho_bm", "rho_bp", "rho_mp"):
        labels += [f"{block}_{j}" for j in range(spec.deg_rho + 1)]
    for block in ("gamma_m", "gamma_p"):
        labels += [f"{block}_{j}" for j in range(spec.deg_gamma + 1)]
    if spec.forcing:
        labels.append("lambda_raw")
    return labels


@dataclass
class ObservedSeries:
    """Annual completion counts on a contiguous year grid.

    ``b`` may touch zero; ``m`` and ``p`` must be strictly positive because
    the fit works with their logarithms.  ``p_intl`` is an optional proxy
    series used only by forcing specifications.
    """

    grid: YearGrid
    b: np.ndarray
    m: np.ndarray
    p: np.ndarray
    p_intl: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.b = np.asarray(self.b, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        n = self.grid.n_years
        for name, arr in (("b", self.b), ("m", self.m), ("p", self.p)):
            if arr.shape != (n,):
                raise ValueError(f"series {name!r} must have {n} entries, got shape {arr.shape}")
        if np.any(self.b < 0) or not np.all(np.isfinite(self.b)):
            raise ValueError("bachelor's series must be finite and nonnegative")
        if np.any(self.m <= 0) or not np.all(np.isfinite(self.m)):
            raise ValueError("master's series must be finite and strictly positive")
        if np.any(self.p <= 0) or not np.all(np.isfinite(self.p)):
            raise ValueError("PhD series must be finite and strictly positive")
        if self.p_intl is not None:
            self.p_intl = np.asarray(self.p_intl, dtype=float)
            if self.p_intl.shape != (n,):
                raise ValueError(
                    f"p_intl must cover the same {n}-year grid, got shape {self.p_intl.shape}"
                )
            if np.any(self.p_intl < 0) or not np.all(np.isfinite(self.p_intl)):
                raise ValueError("p_intl series must be finite and nonnegative")

    def window(self, t_min: int, t_max: int) -> "ObservedSeries":
        """Return the sub-series on [t_min, t_max]; rejects years outside the grid."""
        if t_min < self.grid.t_min or t_max > self.grid.t_max:
            raise ValueError(
                f"window [{t_min}, {t_max}] not contained in grid "
                f"[{self.grid.t_min}, {self.grid.t_max}]"
            )
        lo = t_min - self.grid.t_min
        hi = t_max - self.grid.t_min + 1
        return ObservedSeries(
            grid=YearGrid(t_min, t_max),
            b=self.b[lo:hi].copy(),
            m=self.m[lo:hi].copy(),
            p=self.p[lo:hi].copy(),
            p_intl=None if self.p_intl is None else self.p_intl[lo:hi].copy(),
        )


@dataclass
class ParamTrajectories:
    """Per-year routing fractions and hazards, all strictly inside (0, 1)."""

    rho_bm: np.ndarray
    rho_bp: np.ndarray
    rho_mp: np.ndarray
    gamma_m: np.ndarray
    gamma_p: np.ndarray
    lam: float = 0.0

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRAJECTORY_NAMES}


@dataclass
class SimulationResult:
    """Latent stocks and the completion flows they imply at every grid year."""

    stock_m: np.ndarray
    stock_p: np.ndarray
    flow_m: np.ndarray
    flow_p: np.ndarray


def rescale_time(t, grid: YearGrid):
    """Map calendar year(s) to the dimensionless index with endpoints at -1 and +1.

    Defined for any year, including years outside the grid; values beyond
    the window land outside [-1, 1] and are used for hindcast extrapolation.
    """
    s = (np.asarray(t, dtype=float) - grid.t_mid) / grid.half_width
    if s.ndim == 0:
        return float(s)
    return s


def logit(x):
    x = np.asarray(x, dtype=float)
    return np.log(x / (1.0 - x))


def inv_logit(y):
    """Logistic inverse 1/(1+exp(-y)), overflow-safe for large |y|.

    Saturating inputs are pinned at the nearest representable values
    inside (0, 1), so the result never touches the endpoints exactly.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    out = np.clip(out, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    if out.ndim == 0:
        return float(out)
    return out


def split_theta(theta: np.ndarray, spec: ModelSpec):
    """Split the flat parameter vector into (rho blocks, gamma blocks, lambda_raw)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError(
            f"theta has length {theta.size}, spec {spec.label()!r} needs {spec.n_params}"
        )
    dr = spec.deg_rho + 1
    dg = spec.deg_gamma + 1
    rho_blocks = [theta[i * dr:(i + 1) * dr] for i in range(3)]
    off = 3 * dr
    gamma_blocks = [theta[off + i * dg:off + (i + 1) * dg] for i in range(2)]
    lambda_raw = float(theta[-1]) if spec.forcing else None
    return rho_blocks, gamma_blocks, lambda_raw


def eval_param_trajectories(
    theta: np.ndarray,
    spec: ModelSpec,
    grid: YearGrid,
    years: Optional[Sequence[int]] = None,
) -> ParamTrajectories:
    """Evaluate the five parameter trajectories at the given years.

    ``grid`` anchors the time rescaling; ``years`` defaults to the grid
    itself but may extend beyond it (polynomial extrapolation).
    """
    rho_blocks, gamma_blocks, lambda_raw = split_theta(theta, spec)
    if years is None:
        years = grid.years
    s = rescale_time(years, grid)
    phi_rho = np.vander(s, spec.deg_rho + 1, increasing=True)
    phi_gamma = np.vander(s, spec.deg_gamma + 1, increasing=True)

    def logistic(phi, coeffs):
        vals = inv_logit(phi @ coeffs)
        return np.clip(vals, LOGISTIC_CLAMP, 1.0 - LOGISTIC_CLAMP)

    lam = 0.0
    if spec.forcing:
        # May overflow to inf for absurd coefficients; the loss penalty
        # path rejects the resulting non-finite flows.
        with np.errstate(over="ignore"):
            lam = float(np.exp(max(lambda_raw, LAMBDA_RAW_FLOOR)))
    return ParamTrajectories(
        rho_bm=logistic(phi_rho, rho_blocks[0]),
        rho_bp=logistic(phi_rho, rho_blocks[1]),
        rho_mp=logistic(phi_rho, rho_blocks[2]),
        gamma_m=logistic(phi_gamma, gamma_blocks[0]),
        gamma_p=logistic(phi_gamma, gamma_blocks[1]),
        lam=lam,
    )


def initialize_stocks(obs: ObservedSeries, traj: ParamTrajectories) -> tuple[float, float]:
    """Initial stocks that reproduce the first observed completions exactly."""
    m0 = float(obs.m[0])
    p0 = float(obs.p[0])
    if m0 <= 0 or p0 <= 0:
        raise ValueError("first-year master's and PhD completions must be positive")
    return m0 / float(traj.gamma_m[0]), p0 / float(traj.gamma_p[0])


def run_recurrence(
    b: np.ndarray,
    traj: ParamTrajectories,
    stock_m0: float,
    stock_p0: float,
    p_intl: Optional[np.ndarray] = None,
) -> SimulationResult:
    """Iterate the annual update equations from explicit initial stocks.

    Each year the master's stock gains a routed share of bachelor's
    completions and loses that year's implied completions; the PhD stock
    gains routed shares of bachelor's and implied master's completions
    (plus the forcing term when a proxy series is supplied) and loses its
    own completions.  Flows satisfy flow = hazard * stock exactly.
    """
    n = len(b)
    # Scalar float arithmetic in the loop; numpy scalars are much slower here.
    b_l = [float(x) for x in b]
    rbm = traj.rho_bm.tolist()
    rbp = traj.rho_bp.tolist()
    rmp = traj.rho_mp.tolist()
    gm = traj.gamma_m.tolist()
    gp = traj.gamma_p.tolist()
    forcing_l = None
    if p_intl is not None:
        lam = traj.lam
        forcing_l = [lam * float(x) for x in p_intl]

    stock_m = [0.0] * n
    stock_p = [0.0] * n
    flow_m = [0.0] * n
    flow_p = [0.0] * n
    sm = float(stock_m0)
    sp = float(stock_p0)
    for i in range(n):
        fm = gm[i] * sm
        fp = gp[i] * sp
        stock_m[i] = sm
        stock_p[i] = sp
        flow_m[i] = fm
        flow_p[i] = fp
        if i + 1 < n:
            sp = sp + rbp[i] * b_l[i] + rmp[i] * fm - fp
            if forcing_l is not None:
                sp += forcing_l[i]
            sm = sm + rbm[i] * b_l[i] - fm
    return SimulationResult(
        stock_m=np.array(stock_m),
        stock_p=np.array(stock_p),
        flow_m=np.array(flow_m),
        flow_p=np.array(flow_p),
    )


def simulate(obs: ObservedSeries, traj: ParamTrajectories, spec: ModelSpec) -> SimulationResult:
    """Deterministic forward simulation over the observation grid.

    Initial stocks come from :func:`initialize_stocks`, so the first-year
    implied flows match the first-year observations.
    """
    if spec.forcing and obs.p_intl is None:
        raise ValueError("forcing specification requires the p_intl series")
    stock_m0, stock_p0 = initialize_stocks(obs, traj)
    p_intl = obs.p_intl if spec.forcing else None
    return run_recurrence(obs.b, traj, stock_m0, stock_p0, p_intl=p_intl)
