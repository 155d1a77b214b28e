"""Empirical certification of stabilization radii and of exponential tails.

A radius ``r`` is certified at a point ``x`` when the score at ``x`` is the
same for the inner configuration ``sigma`` restricted to ``B_r(x)`` joined
with every member of a fixed battery of external configurations living
outside ``B_r(x)``. The battery is: the empty configuration, ``M`` fresh
Poisson(tau) samples and one Poisson(2 tau) sample. This is a statistical
certificate, not a proof that the value can never change.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ContractError, DegenerateFitError, InsufficientPointsError, ParameterError
from .functionals import FunctionalSpec, evaluate_patch, interaction_radius
from .geometry import Patch, PointConfiguration, TorusGeometry, local_patch, sample_poisson
from .parallel import replicate_map
from .seeding import derive, stream

__all__ = [
    "RadiusEstimate",
    "TailFit",
    "default_grid",
    "external_battery",
    "estimate_radius",
    "sample_radius_distribution",
    "survival_at",
    "fit_tail",
    "fit_survival",
]

DEFAULT_RESAMPLES = 64
DEFAULT_GRID_SIZE = 24
DEFAULT_MIN_COUNT = 50
MIN_CERTIFIED = 50

# marks a probe whose patch could not support an evaluation (e.g. fewer than
# k+1 points for a k-NN score); it never agrees with a numeric value
_UNDEFINED = None


@dataclass(frozen=True)
class RadiusEstimate:
    point_id: int
    r_hat: float | None
    grid: tuple[float, ...]
    resamples_used: int
    certified: bool
    value: float | None = None

    def __post_init__(self):
        if self.certified != (self.r_hat is not None):
            raise ContractError("r_hat must be set exactly when the radius is certified")
        if self.certified and self.r_hat not in self.grid:
            raise ContractError("certified r_hat must be a grid radius")


@dataclass(frozen=True)
class TailFit:
    radii: tuple[float, ...]
    log_survival: tuple[float, ...]
    n_exceed: tuple[int, ...]
    slope: float
    intercept: float
    r_squared: float
    min_count_per_bin: int
    n_samples: int
    fit_mask: tuple[bool, ...] = field(default=())

    @property
    def rate(self) -> float:
        """Fitted decay constant ``c = -slope``."""
        return -self.slope

    def summary(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "survival", "log_survival", "n_exceed"])
        for r, ls, k in zip(self.radii, self.log_survival, self.n_exceed):
            w.writerow([format(r, ".17g"), format(math.exp(ls), ".17g"), format(ls, ".17g"), k])
        return buf.getvalue()


def default_grid(tau: float, dimension: int, side_length: float, size: int = DEFAULT_GRID_SIZE) -> tuple[float, ...]:
    """Geometric radii from a quarter of the mean spacing up to ``L/2``."""
    lo = 0.25 * tau ** (-1.0 / dimension)
    hi = 0.5 * side_length
    if not lo < hi:
        raise ParameterError(f"torus side {side_length} too small for a probe grid at tau={tau}")
    return tuple(float(r) for r in np.geomspace(lo, hi, size))


def _check_grid(grid: Sequence[float], side_length: float) -> tuple[float, ...]:
    g = tuple(float(r) for r in grid)
    if not g or g[0] <= 0:
        raise ParameterError("probe grid must be non-empty with positive radii")
    if any(b <= a for a, b in zip(g, g[1:])):
        raise ParameterError("probe grid must be strictly increasing")
    if g[-1] > 0.5 * side_length * (1 + 1e-12):
        raise ParameterError(f"largest probe radius {g[-1]} exceeds L/2 = {0.5 * side_length}")
    return g


def _poisson_ball(rng: np.random.Generator, intensity: float, radius: float, d: int, aux_bound: float) -> Patch:
    n = rng.poisson(intensity * (2 * radius) ** d)
    pos = rng.uniform(-radius, radius, (n, d))
    time = rng.random(n)
    aux = aux_bound * rng.random(n)
    keep = np.sum(pos * pos, axis=1) < radius * radius
    pos, time, aux = pos[keep], time[keep], aux[keep]
    return Patch(pos, time, aux, np.full(pos.shape[0], -1, dtype=np.int64), radius)


def external_battery(
    tau: float, dimension: int, outer_radius: float, M: int, seed: int, aux_bound: float = 1.0
) -> list[Patch]:
    """``[empty, Poisson(2 tau), Poisson(tau) x M]`` on ``B_outer_radius(0)``.

    Resample ``j`` always comes from stream ``(seed, j)``, so a battery with
    larger ``M`` extends a smaller one with the same seed.
    """
    d = dimension
    empty = Patch(np.zeros((0, d)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), math.inf)
    dense = _poisson_ball(stream(seed, 0, "external-dense"), 2 * tau, outer_radius, d, aux_bound)
    fresh = [_poisson_ball(stream(seed, j, "external"), tau, outer_radius, d, aux_bound) for j in range(M)]
    return [empty, dense, *fresh]


def _outside(p: Patch, r: float) -> Patch:
    keep = p.distances() >= r
    return Patch(p.positions[keep], p.time[keep], p.aux[keep], p.ids[keep], p.radius)


def _probe(spec: FunctionalSpec, inner: Patch, external: Patch, radius: float):
    try:
        return evaluate_patch(inner.union(external, radius=radius), spec)
    except InsufficientPointsError:
        return _UNDEFINED


def estimate_radius(
    spec: FunctionalSpec,
    config: PointConfiguration,
    x: int,
    grid: Sequence[float] | None = None,
    M: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    *,
    tau: float | None = None,
) -> RadiusEstimate:
    """Smallest grid radius at which the score at point ``x`` is certified.

    ``tau`` is the intensity of the Poisson externals; it defaults to the
    configuration's own empirical intensity. The sweep runs upward and stops
    at the first radius where all ``M + 2`` externals agree.
    """
    if M < 2:
        raise ParameterError(f"need at least 2 resamples, got {M}")
    geo = config.geometry
    d, L = geo.dimension, geo.side_length
    if tau is None:
        tau = max(len(config), 1) / geo.volume()
    grid = _check_grid(grid if grid is not None else default_grid(tau, d, L), L)
    outer = grid[-1] + 2.0 * interaction_radius(spec, tau, d).value
    battery = external_battery(tau, d, outer, M, seed, config.aux_bound)
    for r in grid:
        inner = local_patch(config, x, r)
        first = _probe(spec, inner, battery[0], math.inf)
        if first is _UNDEFINED:
            continue
        if all(_probe(spec, inner, _outside(ext, r), outer) == first for ext in battery[1:]):
            return RadiusEstimate(int(x), r, grid, M, True, float(first))
    return RadiusEstimate(int(x), None, grid, M, False)


def _radius_replicate(spec, tau, geometry, grid, M, seed, i: int) -> RadiusEstimate:
    aux_bound = spec.aux_bound()
    cfg = sample_poisson(geometry, tau, seed, aux_bound=aux_bound, index=i)
    mark = stream(seed, i, "origin-marks")
    cfg = cfg.subset(np.any(cfg.positions != 0.0, axis=1))
    cfg, x = cfg.insert(np.zeros(geometry.dimension), float(mark.random()), float(aux_bound * mark.random()))
    return estimate_radius(spec, cfg, x, grid, M, derive(seed, i, "battery"), tau=tau)


def sample_radius_distribution(
    spec: FunctionalSpec,
    tau: float,
    lam: float,
    n_points: int,
    grid: Sequence[float] | None = None,
    M: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
) -> list[RadiusEstimate]:
    """Certify the radius at an inserted origin point on ``n_points`` fresh samples."""
    if n_points < 1:
        raise ParameterError("n_points must be at least 1")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    geometry = TorusGeometry.from_volume(dimension, lam)
    grid = _check_grid(grid if grid is not None else default_grid(tau, dimension, geometry.side_length), geometry.side_length)
    fn = partial(_radius_replicate, spec, tau, geometry, grid, M, seed)
    return replicate_map(fn, n_points, workers)


def survival_at(radii: np.ndarray, grid: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Exceedance counts ``#{R > r}`` and survival fractions at each grid radius."""
    radii = np.sort(np.asarray(radii, dtype=float))
    g = np.asarray(grid, dtype=float)
    n_exceed = radii.size - np.searchsorted(radii, g, side="right")
    return n_exceed, n_exceed / radii.size


def fit_survival(radii, grid: Sequence[float], min_count_per_bin: int = DEFAULT_MIN_COUNT) -> TailFit:
    """Ordinary least-squares line through ``(r, log P(R > r))``.

    Only grid radii with at least ``min_count_per_bin`` exceedances enter the
    fit, and radii where every sample still exceeds are skipped since they
    carry no information about the decay.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ContractError("no radii to fit")
    grid = tuple(float(r) for r in grid)
    n_exceed, surv = survival_at(radii, grid)
    with np.errstate(divide="ignore"):
        log_s = np.log(surv)
    mask = (n_exceed >= min_count_per_bin) & (n_exceed < radii.size)
    xs, ys = np.asarray(grid)[mask], log_s[mask]
    if xs.size < 2 or np.ptp(ys) == 0 or np.ptp(xs) == 0:
        raise DegenerateFitError(
            f"tail fit is degenerate: {xs.size} qualifying bins with >= {min_count_per_bin} exceedances"
        )
    fit = stats.linregress(xs, ys)
    slope, intercept, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    return TailFit(
        radii=grid,
        log_survival=tuple(float(v) for v in log_s),
        n_exceed=tuple(int(k) for k in n_exceed),
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        min_count_per_bin=int(min_count_per_bin),
        n_samples=int(radii.size),
        fit_mask=tuple(bool(m) for m in mask),
    )


def fit_tail(estimates: Sequence[RadiusEstimate], min_count_per_bin: int = DEFAULT_MIN_COUNT) -> TailFit:
    certified = [e for e in estimates if e.certified]
    if len(certified) < MIN_CERTIFIED:
        raise ContractError(f"tail fit needs {MIN_CERTIFIED} certified radii, got {len(certified)}")
    grid = certified[0].grid
    if any(e.grid != grid for e in certified):
        raise ContractError("estimates use different probe grids")
    return fit_survival([e.r_hat for e in certified], grid, min_count_per_bin)
