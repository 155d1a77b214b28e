"""Stabilizing score functionals.

Two evaluation routes are provided for every kind:

* patch evaluators ``eval_*`` compute the score at the origin of a finite
  local point list (used for stabilization probing and as the reference
  semantics);
* :func:`evaluate_all` computes the score of every point of a torus
  configuration at once, which is the score on the periodized
  configuration.

Scores of the combinatorial kinds are 0/1. Germ-grain scores are volumes
computed by grid quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import _kernels
from .errors import (
    CertificationError,
    ContractError,
    InsufficientPointsError,
    ParameterError,
    PatchTooSmallError,
)
from .geometry import Patch, PointConfiguration, min_image, unit_ball_volume
from .spatial_index import NeighborIndex, build, k_nearest, periodic_tree, shifted_queries, within

__all__ = [
    "KINDS",
    "FunctionalSpec",
    "InteractionRadius",
    "interaction_radius",
    "arrival_order",
    "eval_packing",
    "eval_birth_growth",
    "eval_nn_threshold",
    "eval_knn_degree",
    "eval_constant",
    "eval_germ_grain_volume",
    "evaluate_patch",
    "evaluate_all",
    "evaluate_point",
    "germ_grain_grid",
]

KINDS = ("packing", "birth_growth", "germ_grain_volume", "nn_threshold", "knn_degree", "constant")


@dataclass(frozen=True)
class FunctionalSpec:
    """Which score to evaluate, with the parameters of every kind.

    Only the fields belonging to ``kind`` are read. ``constant`` is a
    degenerate kind returning ``value`` everywhere, used for closed-form
    checks.
    """

    kind: str
    ball_volume: float = 1.0
    initial_radius_bound: float = 0.25
    speed: float = 1.0
    radius_cutoff: float = 0.5
    grain_radius_bound: float = 1.0
    quadrature_resolution: float = 0.05
    threshold: float = 1.0
    k: int = 1
    target_degree: int = 2
    directed: bool = False
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown functional kind {self.kind!r}; expected one of {KINDS}")
        checks = {
            "packing": [("ball_volume", self.ball_volume > 0)],
            "birth_growth": [
                ("initial_radius_bound", self.initial_radius_bound > 0),
                ("speed", self.speed >= 0),
                ("radius_cutoff", self.radius_cutoff >= self.initial_radius_bound),
            ],
            "germ_grain_volume": [
                ("grain_radius_bound", self.grain_radius_bound > 0),
                ("quadrature_resolution", self.quadrature_resolution > 0),
            ],
            "nn_threshold": [("threshold", self.threshold > 0)],
            "knn_degree": [("k", self.k >= 1), ("target_degree", self.target_degree >= 0)],
            "constant": [("value", math.isfinite(self.value))],
        }[self.kind]
        for name, ok in checks:
            if not ok:
                raise ParameterError(f"invalid {name}={getattr(self, name)!r} for kind {self.kind}")

    @classmethod
    def packing(cls, ball_volume: float = 1.0) -> "FunctionalSpec":
        return cls("packing", ball_volume=ball_volume)

    @classmethod
    def birth_growth(cls, initial_radius_bound: float, speed: float, radius_cutoff: float) -> "FunctionalSpec":
        return cls(
            "birth_growth",
            initial_radius_bound=initial_radius_bound,
            speed=speed,
            radius_cutoff=radius_cutoff,
        )

    @classmethod
    def germ_grain(cls, grain_radius_bound: float = 1.0, quadrature_resolution: float = 0.05) -> "FunctionalSpec":
        return cls(
            "germ_grain_volume",
            grain_radius_bound=grain_radius_bound,
            quadrature_resolution=quadrature_resolution,
        )

    @classmethod
    def nn_threshold(cls, threshold: float) -> "FunctionalSpec":
        return cls("nn_threshold", threshold=threshold)

    @classmethod
    def knn_degree(cls, k: int, target_degree: int, directed: bool = False) -> "FunctionalSpec":
        return cls("knn_degree", k=k, target_degree=target_degree, directed=directed)

    @classmethod
    def constant(cls, value: float) -> "FunctionalSpec":
        return cls("constant", value=value)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FunctionalSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown functional fields: {sorted(unknown)}")
        return cls(**data)

    def ball_radius(self, dimension: int) -> float:
        """Packing ball radius ``(V / kappa_d)^(1/d)``."""
        return (self.ball_volume / unit_ball_volume(dimension)) ** (1.0 / dimension)

    def aux_bound(self) -> float:
        """Upper bound of the aux mark law the sampler should use."""
        return self.grain_radius_bound if self.kind == "germ_grain_volume" else 1.0

    def value_range(self, dimension: int) -> tuple[float, float]:
        if self.kind == "germ_grain_volume":
            return 0.0, unit_ball_volume(dimension) * self.grain_radius_bound**dimension
        if self.kind == "constant":
            return self.value, self.value
        return 0.0, 1.0

    def seed_radii(self, aux: np.ndarray) -> np.ndarray:
        """Birth-growth initial radii in ``(0, L_rho]`` from aux marks in ``[0, 1)``."""
        return self.initial_radius_bound * (1.0 - np.asarray(aux, dtype=float) / self.aux_bound())


@dataclass(frozen=True)
class InteractionRadius:
    value: float


def interaction_radius(spec: FunctionalSpec, tau: float, dimension: int) -> InteractionRadius:
    """Deterministic truncation radius used for patch sizes and grid cells."""
    if spec.kind == "packing":
        r = 2.0 * spec.ball_radius(dimension)
    elif spec.kind == "birth_growth":
        r = spec.initial_radius_bound + spec.radius_cutoff
    elif spec.kind == "nn_threshold":
        r = spec.threshold
    elif spec.kind == "knn_degree":
        # radius of a ball holding ~4k expected points
        r = (4.0 * spec.k / (tau * unit_ball_volume(dimension))) ** (1.0 / dimension)
    elif spec.kind == "germ_grain_volume":
        r = 2.0 * spec.grain_radius_bound
    else:
        r = tau ** (-1.0 / dimension)
    return InteractionRadius(float(r))


# ---------------------------------------------------------------------------
# patch evaluators


def arrival_order(time: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Indices sorted by time mark, ties by lexicographic position."""
    keys = [positions[:, j] for j in reversed(range(positions.shape[1]))]
    return np.lexsort((*keys, time)).astype(np.int64)


def _require_origin(patch: Patch) -> None:
    if patch.origin < 0 or patch.origin >= len(patch):
        raise ContractError("patch has no point at the origin")


def _sequential(patch: Patch, rho: np.ndarray, speed: float, cutoff: float, closed: bool) -> np.ndarray:
    order = arrival_order(patch.time, patch.positions)
    return _kernels.accept_direct(
        np.ascontiguousarray(patch.positions, dtype=np.float64),
        order,
        np.ascontiguousarray(rho, dtype=np.float64),
        np.ascontiguousarray(patch.time, dtype=np.float64),
        float(speed),
        float(cutoff),
        0.0,
        closed,
    )


def eval_packing(patch: Patch, spec: FunctionalSpec) -> int:
    """1 iff the origin's ball is packed when the patch balls arrive in time order."""
    _require_origin(patch)
    r = spec.ball_radius(patch.dimension)
    rho = np.full(len(patch), r)
    return int(_sequential(patch, rho, 0.0, r, False)[patch.origin])


def eval_birth_growth(patch: Patch, spec: FunctionalSpec) -> int:
    _require_origin(patch)
    rho = spec.seed_radii(patch.aux)
    return int(_sequential(patch, rho, spec.speed, spec.radius_cutoff, True)[patch.origin])


def eval_nn_threshold(patch: Patch, spec: FunctionalSpec) -> int:
    """1 iff the nearest other patch point is closer than the threshold."""
    _require_origin(patch)
    t = spec.threshold
    if patch.radius < t:
        raise PatchTooSmallError(f"patch radius {patch.radius} < threshold {t}")
    dist = patch.distances()
    dist[patch.origin] = np.inf
    return int(dist.size > 1 and float(dist.min()) < t)


def _knn_rows(pos: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """k nearest rows for every row, ties by (source id, row)."""
    m = pos.shape[0]
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    rows = np.arange(m)
    out = np.empty((m, k), dtype=np.int64)
    for i in range(m):
        o = np.lexsort((rows, ids, dist[i]))
        out[i] = o[:k]
    return out


def _degree_from_knn(nbr: np.ndarray, i: int, directed: bool) -> int:
    k = nbr.shape[1]
    incoming = np.nonzero(np.any(nbr == i, axis=1))[0]
    if directed:
        return k + incoming.size
    return len(set(nbr[i].tolist()) | set(incoming.tolist()))


def eval_knn_degree(patch: Patch, spec: FunctionalSpec) -> int:
    """1 iff the origin's degree in the k-NN graph of the patch equals target_degree."""
    _require_origin(patch)
    if len(patch) < spec.k + 1:
        raise InsufficientPointsError(f"k-NN degree needs {spec.k + 1} points, patch has {len(patch)}")
    nbr = _knn_rows(patch.positions, patch.ids, spec.k)
    return int(_degree_from_knn(nbr, patch.origin, spec.directed) == spec.target_degree)


def eval_constant(patch: Patch, spec: FunctionalSpec) -> float:
    return float(spec.value)


def _germ_grain_patch(patch: Patch, spec: FunctionalSpec) -> float:
    """Quadrature on a grid registered at the origin (cell centers at (i+1/2)h)."""
    _require_origin(patch)
    d = patch.dimension
    h = spec.quadrature_resolution
    T = spec.grain_radius_bound
    m = int(math.ceil(T / h))
    ax = (np.arange(-m, m) + 0.5) * h
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    y = np.stack([g.ravel() for g in mesh], axis=1)
    y = y[np.sum(y * y, axis=1) < T * T]
    if y.shape[0] == 0 or len(patch) == 0:
        return 0.0
    diff = y[:, None, :] - patch.positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    rows = np.arange(len(patch))
    # nearest patch point per grid cell, ties by source id then row
    best = np.empty(y.shape[0], dtype=np.int64)
    for q in range(y.shape[0]):
        best[q] = np.lexsort((rows, patch.ids, dist[q]))[0]
    covered = np.any(dist < patch.aux[None, :], axis=1)
    return float(np.count_nonzero(covered & (best == patch.origin)) * h**d)


def evaluate_patch(patch: Patch, spec: FunctionalSpec) -> float:
    kind = spec.kind
    if kind == "packing":
        return eval_packing(patch, spec)
    if kind == "birth_growth":
        return eval_birth_growth(patch, spec)
    if kind == "nn_threshold":
        return eval_nn_threshold(patch, spec)
    if kind == "knn_degree":
        return eval_knn_degree(patch, spec)
    if kind == "germ_grain_volume":
        return _germ_grain_patch(patch, spec)
    return eval_constant(patch, spec)


# ---------------------------------------------------------------------------
# germ-grain quadrature on the torus


def germ_grain_grid(L: float, h: float) -> tuple[int, float]:
    """Grid cells per side and effective spacing (``L`` divided evenly)."""
    if not h > 0:
        raise ParameterError(f"quadrature_resolution must be positive, got {h}")
    ng = max(1, int(round(L / h)))
    return ng, L / ng


def _grid_centers(L: float, ng: int, d: int, cells: np.ndarray | None = None) -> np.ndarray:
    h = L / ng
    if cells is None:
        cells = np.arange(ng**d)
    coords = np.empty((cells.size, d))
    rem = cells.copy()
    for j in reversed(range(d)):
        coords[:, j] = -0.5 * L + (rem % ng + 0.5) * h
        rem //= ng
    return coords


def _nearest_ids_tree(config: PointConfiguration, y: np.ndarray) -> np.ndarray:
    tree = periodic_tree(config)
    q = shifted_queries(config, y)
    if len(config) == 1:
        return np.zeros(y.shape[0], dtype=np.int64)
    dist, idx = tree.query(q, k=2)
    first, second = idx[:, 0], idx[:, 1]
    tie = (dist[:, 0] == dist[:, 1]) & (second < first)
    return np.where(tie, second, first).astype(np.int64)


def _germ_grain_all(config: PointConfiguration, spec: FunctionalSpec) -> np.ndarray:
    geo = config.geometry
    d, L = geo.dimension, geo.side_length
    n = len(config)
    if n == 0:
        return np.zeros(0)
    ng, h = germ_grain_grid(L, spec.quadrature_resolution)
    covered = _kernels.rasterize_coverage(
        np.ascontiguousarray(config.positions), np.ascontiguousarray(config.aux), L, ng
    )
    cells = np.nonzero(covered)[0]
    if cells.size == 0:
        return np.zeros(n)
    owner = _nearest_ids_tree(config, _grid_centers(L, ng, d, cells))
    return np.bincount(owner, minlength=n).astype(float) * h**d


def eval_germ_grain_volume(config: PointConfiguration, index: NeighborIndex, x: int, spec: FunctionalSpec) -> float:
    """Covered volume of the Voronoi cell of point ``x`` by grid quadrature.

    Counts torus grid cells whose center is nearest to ``x`` (ties by id)
    and lies inside some grain; returns count * h^d.
    """
    if spec.kind != "germ_grain_volume":
        raise ParameterError("spec is not a germ-grain functional")
    geo = config.geometry
    d, L = geo.dimension, geo.side_length
    if len(config) == 0:
        raise ContractError("configuration is empty")
    ng, h = germ_grain_grid(L, spec.quadrature_resolution)
    T = spec.grain_radius_bound
    # cells whose center can be nearest to x and covered lie within T of x
    g = (config.positions[x] + 0.5 * L) / h - 0.5
    lo = np.floor(g - T / h).astype(int) - 1
    hi = np.ceil(g + T / h).astype(int) + 1
    axes = []
    for j in range(d):
        span = np.arange(lo[j], hi[j] + 1)
        axes.append(np.unique(span % ng) if span.size > ng else span % ng)
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.zeros(mesh[0].size, dtype=np.int64)
    for m in mesh:
        flat = flat * ng + m.ravel()
    flat = np.unique(flat)
    y = _grid_centers(L, ng, d, flat)
    delta = min_image(y - config.positions[x][None, :], L)
    y = y[np.sum(delta * delta, axis=1) < T * T]
    count = 0
    for q in y:
        if k_nearest(index, q, 1)[0][0] != x:
            continue
        if any(dist < config.aux[u] for u, dist in within(index, q, T)):
            count += 1
    return count * h**d


# ---------------------------------------------------------------------------
# whole-configuration evaluation on the torus


def _offsets(d: int) -> np.ndarray:
    span = np.array([-1, 0, 1])
    mesh = np.meshgrid(*([span] * d), indexing="ij")
    return np.ascontiguousarray(np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64))


def _sequential_all(config, rho, speed, cutoff, interaction, closed) -> np.ndarray:
    geo = config.geometry
    L = geo.side_length
    if interaction >= L:
        raise CertificationError(
            f"interaction distance {interaction:g} >= torus side {L:g}: periodized acceptance is ill-posed"
        )
    order = arrival_order(config.time, config.positions)
    pos = np.ascontiguousarray(config.positions)
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    t = np.ascontiguousarray(config.time)
    nc = int(math.floor(L / interaction)) if interaction > 0 else 3
    if nc >= 3:
        acc = _kernels.accept_grid(pos, order, rho, t, float(speed), float(cutoff), L, nc, _offsets(geo.dimension), closed)
    else:
        acc = _kernels.accept_direct(pos, order, rho, t, float(speed), float(cutoff), L, closed)
    return acc.astype(float)


def _knn_all(config: PointConfiguration, k: int) -> np.ndarray:
    """Every point's k nearest others on the periodized configuration."""
    n = len(config)
    L = config.geometry.side_length
    if n < k + 1:
        raise InsufficientPointsError(f"k-NN degree needs {k + 1} points, configuration has {n}")
    ids = np.arange(n)
    if n <= 64:
        delta = min_image(config.positions[:, None, :] - config.positions[None, :, :], L)
        dist = np.sqrt(np.sum(delta * delta, axis=2))
        np.fill_diagonal(dist, np.inf)
        nbr = np.empty((n, k), dtype=np.int64)
        kth = np.empty(n)
        for i in range(n):
            o = np.lexsort((ids, dist[i]))[:k]
            nbr[i] = o
            kth[i] = dist[i, o[-1]]
    else:
        kk = min(k + 2, n)
        dist, idx = periodic_tree(config).query(shifted_queries(config, config.positions), k=kk)
        # drop self (distance 0, always first); rows are distance-sorted, fix exact ties to id order
        dist, idx = dist[:, 1:], idx[:, 1:]
        tie_rows = np.nonzero(np.any(dist[:, :-1] == dist[:, 1:], axis=1))[0]
        for i in tie_rows:
            o = np.lexsort((idx[i], dist[i]))
            idx[i], dist[i] = idx[i][o], dist[i][o]
        nbr = idx[:, :k].astype(np.int64)
        kth = dist[:, k - 1]
    if np.any(kth >= 0.5 * L):
        raise CertificationError("k-th neighbor distance reaches L/2; torus too small for exact k-NN")
    return nbr


def _knn_degree_all(config: PointConfiguration, spec: FunctionalSpec) -> np.ndarray:
    n = len(config)
    k = spec.k
    nbr = _knn_all(config, k)
    indeg = np.bincount(nbr.ravel(), minlength=n)
    if spec.directed:
        deg = k + indeg
    else:
        mutual = np.sum(np.any(nbr[nbr] == np.arange(n)[:, None, None], axis=2), axis=1)
        deg = k + indeg - mutual
    return (deg == spec.target_degree).astype(float)


def _nn_distance_all(config: PointConfiguration) -> np.ndarray:
    n = len(config)
    L = config.geometry.side_length
    if n == 1:
        return np.array([L])
    dist, _ = periodic_tree(config).query(shifted_queries(config, config.positions), k=2)
    # own lattice copies sit at distance L
    return np.minimum(dist[:, 1], L)


def evaluate_all(config: PointConfiguration, spec: FunctionalSpec) -> np.ndarray:
    """Score of every point on the periodized configuration."""
    n = len(config)
    if n == 0:
        return np.zeros(0)
    d = config.geometry.dimension
    kind = spec.kind
    if kind == "constant":
        return np.full(n, float(spec.value))
    if kind == "nn_threshold":
        return (_nn_distance_all(config) < spec.threshold).astype(float)
    if kind == "packing":
        r = spec.ball_radius(d)
        return _sequential_all(config, np.full(n, r), 0.0, r, 2 * r, False)
    if kind == "birth_growth":
        rho = spec.seed_radii(config.aux)
        inter = spec.initial_radius_bound + spec.radius_cutoff
        return _sequential_all(config, rho, spec.speed, spec.radius_cutoff, inter, True)
    if kind == "knn_degree":
        return _knn_degree_all(config, spec)
    return _germ_grain_all(config, spec)


def evaluate_point(config: PointConfiguration, i: int, spec: FunctionalSpec) -> float:
    """Score of point ``i`` on the periodized configuration."""
    if not 0 <= i < len(config):
        raise ContractError(f"point id {i} out of range")
    kind = spec.kind
    if kind == "constant":
        return float(spec.value)
    if kind == "nn_threshold":
        L = config.geometry.side_length
        delta = min_image(config.positions - config.positions[i][None, :], L)
        dist = np.sqrt(np.sum(delta * delta, axis=1))
        dist[i] = L
        return float(min(float(dist.min()), L) < spec.threshold)
    if kind == "germ_grain_volume":
        cell = max(spec.quadrature_resolution, spec.grain_radius_bound)
        return eval_germ_grain_volume(config, build(config, cell), i, spec)
    return float(evaluate_all(config, spec)[i])
