"""Torus geometry, marked Poisson samples and periodized patches.

Positions live in the half-open fundamental domain ``[-L/2, L/2)^d`` of the
torus of side ``L``; the torus is the only boundary mode, which realises the
periodic copying of a window configuration onto all lattice translates.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ContractError, ParameterError
from .seeding import stream

__all__ = [
    "TorusGeometry",
    "MarkedPoint",
    "PointConfiguration",
    "Patch",
    "unit_ball_volume",
    "wrap",
    "min_image",
    "torus_distance",
    "sample_poisson",
    "periodized_patch",
    "local_patch",
    "dumps",
    "loads",
    "write_configuration",
    "read_configuration",
]


def unit_ball_volume(d: int) -> float:
    """Volume of the unit Euclidean ball in ``d`` dimensions."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class TorusGeometry:
    dimension: int
    side_length: float

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ParameterError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if not (self.side_length > 0 and math.isfinite(self.side_length)):
            raise ParameterError(f"side_length must be positive, got {self.side_length}")

    @classmethod
    def from_volume(cls, dimension: int, volume: float) -> "TorusGeometry":
        if not volume > 0:
            raise ParameterError(f"volume must be positive, got {volume}")
        return cls(dimension, volume ** (1.0 / dimension))

    def volume(self) -> float:
        return self.side_length ** self.dimension

    @property
    def half(self) -> float:
        return 0.5 * self.side_length


def wrap(x: np.ndarray, L: float) -> np.ndarray:
    """Map coordinates into ``[-L/2, L/2)``."""
    y = np.mod(np.asarray(x, dtype=float) + 0.5 * L, L) - 0.5 * L
    # mod can round up to exactly L for tiny negative inputs
    return np.where(y >= 0.5 * L, y - L, y)


def min_image(delta: np.ndarray, L: float) -> np.ndarray:
    return delta - L * np.round(delta / L)


def torus_distance(geometry: TorusGeometry, x, y) -> float:
    delta = min_image(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), geometry.side_length)
    return float(np.sqrt(np.sum(delta * delta)))


@dataclass(frozen=True)
class MarkedPoint:
    position: tuple[float, ...]
    time_mark: float
    aux_mark: float = 0.0


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite simple marked point set on a torus.

    Arrays are stored read-only; ``positions`` has shape ``(n, d)``.
    """

    geometry: TorusGeometry
    positions: np.ndarray
    time: np.ndarray
    aux: np.ndarray
    aux_bound: float = 1.0

    def __post_init__(self):
        d = self.geometry.dimension
        pos = np.asarray(self.positions, dtype=float).reshape(-1, d)
        n = pos.shape[0]
        time = np.asarray(self.time, dtype=float).reshape(n)
        aux = np.asarray(self.aux, dtype=float).reshape(n)
        if not np.all(np.isfinite(pos)):
            raise ParameterError("non-finite position")
        if n and (time.min() < 0 or time.max() > 1):
            raise ParameterError("time marks must lie in [0, 1]")
        if n and (aux.min() < 0 or aux.max() > self.aux_bound):
            raise ParameterError(f"aux marks must lie in [0, {self.aux_bound}]")
        pos = wrap(pos, self.geometry.side_length)
        if n > 1 and np.unique(pos, axis=0).shape[0] != n:
            raise ContractError("configuration is not simple: repeated positions")
        for name, arr in (("positions", pos), ("time", time), ("aux", aux)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.aux, other.aux)
        )

    @property
    def points(self) -> Iterator[MarkedPoint]:
        for p, t, a in zip(self.positions, self.time, self.aux):
            yield MarkedPoint(tuple(float(c) for c in p), float(t), float(a))

    @classmethod
    def empty(cls, geometry: TorusGeometry, aux_bound: float = 1.0) -> "PointConfiguration":
        d = geometry.dimension
        return cls(geometry, np.zeros((0, d)), np.zeros(0), np.zeros(0), aux_bound)

    def insert(self, position, time_mark: float, aux_mark: float = 0.0) -> tuple["PointConfiguration", int]:
        """Return a copy with one extra point appended, and that point's id."""
        d = self.geometry.dimension
        pos = np.vstack([self.positions, np.asarray(position, dtype=float).reshape(1, d)])
        cfg = PointConfiguration(
            self.geometry,
            pos,
            np.append(self.time, time_mark),
            np.append(self.aux, aux_mark),
            self.aux_bound,
        )
        return cfg, len(self)

    def shift(self, v) -> "PointConfiguration":
        """Translate by ``y -> y - v`` (so a point at ``v`` moves to the origin)."""
        v = np.asarray(v, dtype=float).reshape(1, self.geometry.dimension)
        return PointConfiguration(self.geometry, self.positions - v, self.time, self.aux, self.aux_bound)

    def subset(self, mask) -> "PointConfiguration":
        mask = np.asarray(mask)
        return PointConfiguration(
            self.geometry, self.positions[mask], self.time[mask], self.aux[mask], self.aux_bound
        )

    def thin(self, p: float, rng: np.random.Generator) -> "PointConfiguration":
        if not 0 <= p <= 1:
            raise ParameterError("retention probability must lie in [0, 1]")
        return self.subset(rng.random(len(self)) < p)


def sample_poisson(
    geometry: TorusGeometry,
    intensity: float,
    seed: int | None = None,
    *,
    aux_bound: float = 1.0,
    index: int = 0,
    rng: np.random.Generator | None = None,
) -> PointConfiguration:
    """Homogeneous Poisson sample on the torus with i.i.d. uniform marks.

    Time marks are uniform on ``[0, 1)`` and aux (grain) marks uniform on
    ``[0, aux_bound)``. Pass either ``seed`` (stream ``(seed, index,
    "poisson")``) or an explicit generator.
    """
    if not (intensity > 0 and math.isfinite(intensity)):
        raise ParameterError(f"intensity must be positive, got {intensity}")
    if aux_bound < 0:
        raise ParameterError("aux_bound must be non-negative")
    if rng is None:
        if seed is None:
            raise ParameterError("either seed or rng is required")
        rng = stream(seed, index, "poisson")
    d, L = geometry.dimension, geometry.side_length
    n = int(rng.poisson(intensity * geometry.volume()))
    pos = (rng.random((n, d)) - 0.5) * L
    time = rng.random(n)
    aux = aux_bound * rng.random(n)
    return PointConfiguration(geometry, pos, time, aux, aux_bound)


@dataclass(frozen=True, eq=False)
class Patch:
    """Local marked point list, positions relative to the patch center.

    ``origin`` indexes the point sitting at the center (``-1`` if none) and
    ``ids`` holds source-configuration ids (``-1`` for foreign points such as
    external resamples). Rows are in canonical order: distance, id, copy.
    """

    positions: np.ndarray
    time: np.ndarray
    aux: np.ndarray
    ids: np.ndarray
    radius: float
    origin: int = -1

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def distances(self) -> np.ndarray:
        return np.sqrt(np.sum(self.positions**2, axis=1))

    def union(self, other: "Patch", radius: float | None = None) -> "Patch":
        """Concatenate ``other``'s rows after this patch's rows (origin kept)."""
        return Patch(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.time, other.time]),
            np.concatenate([self.aux, other.aux]),
            np.concatenate([self.ids, other.ids]),
            max(self.radius, other.radius) if radius is None else radius,
            self.origin,
        )

    def shifted(self, v) -> "Patch":
        v = np.asarray(v, dtype=float).reshape(1, -1)
        return Patch(self.positions + v, self.time, self.aux, self.ids, self.radius, self.origin)


def _translate_offsets(d: int, m: int) -> np.ndarray:
    rng1 = np.arange(-m, m + 1)
    grids = np.meshgrid(*([rng1] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def periodized_patch(config: PointConfiguration, center, radius: float) -> Patch:
    """All lattice copies of ``config`` inside the open ball ``B_radius(center)``.

    Positions are returned relative to ``center``; for ``radius >= L/2`` a
    source point may appear several times as distinct copies.
    """
    if radius < 0:
        raise ParameterError(f"radius must be non-negative, got {radius}")
    geo = config.geometry
    d, L = geo.dimension, geo.side_length
    c = np.asarray(center, dtype=float).reshape(1, d)
    n = len(config)
    if n == 0 or radius == 0:
        z = np.zeros((0, d))
        return Patch(z, np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), float(radius))
    base = min_image(config.positions - c, L)
    m = int(math.ceil(radius / L))
    offs = _translate_offsets(d, m) * L
    rel = base[:, None, :] + offs[None, :, :]
    dist2 = np.sum(rel * rel, axis=2)
    src, copy = np.nonzero(dist2 < radius * radius)
    rel = rel[src, copy]
    dist2 = dist2[src, copy]
    order = np.lexsort((copy, src, dist2))
    src, copy, rel = src[order], copy[order], rel[order]
    return Patch(rel, config.time[src], config.aux[src], src.astype(np.int64), float(radius))


def local_patch(config: PointConfiguration, i: int, radius: float) -> Patch:
    """Periodized patch around point ``i`` with that point flagged as origin."""
    if not 0 <= i < len(config):
        raise ContractError(f"point id {i} out of range")
    p = periodized_patch(config, config.positions[i], radius)
    hits = np.nonzero((p.ids == i) & np.all(p.positions == 0.0, axis=1))[0]
    if hits.size:
        return Patch(p.positions, p.time, p.aux, p.ids, p.radius, int(hits[0]))
    # zero radius: the open ball is empty but the origin itself is kept
    d = config.geometry.dimension
    return Patch(
        np.zeros((1, d)),
        config.time[i : i + 1].copy(),
        config.aux[i : i + 1].copy(),
        np.array([i], dtype=np.int64),
        float(radius),
        0,
    )


# ---------------------------------------------------------------------------
# text serialization: "d L n" header, then "x1 .. xd time aux" per point


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(config: PointConfiguration) -> str:
    geo = config.geometry
    out = io.StringIO()
    out.write(f"{geo.dimension} {_fmt(geo.side_length)} {len(config)}\n")
    for p, t, a in zip(config.positions, config.time, config.aux):
        out.write(" ".join(_fmt(v) for v in (*p, t, a)) + "\n")
    return out.getvalue()


def loads(text: str, aux_bound: float | None = None) -> PointConfiguration:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParameterError("empty configuration text")
    head = lines[0].split()
    if len(head) != 3:
        raise ParameterError("header must be 'd L n'")
    d, L, n = int(head[0]), float(head[1]), int(head[2])
    geo = TorusGeometry(d, L)
    if len(lines) - 1 != n:
        raise ParameterError(f"header announces {n} points, found {len(lines) - 1}")
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=float).reshape(n, d + 2)
    aux = rows[:, d + 1]
    bound = aux_bound if aux_bound is not None else max(1.0, float(aux.max()) if n else 1.0)
    return PointConfiguration(geo, rows[:, :d], rows[:, d], aux, bound)


def write_configuration(config: PointConfiguration, path) -> None:
    Path(path).write_text(dumps(config))


def read_configuration(path, aux_bound: float | None = None) -> PointConfiguration:
    return loads(Path(path).read_text(), aux_bound)
