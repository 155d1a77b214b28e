"""Exact neighbor queries on the torus.

``NeighborIndex`` is a uniform cell grid (CSR layout) answering range and
k-nearest queries one at a time. Whole-configuration sweeps (every point's
k nearest neighbors at once) go through :func:`periodic_tree`, a thin
wrapper over scipy's periodic KD-tree; the two are cross-checked in tests.

Distance ties are broken by point id, ascending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientPointsError, ParameterError
from .geometry import PointConfiguration, TorusGeometry, min_image

__all__ = ["NeighborIndex", "build", "within", "k_nearest", "periodic_tree", "default_cell_size"]


def default_cell_size(intensity: float, dimension: int, interaction: float = 0.0) -> float:
    """max(expected nearest-neighbor spacing, interaction diameter)."""
    spacing = intensity ** (-1.0 / dimension)
    return max(spacing, interaction)


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    geometry: TorusGeometry
    positions: np.ndarray
    cells_per_side: int
    cell_size: float
    order: np.ndarray  # point ids sorted by flat cell id
    starts: np.ndarray  # CSR offsets, length n_cells + 1

    def __len__(self) -> int:
        return self.positions.shape[0]

    def _cell_coords(self, x: np.ndarray) -> np.ndarray:
        L = self.geometry.side_length
        c = np.floor((x + 0.5 * L) / self.cell_size).astype(np.int64)
        return np.clip(c, 0, self.cells_per_side - 1)

    def _flat(self, coords: np.ndarray) -> np.ndarray:
        nc = self.cells_per_side
        flat = np.zeros(coords.shape[:-1], dtype=np.int64)
        for j in range(coords.shape[-1]):
            flat = flat * nc + coords[..., j]
        return flat

    def _ids_in_block(self, center_cell: np.ndarray, rings: int) -> np.ndarray:
        """Point ids in the cells within ``rings`` of ``center_cell`` (wrapping)."""
        nc = self.cells_per_side
        d = self.geometry.dimension
        if 2 * rings + 1 >= nc:
            return self.order
        span = np.arange(-rings, rings + 1)
        mesh = np.meshgrid(*([span] * d), indexing="ij")
        offs = np.stack([m.ravel() for m in mesh], axis=1)
        cells = np.unique(self._flat((center_cell[None, :] + offs) % nc))
        chunks = [self.order[self.starts[c] : self.starts[c + 1]] for c in cells]
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)

    def _dist(self, x: np.ndarray, ids: np.ndarray) -> np.ndarray:
        delta = min_image(self.positions[ids] - x[None, :], self.geometry.side_length)
        return np.sqrt(np.sum(delta * delta, axis=1))


def build(config: PointConfiguration, target_cell_size: float) -> NeighborIndex:
    """Bin the configuration into a uniform grid of roughly ``target_cell_size``."""
    if not target_cell_size > 0:
        raise ParameterError(f"target_cell_size must be positive, got {target_cell_size}")
    geo = config.geometry
    L, d = geo.side_length, geo.dimension
    nc = max(1, int(math.floor(L / target_cell_size)))
    idx = NeighborIndex(geo, config.positions, nc, L / nc, np.zeros(0, np.int64), np.zeros(1, np.int64))
    flat = idx._flat(idx._cell_coords(config.positions)) if len(config) else np.zeros(0, np.int64)
    order = np.argsort(flat, kind="stable").astype(np.int64)
    counts = np.bincount(flat, minlength=nc**d)
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return NeighborIndex(geo, config.positions, nc, L / nc, order, starts)


def _sorted_pairs(ids: np.ndarray, dist: np.ndarray) -> list[tuple[int, float]]:
    o = np.lexsort((ids, dist))
    return [(int(ids[i]), float(dist[i])) for i in o]


def within(index: NeighborIndex, x, r: float) -> list[tuple[int, float]]:
    """Points at torus distance ``< r`` from ``x``, sorted by (distance, id)."""
    if r < 0:
        raise ParameterError(f"radius must be non-negative, got {r}")
    if len(index) == 0 or r == 0:
        return []
    x = np.asarray(x, dtype=float).reshape(-1)
    rings = int(math.ceil(r / index.cell_size))
    ids = index._ids_in_block(index._cell_coords(x), rings)
    dist = index._dist(x, ids)
    keep = dist < r
    return _sorted_pairs(ids[keep], dist[keep])


def k_nearest(index: NeighborIndex, x, k: int, exclude: int | None = None) -> list[tuple[int, float]]:
    """The ``k`` nearest points to ``x`` by torus distance, ties by id."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    available = len(index) - (1 if exclude is not None and 0 <= exclude < len(index) else 0)
    if available < k:
        raise InsufficientPointsError(f"need {k} points, configuration has {available}")
    x = np.asarray(x, dtype=float).reshape(-1)
    cell = index._cell_coords(x)
    rings = 0
    while True:
        ids = index._ids_in_block(cell, rings)
        if exclude is not None:
            ids = ids[ids != exclude]
        covers_all = ids.size == available and (2 * rings + 1 >= index.cells_per_side)
        if ids.size >= k:
            dist = index._dist(x, ids)
            o = np.lexsort((ids, dist))[:k]
            # anything outside the scanned block is at least rings*cell_size away
            if covers_all or dist[o[-1]] < rings * index.cell_size:
                return [(int(ids[i]), float(dist[i])) for i in o]
        if covers_all:
            # unreachable: available >= k guarantees ids.size >= k here
            raise InsufficientPointsError("not enough points")
        rings += 1


def periodic_tree(config: PointConfiguration) -> cKDTree:
    """scipy KD-tree with periodic box; coordinates shifted into ``[0, L)``."""
    L = config.geometry.side_length
    data = np.mod(config.positions + 0.5 * L, L)
    # guard against mod returning exactly L
    data[data >= L] = 0.0
    return cKDTree(data, boxsize=L)


def shifted_queries(config: PointConfiguration, x: np.ndarray) -> np.ndarray:
    L = config.geometry.side_length
    q = np.mod(np.asarray(x, dtype=float) + 0.5 * L, L)
    q[q >= L] = 0.0
    return q
