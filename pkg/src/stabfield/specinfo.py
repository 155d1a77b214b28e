"""Exact finite-state checks of the specific-information functional.

The configuration space of a region is replaced by occupancy vectors on
``n_cells`` cells, each cell carrying an independent Poisson(tau * v) count
truncated to ``{0..K}`` and renormalised. Null measures are represented by
their density ``rho`` with respect to that reference law, so that
``I(rho) = 1/2 sum rho^2 pi``. States are flattened in C order with cell 0
as the slowest axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.stats import poisson

from .errors import ContractError, ParameterError

__all__ = [
    "MAX_STATES",
    "DiscreteConfigSpace",
    "VerificationRecord",
    "VariationalResult",
    "information",
    "var_variational",
    "info_variational",
    "marginal_density",
    "direct_sum",
    "superadditivity_check",
    "block_product_density",
    "random_null_density",
    "random_observable",
    "verify_instance",
]

MAX_STATES = 10**7
LARGE_SPACE = 10**6
DEFAULT_PERTURBATIONS = 200


@dataclass(frozen=True)
class DiscreteConfigSpace:
    n_cells: int
    max_occupancy: int = 2
    cell_volume: float = 1.0
    intensity: float = 1.0

    def __post_init__(self):
        if self.n_cells < 1 or self.max_occupancy < 1:
            raise ParameterError("need n_cells >= 1 and max_occupancy >= 1")
        if not (self.cell_volume > 0 and self.intensity > 0):
            raise ParameterError("cell volume and intensity must be positive")
        if self.n_states > MAX_STATES:
            raise ParameterError(f"{self.n_states} states exceed the enumeration bound {MAX_STATES}")

    @property
    def n_states(self) -> int:
        return (self.max_occupancy + 1) ** self.n_cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.max_occupancy + 1,) * self.n_cells

    @property
    def tolerance(self) -> float:
        return 1e-12 if self.n_states <= LARGE_SPACE else 1e-10

    @cached_property
    def cell_pmf(self) -> np.ndarray:
        p = poisson.pmf(np.arange(self.max_occupancy + 1), self.intensity * self.cell_volume)
        return p / math.fsum(p.tolist())

    @cached_property
    def reference(self) -> np.ndarray:
        """Flat reference probabilities ``pi`` (product of the cell marginals)."""
        pi = np.ones(1)
        for _ in range(self.n_cells):
            pi = np.multiply.outer(pi, self.cell_pmf).ravel()
        return pi

    def states(self) -> np.ndarray:
        """All occupancy vectors, shape ``(n_states, n_cells)``, in flat order."""
        return np.indices(self.shape).reshape(self.n_cells, -1).T

    def subspace(self, n_cells: int) -> "DiscreteConfigSpace":
        return DiscreteConfigSpace(n_cells, self.max_occupancy, self.cell_volume, self.intensity)

    def expectation(self, values) -> float:
        return math.fsum((self._vector(values) * self.reference).tolist())

    def project_null(self, values) -> np.ndarray:
        """Subtract the mean so the result is a null density."""
        v = self._vector(values)
        return v - self.expectation(v)

    def check_null(self, rho) -> np.ndarray:
        rho = self._vector(rho)
        scale = max(1.0, float(np.max(np.abs(rho))))
        if abs(self.expectation(rho)) > self.tolerance * scale:
            raise ContractError("density does not integrate to zero against the reference law")
        return rho

    def _vector(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float).ravel()
        if v.size != self.n_states:
            raise ContractError(f"expected {self.n_states} state values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ContractError("state values must be finite")
        return v

    def to_dict(self) -> dict:
        return {
            "n_cells": self.n_cells,
            "max_occupancy": self.max_occupancy,
            "cell_volume": self.cell_volume,
            "intensity": self.intensity,
        }


@dataclass(frozen=True)
class VerificationRecord:
    identity: str
    instance_hash: str
    residual: float
    passed: bool

    def to_dict(self) -> dict:
        return {"identity": self.identity, "instance_hash": self.instance_hash, "residual": self.residual, "pass": self.passed}


def instance_hash(space: DiscreteConfigSpace, *arrays) -> str:
    h = hashlib.sha1(json.dumps(space.to_dict(), sort_keys=True).encode())
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()


def information(space: DiscreteConfigSpace, rho) -> float:
    """``1/2 sum rho^2 pi`` for a null density ``rho``."""
    rho = space.check_null(rho)
    return 0.5 * math.fsum((rho * rho * space.reference).tolist())


def _pairing(space, phi, rho) -> float:
    return math.fsum((phi * rho * space.reference).tolist())


def _half_variance(space, phi) -> float:
    c = phi - space.expectation(phi)
    return 0.5 * math.fsum((c * c * space.reference).tolist())


@dataclass(frozen=True)
class VariationalResult:
    """Closed-form side, supremum attained at the optimizer, and the search outcome."""

    target: float
    sup_value: float
    optimizer: np.ndarray = field(repr=False)
    best_perturbed: float
    records: tuple[VerificationRecord, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)


def _scaled_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.normal(size=n) * 10.0 ** rng.uniform(-3.0, 0.5)


def var_variational(
    space: DiscreteConfigSpace, phi, bound: float | None = None, perturbations: int = DEFAULT_PERTURBATIONS, seed: int = 0
) -> VariationalResult:
    """Half variance of ``phi`` as a supremum over null densities.

    The optimizer is ``phi - E phi``; ``perturbations`` random null
    densities around it are checked never to do better.
    """
    phi = space._vector(phi)
    if bound is not None and np.max(np.abs(phi)) > bound:
        raise ContractError(f"observable exceeds its declared bound {bound}")
    half_var = _half_variance(space, phi)
    rho = space.project_null(phi)

    def objective(r):
        return _pairing(space, phi, r) - information(space, r)

    sup_value = objective(rho)
    rng = np.random.default_rng([seed, 1])
    best = -math.inf
    for _ in range(perturbations):
        best = max(best, objective(rho + space.project_null(_scaled_noise(rng, space.n_states))))
    tol = space.tolerance
    h = instance_hash(space, phi)
    records = (
        VerificationRecord("half_variance_equals_sup", h, abs(sup_value - half_var), abs(sup_value - half_var) <= tol),
        VerificationRecord("perturbations_below_sup", h, max(best - sup_value, 0.0), best <= sup_value + tol),
    )
    return VariationalResult(half_var, sup_value, rho, best, records)


def info_variational(
    space: DiscreteConfigSpace, rho, perturbations: int = DEFAULT_PERTURBATIONS, seed: int = 0
) -> VariationalResult:
    """Information of ``rho`` as a supremum over bounded observables (optimizer ``rho``)."""
    rho = space.check_null(rho)
    info = information(space, rho)

    def objective(phi):
        return _pairing(space, phi, rho) - _half_variance(space, phi)

    sup_value = objective(rho)
    rng = np.random.default_rng([seed, 2])
    best = -math.inf
    for _ in range(perturbations):
        best = max(best, objective(rho + _scaled_noise(rng, space.n_states)))
    tol = space.tolerance
    h = instance_hash(space, rho)
    records = (
        VerificationRecord("information_equals_sup", h, abs(sup_value - info), abs(sup_value - info) <= tol),
        VerificationRecord("perturbations_below_information", h, max(best - sup_value, 0.0), best <= sup_value + tol),
    )
    return VariationalResult(info, sup_value, rho.copy(), best, records)


def _check_split(space: DiscreteConfigSpace, split) -> tuple[tuple[int, ...], tuple[int, ...]]:
    a, b = (tuple(int(c) for c in part) for part in split)
    if not a or not b or sorted(a + b) != list(range(space.n_cells)):
        raise ContractError(f"split {split} is not a partition of the {space.n_cells} cells into two non-empty parts")
    return a, b


def _as_split_matrix(space, split, rho) -> tuple[np.ndarray, DiscreteConfigSpace, DiscreteConfigSpace]:
    a, b = _check_split(space, split)
    sa, sb = space.subspace(len(a)), space.subspace(len(b))
    t = np.transpose(space._vector(rho).reshape(space.shape), a + b)
    return t.reshape(sa.n_states, sb.n_states), sa, sb


def marginal_density(space: DiscreteConfigSpace, split, rho) -> tuple[DiscreteConfigSpace, np.ndarray]:
    """Density of the restriction to the first part of ``split``: integrate out the second."""
    rho = space.check_null(rho)
    mat, sa, sb = _as_split_matrix(space, split, rho)
    return sa, mat @ sb.reference


def direct_sum(space: DiscreteConfigSpace, split, rho_a, rho_b) -> np.ndarray:
    """``rho(s) = rho_a(s_A) + rho_b(s_B)`` laid out in the cell order of ``space``."""
    a, b = _check_split(space, split)
    sa, sb = space.subspace(len(a)), space.subspace(len(b))
    ra, rb = sa.check_null(rho_a), sb.check_null(rho_b)
    t = (ra[:, None] + rb[None, :]).reshape(sa.shape + sb.shape)
    return np.transpose(t, np.argsort(a + b)).ravel()


def superadditivity_check(space: DiscreteConfigSpace, split, rho) -> dict:
    """``slack = I_AB - I_A - I_B`` with both marginals; passes when ``slack >= -tol``."""
    rho = space.check_null(rho)
    a, b = _check_split(space, split)
    sa, ra = marginal_density(space, (a, b), rho)
    sb, rb = marginal_density(space, (b, a), rho)
    i_ab, i_a, i_b = information(space, rho), information(sa, ra), information(sb, rb)
    slack = i_ab - i_a - i_b
    rec = VerificationRecord("superadditivity", instance_hash(space, rho), max(-slack, 0.0), slack >= -space.tolerance)
    return {"I_AB": i_ab, "I_A": i_a, "I_B": i_b, "slack": slack, "record": rec}


def block_product_density(
    base: DiscreteConfigSpace, rho_base, m: int
) -> tuple[DiscreteConfigSpace, np.ndarray, VerificationRecord]:
    """``rho_m(s_1..s_m) = sum_j rho_base(s_j)`` on ``m`` copies of ``base``.

    Also checks that the information grows exactly linearly in ``m``.
    """
    if m < 1:
        raise ParameterError("m must be at least 1")
    if base.n_states**m > MAX_STATES:
        raise ParameterError(f"block product with m={m} has {base.n_states**m} states, above {MAX_STATES}")
    rho_base = base.check_null(rho_base)
    space = base.subspace(base.n_cells * m)
    out = np.zeros(1)
    for _ in range(m):
        out = np.add.outer(out, rho_base).ravel()
    want = m * information(base, rho_base)
    got = information(space, out)
    resid = abs(got - want)
    rec = VerificationRecord(f"block_product_linear_m{m}", instance_hash(base, rho_base), resid, resid <= 1e-10 * max(1.0, want))
    return space, out, rec


def random_null_density(space: DiscreteConfigSpace, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return space.project_null(scale * rng.normal(size=space.n_states))


def random_observable(space: DiscreteConfigSpace, rng: np.random.Generator, bound: float = 1.0) -> np.ndarray:
    return rng.uniform(-bound, bound, size=space.n_states)


def verify_instance(space: DiscreteConfigSpace, seed: int, perturbations: int = DEFAULT_PERTURBATIONS) -> list[VerificationRecord]:
    """Run every identity on one random instance drawn from ``seed``."""
    rng = np.random.default_rng([seed, 0])
    phi = random_observable(space, rng)
    rho = random_null_density(space, rng)
    records = list(var_variational(space, phi, 1.0, perturbations, seed).records)
    records += info_variational(space, rho, perturbations, seed).records
    if space.n_cells >= 2:
        half = space.n_cells // 2
        split = (tuple(range(half)), tuple(range(half, space.n_cells)))
        records.append(superadditivity_check(space, split, rho)["record"])
    if space.n_states**2 <= MAX_STATES:
        records.append(block_product_density(space, rho, 2)[2])
    return records
