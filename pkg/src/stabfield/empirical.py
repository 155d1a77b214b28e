"""Empirical point measures and point-field statistics.

``Z_lambda`` puts mass ``1/lambda`` at the score of every point of a torus
configuration. The point field pairs a bounded local functional with the
score-marked configuration seen from a location ``x``, averaged over ``x``
in the window; the integral over ``x`` is done by quadrature.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError
from .functionals import FunctionalSpec, evaluate_all
from .geometry import PointConfiguration, min_image
from .seeding import stream
from .spatial_index import periodic_tree, shifted_queries

__all__ = [
    "TestFunction",
    "test_function",
    "combine",
    "EmpiricalMeasure",
    "empirical_point_measure",
    "pair_with_test",
    "measure_to_csv",
    "LocalFunctional",
    "local_functional",
    "QuadratureResult",
    "field_quadrature",
    "field_statistic",
    "center",
]


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A continuous bounded function of a score value, with its sup norm."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    sup_norm: float

    def __call__(self, v) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(v, dtype=float)), dtype=float)


@dataclass(frozen=True)
class _ClippedPoly:
    p: int
    bound: float

    def __call__(self, v):
        return np.clip(v**self.p, -self.bound, self.bound)


@dataclass(frozen=True)
class _Logistic:
    slope: float
    shift: float

    def __call__(self, v):
        return 0.5 * (1.0 + np.tanh(0.5 * self.slope * (v - self.shift)))


@dataclass(frozen=True)
class _Cosine:
    freq: float
    phase: float

    def __call__(self, v):
        return np.cos(self.freq * v + self.phase)


@dataclass(frozen=True)
class _Constant:
    c: float

    def __call__(self, v):
        return np.full(np.shape(v), self.c, dtype=float)


@dataclass(frozen=True)
class _Combination:
    functions: tuple
    coeffs: tuple

    def __call__(self, v):
        return sum(c * fn(v) for fn, c in zip(self.functions, self.coeffs))


def _clipped_poly(p: int, bound: float) -> TestFunction:
    if p < 0 or not bound > 0:
        raise ParameterError("clipped polynomial needs p >= 0 and B > 0")
    sup = min(1.0, bound) if p == 0 else bound
    return TestFunction(f"poly:{p}:{bound:g}", _ClippedPoly(p, bound), sup)


def _logistic(slope: float, shift: float) -> TestFunction:
    # the supremum 1 is approached but not attained for slope != 0
    return TestFunction(f"logistic:{slope:g}:{shift:g}", _Logistic(slope, shift), 1.0 if slope else 0.5)


def _cosine(freq: float, phase: float) -> TestFunction:
    sup = 1.0 if freq else abs(math.cos(phase))
    return TestFunction(f"cosine:{freq:g}:{phase:g}", _Cosine(freq, phase), sup)


def _constant(c: float) -> TestFunction:
    return TestFunction(f"const:{c:g}", _Constant(c), abs(c))


_FAMILIES = {
    "poly": (_clipped_poly, (int, float)),
    "logistic": (_logistic, (float, float)),
    "cosine": (_cosine, (float, float)),
    "const": (_constant, (float,)),
}


def test_function(name: str) -> TestFunction:
    """Build a registry test function from a name such as ``poly:2:1.5``.

    Families: ``poly:p:B`` (``clip(v^p, -B, B)``), ``logistic:a:b``,
    ``cosine:w:phi``, ``const:c``; ``one`` and ``zero`` are shorthands.
    """
    name = name.strip()
    if name == "one":
        return _constant(1.0)
    if name == "zero":
        return _constant(0.0)
    head, *args = name.split(":")
    if head not in _FAMILIES:
        raise ParameterError(f"unknown test function {name!r}")
    make, types = _FAMILIES[head]
    if len(args) != len(types):
        raise ParameterError(f"test function {head} takes {len(types)} parameters, got {name!r}")
    try:
        parsed = [t(a) for t, a in zip(types, args)]
    except ValueError as exc:
        raise ParameterError(f"bad parameter in test function {name!r}") from exc
    return make(*parsed)


test_function.__test__ = False


def combine(functions: Sequence[TestFunction], coeffs: Sequence[float]) -> TestFunction:
    """Linear combination ``sum c_i f_i`` (sup norm bounded by ``sum |c_i| |f_i|``)."""
    functions, coeffs = list(functions), [float(c) for c in coeffs]
    if len(functions) != len(coeffs):
        raise ParameterError("one coefficient per function is required")
    label = " + ".join(f"{c:g}*{f.name}" for f, c in zip(functions, coeffs))
    sup = sum(abs(c) * fn.sup_norm for fn, c in zip(functions, coeffs))
    return TestFunction(label, _Combination(tuple(functions), tuple(coeffs)), sup)


# ---------------------------------------------------------------------------
# empirical point measure


@dataclass(frozen=True)
class EmpiricalMeasure:
    values: np.ndarray
    lam: float

    @property
    def weight(self) -> float:
        return 1.0 / self.lam

    @property
    def total_weight(self) -> float:
        return self.values.size / self.lam

    @property
    def atoms(self) -> list[tuple[float, float]]:
        w = self.weight
        return [(float(v), w) for v in self.values]


def empirical_point_measure(config: PointConfiguration, spec: FunctionalSpec) -> EmpiricalMeasure:
    values = np.asarray(evaluate_all(config, spec), dtype=float)
    values.setflags(write=False)
    return EmpiricalMeasure(values, config.geometry.volume())


def pair_with_test(f: TestFunction, Z: EmpiricalMeasure) -> float:
    """``<f, Z> = sum_atoms weight * f(value)`` with exactly rounded summation."""
    if Z.values.size == 0:
        return 0.0
    return math.fsum(f(Z.values).tolist()) / Z.lam


def measure_to_csv(Z: EmpiricalMeasure) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "weight"])
    weight = format(Z.weight, ".17g")
    for v in Z.values:
        w.writerow([format(float(v), ".17g"), weight])
    return buf.getvalue()


def center(value: float, mean_estimate: float) -> float:
    return value - mean_estimate


# ---------------------------------------------------------------------------
# local functionals of the score-marked configuration


@dataclass(frozen=True)
class LocalFunctional:
    """Bounded functional reading marked points within ``support_radius``.

    ``evaluator(rel, marks)`` receives positions relative to the query
    location (all within ``support_radius``) and their score values.
    """

    name: str
    support_radius: float
    bound: float
    evaluator: Callable[[np.ndarray, np.ndarray], float]

    def __call__(self, rel: np.ndarray, marks: np.ndarray) -> float:
        return float(self.evaluator(rel, marks))


def _in_unit_cube(rel: np.ndarray) -> np.ndarray:
    return np.all((rel >= -0.5) & (rel < 0.5), axis=1)


@dataclass(frozen=True)
class _CubeCount:
    cap: float

    def __call__(self, rel, marks):
        return min(float(np.count_nonzero(_in_unit_cube(rel))), self.cap)


@dataclass(frozen=True)
class _MarkSum:
    f: TestFunction
    bound: float

    def __call__(self, rel, marks):
        s = math.fsum(self.f(marks[_in_unit_cube(rel)]).tolist())
        return min(max(s, -self.bound), self.bound)


@dataclass(frozen=True)
class _MarkPattern:
    radius: float
    lo: float
    hi: float

    def __call__(self, rel, marks):
        inside = np.sum(rel * rel, axis=1) < self.radius * self.radius
        return float(np.any(inside & (marks >= self.lo) & (marks <= self.hi)))


def _cube_count(d: int, cap: float) -> LocalFunctional:
    return LocalFunctional(f"cube_count:{cap:g}", 0.5 * math.sqrt(d), cap, _CubeCount(cap))


def _mark_sum(d: int, f: TestFunction, bound: float) -> LocalFunctional:
    return LocalFunctional(f"mark_sum:{f.name}:{bound:g}", 0.5 * math.sqrt(d), bound, _MarkSum(f, bound))


def _mark_pattern(radius: float, lo: float, hi: float) -> LocalFunctional:
    return LocalFunctional(f"mark_pattern:{radius:g}:{lo:g}:{hi:g}", radius, 1.0, _MarkPattern(radius, lo, hi))


def local_functional(name: str, dimension: int) -> LocalFunctional:
    """Registry lookup.

    * ``cube_count[:cap]``: points in the unit cube centred at the location
    * ``mark_sum:<test function>:B``: clipped sum of ``f(score)`` over the unit cube
    * ``mark_pattern:r:lo:hi``: indicator of a score in ``[lo, hi]`` within distance ``r``
    """
    head, _, rest = name.strip().partition(":")
    try:
        if head == "cube_count":
            return _cube_count(dimension, float(rest) if rest else 1e6)
        if head == "mark_sum":
            m = re.fullmatch(r"(.+):([^:]+)", rest)
            if not m:
                raise ParameterError(f"mark_sum needs '<test function>:B', got {name!r}")
            return _mark_sum(dimension, test_function(m.group(1)), float(m.group(2)))
        if head == "mark_pattern":
            r, lo, hi = (float(a) for a in rest.split(":"))
            return _mark_pattern(r, lo, hi)
    except ValueError as exc:
        raise ParameterError(f"bad local functional {name!r}") from exc
    raise ParameterError(f"unknown local functional {name!r}")


# ---------------------------------------------------------------------------
# point-field statistic


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    std_error: float
    n_points: int
    method: str


def _grid_locations(L: float, d: int, Q: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint grid with an even number of nodes per axis, plus subgrid labels."""
    m = max(2, int(round(Q ** (1.0 / d))))
    m += m % 2
    ax = -0.5 * L + (np.arange(m) + 0.5) * (L / m)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    x = np.stack([g.ravel() for g in mesh], axis=1)
    idx = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(m)] * d), indexing="ij")], axis=1)
    # interleaved subgrids of spacing 2h, labelled by index parity
    label = np.zeros(x.shape[0], dtype=np.int64)
    for j in range(d):
        label = 2 * label + (idx[:, j] % 2)
    return x, label


def field_quadrature(
    config: PointConfiguration,
    spec: FunctionalSpec,
    phi: LocalFunctional,
    quadrature: str = "grid",
    Q: int | None = None,
    seed: int = 0,
    marks: np.ndarray | None = None,
) -> QuadratureResult:
    """Average of ``phi`` over quadrature locations, with an error estimate.

    The grid rule's error is estimated from the spread of its ``2^d``
    interleaved half-resolution subgrids; the Monte Carlo rule uses the
    sample standard error.
    """
    geo = config.geometry
    d, L = geo.dimension, geo.side_length
    if phi.support_radius > 0.5 * L:
        raise ParameterError(f"support radius {phi.support_radius} exceeds L/2 = {0.5 * L}")
    n = len(config)
    if Q is None:
        Q = max(1, 4**d * n)
    if Q < 1:
        raise ParameterError("Q must be at least 1")
    if marks is None:
        marks = evaluate_all(config, spec)
    if quadrature == "grid":
        x, label = _grid_locations(L, d, Q)
    elif quadrature == "monte_carlo":
        x = (stream(seed, 0, "field-quadrature").random((Q, d)) - 0.5) * L
        label = None
    else:
        raise ParameterError(f"unknown quadrature {quadrature!r}")
    vals = np.empty(x.shape[0])
    if n == 0:
        vals[:] = [phi(np.zeros((0, d)), np.zeros(0)) for _ in range(x.shape[0])]
    else:
        tree = periodic_tree(config)
        hits = tree.query_ball_point(shifted_queries(config, x), phi.support_radius)
        for q, ids in enumerate(hits):
            ids = np.asarray(ids, dtype=np.int64)
            rel = min_image(config.positions[ids] - x[q][None, :], L)
            vals[q] = phi(rel, marks[ids])
    value = math.fsum(vals.tolist()) / vals.size
    if label is None:
        se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf
    else:
        sub = np.array([vals[label == k].mean() for k in range(2**d)])
        se = float(np.std(sub, ddof=1) / math.sqrt(sub.size))
    return QuadratureResult(value, se, int(vals.size), quadrature)


def field_statistic(
    config: PointConfiguration,
    spec: FunctionalSpec,
    phi: LocalFunctional,
    quadrature: str = "grid",
    Q: int | None = None,
    seed: int = 0,
) -> float:
    """``<phi, Psi_lambda>``: the window average of ``phi`` at the marked configuration."""
    return field_quadrature(config, spec, phi, quadrature, Q, seed).value
