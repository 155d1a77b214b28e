"""Replicated Monte Carlo estimators of the limit objects.

Every replicate draws its randomness from counter-based streams keyed by
``(seed, replicate index, tag)`` and results are reduced in index order, so
an estimate depends only on ``(seed, replicates)`` and not on the number of
worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .empirical import LocalFunctional, TestFunction, empirical_point_measure, field_quadrature, pair_with_test
from .errors import ContractError, NumericError, ParameterError
from .functionals import FunctionalSpec, evaluate_all, evaluate_point
from .geometry import TorusGeometry, min_image, sample_poisson, unit_ball_volume
from .parallel import replicate_map
from .seeding import derive, stream

__all__ = [
    "EstimateReport",
    "ValueLaw",
    "PairCorrelationConfig",
    "PairSamples",
    "MeckeSums",
    "CumulantScanConfig",
    "RateBasis",
    "typical_values",
    "estimate_value_law",
    "estimate_lln",
    "pairing_samples",
    "estimate_variance_direct",
    "direct_gram",
    "pair_samples",
    "pair_bilinear",
    "estimate_variance_pair",
    "arbitrate_factor",
    "log_mean_exp",
    "scaled_cumulant",
    "estimate_scaled_cumulant",
    "rate_quadratic_form",
    "estimate_rate_basis",
]

EXP_OVERFLOW = 709.0
MAX_FLAGGED_FRACTION = 1e-3
PAIR_FACTORS = (0.5, 1.0)
PAIR_METHODS = ("insertion", "mecke")


@dataclass(frozen=True)
class EstimateReport:
    label: str
    value: float
    std_error: float
    replicates: int
    base_seed: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "value": self.value,
            "std_error": self.std_error,
            "replicates": self.replicates,
            "seed": self.base_seed,
            "metadata": self.metadata,
        }


# ---------------------------------------------------------------------------
# small statistics helpers


def _mean(x: np.ndarray) -> float:
    """Mean that is exact for constant input (shifted, exactly rounded sum)."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ContractError("mean of an empty sample")
    x0 = float(x[0])
    return x0 + math.fsum((x - x0).tolist()) / x.size


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    m = _mean(x)
    if x.size < 2:
        return m, math.inf
    return m, float(np.sqrt(np.sum((x - m) ** 2) / (x.size - 1)) / math.sqrt(x.size))


def _variance_jackknife(x: np.ndarray) -> tuple[float, float]:
    """Sample variance and its delete-one jackknife standard error (closed form)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3:
        raise ContractError("variance jackknife needs at least 3 replicates")
    dev = x - _mean(x)
    ss = math.fsum((dev * dev).tolist())
    var = ss / (n - 1)
    loo = (ss - n * dev * dev / (n - 1)) / (n - 2)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return var, se


def _spec_label(spec: FunctionalSpec) -> dict:
    return spec.to_dict()


def _geometry(dimension: int, lam: float) -> TorusGeometry:
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    return TorusGeometry.from_volume(dimension, lam)


def _check_common(tau: float, replicates: int, minimum: int = 1) -> None:
    if not (tau > 0 and math.isfinite(tau)):
        raise ParameterError(f"tau must be positive, got {tau}")
    if replicates < minimum:
        raise ParameterError(f"need at least {minimum} replicates, got {replicates}")


def _check_grid(grid: Sequence[float]) -> tuple[float, ...]:
    g = tuple(float(v) for v in grid)
    if not g or any(v <= 0 for v in g) or any(b <= a for a, b in zip(g, g[1:])):
        raise ParameterError("lambda grid must be positive and strictly increasing")
    return g


# ---------------------------------------------------------------------------
# law of the score at a typical point


def _typical_value(spec: FunctionalSpec, tau: float, geometry: TorusGeometry, seed: int, i: int) -> float:
    cfg = sample_poisson(geometry, tau, seed, aux_bound=spec.aux_bound(), index=i)
    mark = stream(seed, i, "origin-marks")
    cfg, x = cfg.insert(np.zeros(geometry.dimension), float(mark.random()), float(spec.aux_bound() * mark.random()))
    return float(evaluate_point(cfg, x, spec))


def typical_values(
    spec: FunctionalSpec, tau: float, lam_probe: float, replicates: int, seed: int, dimension: int = 1, workers: int = 1
) -> np.ndarray:
    """``xi(0, P + {0})`` on ``replicates`` independent probe tori."""
    _check_common(tau, replicates)
    fn = partial(_typical_value, spec, tau, _geometry(dimension, lam_probe), seed)
    return np.asarray(replicate_map(fn, replicates, workers), dtype=float)


@dataclass(frozen=True)
class ValueLaw:
    support: tuple
    probabilities: tuple[float, ...]
    reports: tuple[EstimateReport, ...]
    samples: np.ndarray = field(repr=False)


def estimate_value_law(
    spec: FunctionalSpec,
    tau: float,
    lam_probe: float,
    replicates: int,
    bins=None,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
) -> ValueLaw:
    """Empirical law of the score at a typical point, with binomial errors.

    ``bins=None`` tabulates each distinct value; an integer or an edge
    sequence bins the values as ``numpy.histogram`` does.
    """
    values = typical_values(spec, tau, lam_probe, replicates, seed, dimension, workers)
    n = values.size
    if bins is None:
        support = tuple(float(v) for v in np.unique(values))
        counts = [int(np.count_nonzero(values == v)) for v in support]
        labels = [f"P(xi = {v:.17g})" for v in support]
    else:
        counts_arr, edges = np.histogram(values, bins=bins)
        counts = [int(c) for c in counts_arr]
        support = tuple(zip(edges[:-1].tolist(), edges[1:].tolist()))
        labels = [f"P(xi in [{a:.17g}, {b:.17g}))" for a, b in support]
    meta = {"lambda": lam_probe, "tau": tau, "dimension": dimension, "spec": _spec_label(spec)}
    reports = []
    probs = []
    for label, k in zip(labels, counts):
        p = k / n
        probs.append(p)
        reports.append(EstimateReport(label, p, math.sqrt(p * (1 - p) / n), n, seed, dict(meta, count=k)))
    return ValueLaw(support, tuple(probs), tuple(reports), values)


# ---------------------------------------------------------------------------
# pairings <f, Z_lambda> and the law of large numbers


def _pairing_replicate(spec, functions, tau, geometry, seed, i) -> np.ndarray:
    cfg = sample_poisson(geometry, tau, seed, aux_bound=spec.aux_bound(), index=i)
    Z = empirical_point_measure(cfg, spec)
    return np.array([pair_with_test(f, Z) for f in functions])


def pairing_samples(
    spec: FunctionalSpec,
    functions: Sequence[TestFunction],
    tau: float,
    lam: float,
    replicates: int,
    seed: int,
    dimension: int = 1,
    workers: int = 1,
) -> np.ndarray:
    """Array ``(replicates, len(functions))`` of ``<f_j, Z_lambda>``."""
    _check_common(tau, replicates)
    fn = partial(_pairing_replicate, spec, tuple(functions), tau, _geometry(dimension, lam), seed)
    return np.asarray(replicate_map(fn, replicates, workers), dtype=float).reshape(replicates, len(functions))


def _lambda_seed(seed: int, j: int, tag: str) -> int:
    return derive(seed, j, tag)


def estimate_lln(
    spec: FunctionalSpec,
    f: TestFunction,
    tau: float,
    lambda_grid: Sequence[float],
    replicates: int,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
    target_replicates: int | None = None,
) -> list[EstimateReport]:
    """Replicate mean of ``<f, Z_lambda>`` along a lambda grid.

    Each report carries the companion target ``tau <f, nu>`` estimated from
    the typical-point law at the largest lambda (skipped when
    ``target_replicates == 0``).
    """
    grid = _check_grid(lambda_grid)
    _check_common(tau, replicates, 2)
    target_meta = {}
    n_target = replicates if target_replicates is None else target_replicates
    if n_target:
        xs = typical_values(spec, tau, grid[-1], n_target, _lambda_seed(seed, 0, "lln-target"), dimension, workers)
        m, se = _mean_se(f(xs))
        target_meta = {"target": tau * m, "target_std_error": tau * se, "target_replicates": n_target}
    out = []
    for j, lam in enumerate(grid):
        s = pairing_samples(spec, [f], tau, lam, replicates, _lambda_seed(seed, j, "lln"), dimension, workers)[:, 0]
        m, se = _mean_se(s)
        meta = {"lambda": lam, "tau": tau, "dimension": dimension, "spec": _spec_label(spec), "f": f.name}
        out.append(EstimateReport(f"<f, Z_lambda> at lambda={lam:.17g}", m, se, replicates, seed, dict(meta, **target_meta)))
    return out


# ---------------------------------------------------------------------------
# variance density: direct replication


def estimate_variance_direct(
    spec: FunctionalSpec,
    f: TestFunction,
    tau: float,
    lambda_grid: Sequence[float],
    replicates: int,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
) -> list[EstimateReport]:
    """``lambda * Var(<f, Z_lambda>)`` per grid point with jackknife errors."""
    grid = _check_grid(lambda_grid)
    _check_common(tau, replicates, 100)
    out = []
    for j, lam in enumerate(grid):
        s = pairing_samples(spec, [f], tau, lam, replicates, _lambda_seed(seed, j, "variance"), dimension, workers)[:, 0]
        var, se = _variance_jackknife(s)
        meta = {
            "lambda": lam,
            "tau": tau,
            "dimension": dimension,
            "spec": _spec_label(spec),
            "f": f.name,
            "mean": _mean(s),
        }
        out.append(EstimateReport(f"lambda*Var <f, Z_lambda> at lambda={lam:.17g}", lam * var, lam * se, replicates, seed, meta))
    return out


def direct_gram(samples: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """``lambda * Cov`` of pairing columns and delta-method standard errors."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    dev = x - np.array([_mean(c) for c in x.T])[None, :]
    prod = dev[:, :, None] * dev[:, None, :]
    cov = prod.sum(axis=0) / (n - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return lam * 0.5 * (cov + cov.T), lam * se


# ---------------------------------------------------------------------------
# variance density: two-point formula


@dataclass(frozen=True)
class PairCorrelationConfig:
    """Truncation and sampling plan for the two-point integral.

    ``pair_term_factor`` selects which convention the headline value uses;
    both conventions are always computed and reported.

    ``method="insertion"`` adds ``0`` and a shell point ``x`` to a fresh
    Poisson sample per draw (``replicates_per_shell`` draws per shell plus
    ``diagonal_replicates`` typical-point draws). ``method="mecke"`` instead
    sums over all pairs closer than ``r_max`` inside each of
    ``configurations`` Poisson samples; by the Mecke formula this has the
    same expectation and uses every pair, so it is far less noisy per unit
    of work.
    """

    r_max: float
    n_shells: int = 8
    aux_volume: float = 256.0
    replicates_per_shell: int = 2000
    diagonal_replicates: int = 10_000
    pair_term_factor: float = 1.0
    method: str = "insertion"
    configurations: int = 200

    def __post_init__(self):
        if not self.r_max > 0:
            raise ParameterError("r_max must be positive")
        if self.method not in PAIR_METHODS:
            raise ParameterError(f"pair method must be one of {PAIR_METHODS}, got {self.method!r}")
        if self.configurations < 2:
            raise ParameterError("need at least 2 configurations")
        if self.n_shells < 1 or self.replicates_per_shell < 2 or self.diagonal_replicates < 2:
            raise ParameterError("need n_shells >= 1 and at least 2 replicates per shell and on the diagonal")
        if self.pair_term_factor not in PAIR_FACTORS:
            raise ParameterError(f"pair_term_factor must be one of {PAIR_FACTORS}")
        if not self.aux_volume > 0:
            raise ParameterError("aux_volume must be positive")

    def side_length(self, dimension: int) -> float:
        return self.aux_volume ** (1.0 / dimension)


@dataclass(frozen=True)
class PairSamples:
    """Raw scores from the two-point sampler; test functions are applied later."""

    tau: float
    dimension: int
    diagonal: np.ndarray
    shell: np.ndarray
    xi_origin: np.ndarray
    xi_other: np.ndarray
    shell_volumes: np.ndarray

    @property
    def ball_volume(self) -> float:
        return float(self.shell_volumes.sum())


def _random_direction(rng: np.random.Generator, d: int) -> np.ndarray:
    if d == 1:
        return np.array([1.0 if rng.random() < 0.5 else -1.0])
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _score_pair(cfg, i, j, spec) -> tuple[float, float]:
    if spec.kind in ("nn_threshold", "germ_grain_volume", "constant"):
        return float(evaluate_point(cfg, i, spec)), float(evaluate_point(cfg, j, spec))
    vals = evaluate_all(cfg, spec)
    return float(vals[i]), float(vals[j])


def _pair_replicate(spec, tau, geometry, edges, per_shell, seed, j) -> tuple[float, float]:
    d = geometry.dimension
    k = j // per_shell
    rng = stream(seed, j, "pair-point")
    lo, hi = edges[k] ** d, edges[k + 1] ** d
    r = (lo + rng.random() * (hi - lo)) ** (1.0 / d)
    x = r * _random_direction(rng, d)
    ab = spec.aux_bound()
    cfg = sample_poisson(geometry, tau, seed, aux_bound=ab, index=j)
    cfg, i0 = cfg.insert(np.zeros(d), float(rng.random()), float(ab * rng.random()))
    cfg, i1 = cfg.insert(x, float(rng.random()), float(ab * rng.random()))
    return _score_pair(cfg, i0, i1, spec)


@dataclass(frozen=True)
class MeckeSums:
    """Per-configuration pair sums for a fixed list of test functions.

    For configuration ``r`` (volume ``lam``): ``diag[r, i, j] = sum_x
    f_i f_j(xi_x) / lam``, ``mass[r, i] = sum_x f_i(xi_x) / lam`` and
    ``shells[r, k, i, j]`` is the symmetrised sum over ordered pairs at
    distance in shell ``k``, divided by ``lam``.
    """

    tau: float
    dimension: int
    functions: tuple
    diag: np.ndarray
    mass: np.ndarray
    shells: np.ndarray
    shell_volumes: np.ndarray

    @property
    def ball_volume(self) -> float:
        return float(self.shell_volumes.sum())

    def index(self, f: TestFunction) -> int:
        for i, g in enumerate(self.functions):
            if g is f or g.name == f.name:
                return i
        raise ContractError(f"test function {f.name!r} was not summed in these pair samples")


def _mecke_replicate(spec, tau, geometry, edges, functions, seed, i) -> np.ndarray:
    cfg = sample_poisson(geometry, tau, seed, aux_bound=spec.aux_bound(), index=i)
    k = len(functions)
    ns = len(edges) - 1
    lam = geometry.volume()
    L = geometry.side_length
    if len(cfg) == 0:
        return np.zeros(k * k + k + ns * k * k)
    F = np.stack([f(evaluate_all(cfg, spec)) for f in functions], axis=1)
    pos = np.mod(cfg.positions + 0.5 * L, L)
    pos[pos >= L] = 0.0
    ij = cKDTree(pos, boxsize=L).query_pairs(edges[-1], output_type="ndarray")
    P = np.zeros((ns, k, k))
    if ij.size:
        delta = min_image(cfg.positions[ij[:, 0]] - cfg.positions[ij[:, 1]], L)
        shell = np.minimum(np.searchsorted(edges, np.sqrt(np.sum(delta * delta, axis=1)), side="right") - 1, ns - 1)
        Fi, Fj = F[ij[:, 0]], F[ij[:, 1]]
        for s in range(ns):
            m = shell == s
            cross = Fi[m].T @ Fj[m]
            P[s] = cross + cross.T
    return np.concatenate([(F.T @ F).ravel(), F.sum(axis=0), P.ravel()]) / lam


def _shell_edges(pcfg: PairCorrelationConfig, dimension: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, pcfg.r_max, pcfg.n_shells + 1)
    vols = unit_ball_volume(dimension) * (edges[1:] ** dimension - edges[:-1] ** dimension)
    return edges, vols


def pair_samples(
    spec: FunctionalSpec,
    tau: float,
    pcfg: PairCorrelationConfig,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
    functions: Sequence[TestFunction] = (),
) -> PairSamples | MeckeSums:
    """Samples for the two-point formula.

    Insertion method: for each pair sample a point ``x`` is drawn uniformly
    in its shell (radial density proportional to ``r^(d-1)``), both ``0``
    and ``x`` are added to a fresh Poisson sample on the auxiliary torus and
    the scores at both points are recorded; test functions are applied
    later. Mecke method: pair sums over whole configurations for the given
    ``functions``.
    """
    _check_common(tau, 2)
    geometry = _geometry(dimension, pcfg.aux_volume)
    if pcfg.r_max > 0.5 * geometry.side_length:
        raise ParameterError(f"r_max {pcfg.r_max} exceeds half the auxiliary torus side {0.5 * geometry.side_length}")
    edges, vols = _shell_edges(pcfg, dimension)
    if pcfg.method == "mecke":
        functions = tuple(functions)
        if not functions:
            raise ParameterError("the mecke pair method needs the test functions up front")
        k, ns = len(functions), pcfg.n_shells
        fn = partial(_mecke_replicate, spec, tau, geometry, edges, functions, derive(seed, 0, "pair-mecke"))
        rows = np.asarray(replicate_map(fn, pcfg.configurations, workers), dtype=float)
        n = rows.shape[0]
        return MeckeSums(
            tau=tau,
            dimension=dimension,
            functions=functions,
            diag=rows[:, : k * k].reshape(n, k, k),
            mass=rows[:, k * k : k * k + k],
            shells=rows[:, k * k + k :].reshape(n, ns, k, k),
            shell_volumes=vols,
        )
    diag = typical_values(spec, tau, pcfg.aux_volume, pcfg.diagonal_replicates, derive(seed, 0, "pair-diagonal"), dimension, workers)
    per = pcfg.replicates_per_shell
    fn = partial(_pair_replicate, spec, tau, geometry, tuple(edges.tolist()), per, derive(seed, 0, "pair-shells"))
    rows = np.asarray(replicate_map(fn, per * pcfg.n_shells, workers), dtype=float)
    return PairSamples(
        tau=tau,
        dimension=dimension,
        diagonal=diag,
        shell=np.repeat(np.arange(pcfg.n_shells), per),
        xi_origin=rows[:, 0],
        xi_other=rows[:, 1],
        shell_volumes=vols,
    )


def _cov(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum((a - a.mean()) * (b - b.mean())) / (a.size - 1))


def _mecke_bilinear(samples: MeckeSums, fi: TestFunction, fj: TestFunction, factor: float) -> dict:
    i, j = samples.index(fi), samples.index(fj)
    tau = samples.tau
    vb = samples.ball_volume
    a_r = samples.diag[:, i, j]
    si, sj = samples.mass[:, i], samples.mass[:, j]
    p_r = samples.shells[:, :, i, j].sum(axis=1)
    si_bar, sj_bar = _mean(si), _mean(sj)
    # tau^2 times the bracket integral, and its per-configuration linearisation
    pair = _mean(p_r) - vb * si_bar * sj_bar
    lin_pair = p_r - vb * (sj_bar * si + si_bar * sj)
    n = a_r.size
    se_pair = float(np.std(lin_pair, ddof=1)) / math.sqrt(n)
    se_value = float(np.std(a_r + factor * lin_pair, ddof=1)) / math.sqrt(n)
    return {
        "value": _mean(a_r) + factor * pair,
        "std_error": se_value,
        "diagonal": _mean(a_r),
        "integral": pair / tau**2,
        "integral_std_error": se_pair / tau**2,
    }


def pair_bilinear(samples: PairSamples | MeckeSums, fi: TestFunction, fj: TestFunction, factor: float) -> dict:
    """``tau <fi x fj, mu>`` under one factor convention, with a delta-method error.

    Returns a dict with ``value``, ``std_error``, ``diagonal`` (the
    ``E fi fj`` part times tau), ``integral`` (the truncated ``dx`` integral
    of the two-point bracket) and ``integral_std_error``.
    """
    if isinstance(samples, MeckeSums):
        return _mecke_bilinear(samples, fi, fj, factor)
    tau = samples.tau
    d0 = samples.diagonal
    u, v = fi(d0), fj(d0)
    uv = u * v
    a, mi, mj = _mean(uv), _mean(u), _mean(v)
    n = d0.size
    # symmetrised two-point products
    prod = 0.5 * (fi(samples.xi_origin) * fj(samples.xi_other) + fj(samples.xi_origin) * fi(samples.xi_other))
    shell_means = np.empty(samples.shell_volumes.size)
    shell_vars = np.empty(samples.shell_volumes.size)
    for k in range(shell_means.size):
        pk = prod[samples.shell == k]
        shell_means[k], se_k = _mean_se(pk)
        shell_vars[k] = se_k**2
    vb = samples.ball_volume
    vk = samples.shell_volumes
    # exact zero whenever every bracket sample is identical to m_i m_j
    brackets = shell_means - mi * mj
    integral = math.fsum((vk * brackets).tolist())
    value = tau * a + factor * tau * tau * integral
    # delta method over (a, mi, mj) from the diagonal batch and independent shells
    cols = np.stack([uv, u, v])
    C = np.array([[_cov(cols[p], cols[q]) for q in range(3)] for p in range(3)]) / n
    grad_v = np.array([tau, -factor * tau * tau * vb * mj, -factor * tau * tau * vb * mi])
    var_v = float(grad_v @ C @ grad_v) + float(np.sum((factor * tau * tau * vk) ** 2 * shell_vars))
    grad_i = np.array([0.0, -vb * mj, -vb * mi])
    var_i = float(grad_i @ C @ grad_i) + float(np.sum(vk**2 * shell_vars))
    return {
        "value": value,
        "std_error": math.sqrt(max(var_v, 0.0)),
        "diagonal": tau * a,
        "integral": integral,
        "integral_std_error": math.sqrt(max(var_i, 0.0)),
    }


def estimate_variance_pair(
    spec: FunctionalSpec,
    f: TestFunction,
    tau: float,
    pcfg: PairCorrelationConfig,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
    samples: PairSamples | MeckeSums | None = None,
) -> EstimateReport:
    """Variance density from the two-point formula, both factor conventions reported."""
    if samples is None:
        samples = pair_samples(spec, tau, pcfg, seed, dimension=dimension, workers=workers, functions=(f,))
    by_factor = {c: pair_bilinear(samples, f, f, c) for c in PAIR_FACTORS}
    head = by_factor[pcfg.pair_term_factor]
    meta = {
        "tau": tau,
        "dimension": dimension,
        "spec": _spec_label(spec),
        "f": f.name,
        "r_max": pcfg.r_max,
        "n_shells": pcfg.n_shells,
        "aux_volume": pcfg.aux_volume,
        "pair_term_factor": pcfg.pair_term_factor,
        "method": pcfg.method,
        "diagonal_term": head["diagonal"],
        "pair_integral": head["integral"],
        "pair_integral_std_error": head["integral_std_error"],
        "by_factor": {format(c, "g"): {"value": r["value"], "std_error": r["std_error"]} for c, r in by_factor.items()},
    }
    if pcfg.method == "mecke":
        reps = pcfg.configurations
    else:
        reps = pcfg.diagonal_replicates + pcfg.replicates_per_shell * pcfg.n_shells
    return EstimateReport("variance density (two-point formula)", head["value"], head["std_error"], reps, seed, meta)


def arbitrate_factor(direct: EstimateReport, pair: EstimateReport, n_se: float = 3.0) -> dict:
    """Which factor conventions agree with the direct estimate within ``n_se`` combined errors."""
    out = {}
    for key, r in pair.metadata["by_factor"].items():
        combined = math.hypot(direct.std_error, r["std_error"])
        z = abs(direct.value - r["value"]) / combined if combined > 0 else (0.0 if direct.value == r["value"] else math.inf)
        out[key] = {"z": z, "match": z <= n_se}
    return {"factors": out, "matched": [k for k, v in out.items() if v["match"]]}


# ---------------------------------------------------------------------------
# scaled cumulants


@dataclass(frozen=True)
class CumulantScanConfig:
    beta: float
    lambda_grid: tuple[float, ...]
    replicates: int

    def __post_init__(self):
        if not 0 < self.beta < 0.5:
            raise ParameterError(f"beta must lie in (0, 1/2), got {self.beta}")
        object.__setattr__(self, "lambda_grid", _check_grid(self.lambda_grid))
        if self.replicates < 3:
            raise ParameterError("need at least 3 replicates")

    def alpha(self, lam: float) -> float:
        return lam**self.beta


def log_mean_exp(y: np.ndarray) -> tuple[float, np.ndarray]:
    """``log mean exp(y)`` and its delete-one values, computed stably."""
    y = np.asarray(y, dtype=float)
    n = y.size
    top = int(np.argmax(y))
    m = y[top]
    w = np.exp(y - m)
    total = math.fsum(w.tolist())
    full = m + math.log(total / n)
    with np.errstate(divide="ignore"):
        loo = m + np.log(np.maximum(total - w, 0.0) / (n - 1))
    # removing the maximum: recompute around the runner-up
    rest = np.delete(y, top)
    m2 = rest.max()
    loo[top] = m2 + math.log(math.fsum(np.exp(rest - m2).tolist()) / (n - 1))
    return full, loo


def scaled_cumulant(samples: np.ndarray, centering: np.ndarray, lam: float, alpha: float) -> dict:
    """``(1/alpha^2) log mean exp(alpha sqrt(lam) (S - mean(S_centering)))``.

    The standard error combines the delete-one jackknife over ``samples``
    with the first-order effect of the centering batch mean.
    """
    s = np.asarray(samples, dtype=float)
    c = np.asarray(centering, dtype=float)
    c_mean, c_se = _mean_se(c)
    y = alpha * math.sqrt(lam) * (s - c_mean)
    flagged = ~np.isfinite(y) | (y > EXP_OVERFLOW)
    n_flag = int(np.count_nonzero(flagged))
    if n_flag > MAX_FLAGGED_FRACTION * y.size:
        raise NumericError(f"{n_flag} of {y.size} replicates overflow the exponential moment")
    y = y[np.isfinite(y)]
    full, loo = log_mean_exp(y)
    vals = loo / alpha**2
    n = y.size
    se_jack = math.sqrt((n - 1) / n * float(np.sum((vals - vals.mean()) ** 2)))
    se_center = math.sqrt(lam) / alpha * c_se
    return {
        "value": full / alpha**2,
        "std_error": math.hypot(se_jack, se_center),
        "flagged": n_flag,
        "centering_mean": c_mean,
    }


def _statistic_replicate(spec, statistic, tau, geometry, quadrature_points, seed, i) -> float:
    cfg = sample_poisson(geometry, tau, seed, aux_bound=spec.aux_bound(), index=i)
    if isinstance(statistic, TestFunction):
        return pair_with_test(statistic, empirical_point_measure(cfg, spec))
    return field_quadrature(cfg, spec, statistic, "grid", quadrature_points).value


def estimate_scaled_cumulant(
    spec: FunctionalSpec | None,
    statistic: TestFunction | LocalFunctional | None,
    tau: float,
    ccfg: CumulantScanConfig,
    seed: int = 0,
    *,
    dimension: int = 1,
    workers: int = 1,
    sampler: Callable[[float, int, int], float] | None = None,
    quadrature_points: int | None = None,
    half_variance: float | None = None,
) -> list[EstimateReport]:
    """Scaled cumulant along the lambda grid.

    The statistic is ``<f, Z_lambda>`` for a test function or the point-field
    statistic for a local functional. ``sampler(lam, seed, index)`` replaces
    the simulator entirely (used for synthetic checks); it must be picklable
    when ``workers > 1``. The centering mean comes from an independent batch
    of the same size. Each report also carries ``lambda * Var(S)`` of the
    main batch as ``variance_density``.
    """
    if sampler is None and (spec is None or statistic is None):
        raise ParameterError("need a functional spec and a statistic unless a sampler is given")
    _check_common(tau, ccfg.replicates, 3)
    out = []
    for j, lam in enumerate(ccfg.lambda_grid):
        main_seed = _lambda_seed(seed, j, "cumulant-main")
        center_seed = _lambda_seed(seed, j, "cumulant-centering")
        if sampler is not None:
            draw = [partial(sampler, lam, s) for s in (main_seed, center_seed)]
        else:
            geo = _geometry(dimension, lam)
            draw = [partial(_statistic_replicate, spec, statistic, tau, geo, quadrature_points, s) for s in (main_seed, center_seed)]
        main = np.asarray(replicate_map(draw[0], ccfg.replicates, workers), dtype=float)
        cent = np.asarray(replicate_map(draw[1], ccfg.replicates, workers), dtype=float)
        alpha = ccfg.alpha(lam)
        res = scaled_cumulant(main, cent, lam, alpha)
        finite = main[np.isfinite(main)]
        lam_var, lam_var_se = _variance_jackknife(finite)
        meta = {
            "lambda": lam,
            "beta": ccfg.beta,
            "alpha": alpha,
            "tau": tau,
            "dimension": dimension,
            "statistic": getattr(statistic, "name", "injected sampler") if sampler is None else "injected sampler",
            "spec": _spec_label(spec) if spec is not None else None,
            "flagged": res["flagged"],
            "centering_mean": res["centering_mean"],
            "variance_density": lam * lam_var,
            "variance_density_std_error": lam * lam_var_se,
        }
        if half_variance is not None:
            meta["half_variance"] = half_variance
            meta["ratio_to_half_variance"] = res["value"] / half_variance
        out.append(EstimateReport(f"scaled cumulant at lambda={lam:.17g}", res["value"], res["std_error"], ccfg.replicates, seed, meta))
    return out


# ---------------------------------------------------------------------------
# quadratic rate function on a finite basis


@dataclass(frozen=True)
class RateBasis:
    functions: tuple
    gram: np.ndarray
    gram_std_error: np.ndarray | None = None

    def restrict(self, k: int) -> "RateBasis":
        """The nested basis made of the first ``k`` functions."""
        se = None if self.gram_std_error is None else self.gram_std_error[:k, :k]
        return RateBasis(self.functions[:k], self.gram[:k, :k], se)


def rate_quadratic_form(basis: RateBasis | np.ndarray, g, eps: float | None = None) -> float:
    """``J_k = sup_c (c.g - c'Mc/2) = g' M^+ g / 2`` with an eigenvalue floor.

    Eigen-directions with eigenvalue at or below ``eps`` (default
    ``1e-10 * trace / k``) are dropped, so the value is a lower bound for the
    supremum over the span.
    """
    M = np.asarray(basis.gram if isinstance(basis, RateBasis) else basis, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != g.size:
        raise ContractError("gram must be square and match the coefficient vector")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(g))):
        raise NumericError("gram matrix or coefficients are not finite")
    scale = max(float(np.max(np.abs(M))), 1e-300)
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise ContractError("gram matrix is not symmetric")
    k = g.size
    if eps is None:
        eps = 1e-10 * max(float(np.trace(M)), 0.0) / k
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    keep = w > eps
    proj = U[:, keep].T @ g
    return 0.5 * float(np.sum(proj * proj / w[keep]))


def estimate_rate_basis(
    spec: FunctionalSpec,
    functions: Sequence[TestFunction],
    tau: float,
    *,
    method: str = "direct",
    lam: float = 1024.0,
    replicates: int = 1000,
    pcfg: PairCorrelationConfig | None = None,
    seed: int = 0,
    dimension: int = 1,
    workers: int = 1,
) -> RateBasis:
    """Estimate the gram ``M_ij = tau <f_i x f_j, mu>`` and symmetrise it.

    ``direct`` uses ``lambda * Cov`` of the pairings at one lambda; ``pair``
    uses the two-point formula under ``pcfg.pair_term_factor``.
    """
    functions = tuple(functions)
    k = len(functions)
    if method == "direct":
        x = pairing_samples(spec, functions, tau, lam, replicates, derive(seed, 0, "rate-direct"), dimension, workers)
        gram, se = direct_gram(x, lam)
    elif method == "pair":
        if pcfg is None:
            raise ParameterError("method 'pair' needs a PairCorrelationConfig")
        samples = pair_samples(
            spec, tau, pcfg, derive(seed, 0, "rate-pair"), dimension=dimension, workers=workers, functions=functions
        )
        gram = np.empty((k, k))
        se = np.empty((k, k))
        for i in range(k):
            for j in range(i, k):
                r = pair_bilinear(samples, functions[i], functions[j], pcfg.pair_term_factor)
                gram[i, j] = gram[j, i] = r["value"]
                se[i, j] = se[j, i] = r["std_error"]
    else:
        raise ParameterError(f"unknown gram method {method!r}")
    return RateBasis(functions, 0.5 * (gram + gram.T), se)
