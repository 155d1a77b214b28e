"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Tolerances and sizes are the contract values; nothing here is tuned to make
a criterion pass.
"""

import math
import time
from functools import partial

import numpy as np
import pytest

from oracles import (
    gaussian_scaled_cumulant,
    gaussian_statistic,
    rate_brute_force,
    renyi_coverage,
    renyi_gap_simulation,
    void_probability,
)
from stabfield.cli import run
from stabfield.empirical import test_function as make_test_function
from stabfield.estimators import (
    CumulantScanConfig,
    PairCorrelationConfig,
    RateBasis,
    arbitrate_factor,
    estimate_lln,
    estimate_rate_basis,
    estimate_scaled_cumulant,
    estimate_value_law,
    estimate_variance_direct,
    estimate_variance_pair,
    rate_quadratic_form,
)
from stabfield.functionals import FunctionalSpec
from stabfield.specinfo import (
    DiscreteConfigSpace,
    block_product_density,
    direct_sum,
    info_variational,
    information,
    random_null_density,
    random_observable,
    superadditivity_check,
    var_variational,
)
from stabfield.stabilization import fit_survival, fit_tail, sample_radius_distribution

pytestmark = pytest.mark.slow

IDENT = make_test_function("poly:1:1")


class Clock:
    def __init__(self, limit_s):
        self.limit = limit_s
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    def ok(self):
        return self.elapsed < self.limit

    def __str__(self):
        return f"{self.elapsed:.1f}s of {self.limit:.0f}s"


def test_criterion_01_variational_identities(record_criterion):
    clock = Clock(60)
    rng = np.random.default_rng(20261018)
    worst_var = worst_info = 0.0
    perturb_ok = True
    for i in range(200):
        space = DiscreteConfigSpace(int(rng.integers(2, 6)), int(rng.integers(1, 3)),
                                    float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.3, 2.0)))
        phi = random_observable(space, rng)
        rho = random_null_density(space, rng)
        rv = var_variational(space, phi, 1.0, seed=i)
        ri = info_variational(space, rho, seed=i)
        worst_var = max(worst_var, abs(rv.sup_value - rv.target))
        worst_info = max(worst_info, abs(ri.sup_value - information(space, rho)))
        perturb_ok &= rv.best_perturbed <= rv.sup_value and ri.best_perturbed <= ri.sup_value
    ok = worst_var <= 1e-12 and worst_info <= 1e-12 and perturb_ok and clock.ok()
    record_criterion(1, ok, f"max |sup - Var/2| = {worst_var:.2e}, max |sup - I_A| = {worst_info:.2e}, "
                            f"perturbations below optimum: {perturb_ok}, {clock}")
    assert ok


def test_criterion_02_superadditivity(record_criterion):
    clock = Clock(60)
    rng = np.random.default_rng(7)
    min_slack = math.inf
    for i in range(1000):
        space = DiscreteConfigSpace(4, 1 + i % 2, float(rng.uniform(0.3, 2.0)), 1.0)
        split = tuple(map(tuple, np.split(rng.permutation(4), 2)))
        min_slack = min(min_slack, superadditivity_check(space, split, random_null_density(space, rng))["slack"])
    max_product = 0.0
    for i in range(200):
        space = DiscreteConfigSpace(4, 1 + i % 2)
        sub = space.subspace(2)
        split = tuple(map(tuple, np.split(rng.permutation(4), 2)))
        rho = direct_sum(space, split, random_null_density(sub, rng), random_null_density(sub, rng))
        max_product = max(max_product, abs(superadditivity_check(space, split, rho)["slack"]))
    max_linear = 0.0
    for base in (DiscreteConfigSpace(2, 1), DiscreteConfigSpace(2, 2), DiscreteConfigSpace(3, 1)):
        rho = random_null_density(base, rng)
        i1 = information(base, rho)
        for m in range(1, 5):
            if base.n_states**m > 10**6:
                continue
            space, rm, _ = block_product_density(base, rho, m)
            max_linear = max(max_linear, abs(information(space, rm) - m * i1))
    ok = min_slack >= -1e-12 and max_product <= 1e-12 and max_linear <= 1e-10 and clock.ok()
    record_criterion(2, ok, f"min slack = {min_slack:.3e}, max |product slack| = {max_product:.2e}, "
                            f"max |I_m - m I_1| = {max_linear:.2e}, {clock}")
    assert ok


CROSS_CASES = [
    ("nn_threshold", FunctionalSpec.nn_threshold(0.3), 1, 1.0),
    ("knn_degree", FunctionalSpec.knn_degree(1, 2), 2, 3.0),
]


def test_criterion_03_variance_cross_check(record_criterion):
    clock = Clock(15 * 60)
    ok, parts = True, []
    for j, (name, spec, d, r_max) in enumerate(CROSS_CASES):
        direct = estimate_variance_direct(spec, IDENT, 1.0, [4096.0], 10_000, seed=300 + j, dimension=d)[0]
        pcfg = PairCorrelationConfig(r_max=r_max, n_shells=10, aux_volume=1024.0, method="mecke", configurations=10_000)
        pair = estimate_variance_pair(spec, IDENT, 1.0, pcfg, seed=400 + j, dimension=d)
        verdict = arbitrate_factor(direct, pair)
        ok &= bool(verdict["matched"])
        by = pair.metadata["by_factor"]
        parts.append(
            f"{name}: direct {direct.value:.4f}+-{direct.std_error:.4f}, "
            f"pair[1/2] {by['0.5']['value']:.4f}+-{by['0.5']['std_error']:.4f} (z={verdict['factors']['0.5']['z']:.2f}), "
            f"pair[1] {by['1']['value']:.4f}+-{by['1']['std_error']:.4f} (z={verdict['factors']['1']['z']:.2f}), "
            f"matched {verdict['matched'] or 'none'}"
        )
    ok &= clock.ok()
    record_criterion(3, ok, "; ".join(parts) + f"; {clock}")
    assert ok


def test_criterion_04_constant_functional(record_criterion):
    clock = Clock(60)
    c, tau = 0.7, 2.0
    spec = FunctionalSpec.constant(c)
    f = make_test_function("poly:2:3")
    fc = float(f(c))
    lln = estimate_lln(spec, f, tau, [256.0, 1024.0], 2000, seed=41, target_replicates=0)
    var = estimate_variance_direct(spec, f, tau, [1024.0], 4000, seed=42)[0]
    mean_ok = all(abs(r.value - tau * fc) <= 3 * r.std_error for r in lln)
    var_ok = abs(var.value - tau * fc**2) <= 3 * var.std_error
    terms = []
    for method in ("insertion", "mecke"):
        pcfg = PairCorrelationConfig(r_max=2.0, n_shells=4, aux_volume=256.0, replicates_per_shell=200,
                                     diagonal_replicates=500, method=method, configurations=500)
        pair = estimate_variance_pair(spec, f, tau, pcfg, seed=43)
        # the second term is tau^2 times the integral under factor 1
        term = tau**2 * pair.metadata["pair_integral"]
        se = tau**2 * pair.metadata["pair_integral_std_error"]
        terms.append((method, term, se))
    pair_ok = all(abs(t) <= 3 * se for _, t, se in terms)
    ok = mean_ok and var_ok and pair_ok and clock.ok()
    record_criterion(4, ok, f"mean {lln[-1].value:.5f}+-{lln[-1].std_error:.5f} vs {tau * fc:.5f}, "
                            f"lambda Var {var.value:.5f}+-{var.std_error:.5f} vs {tau * fc**2:.5f}, "
                            + ", ".join(f"{m} second term {t:.2e}+-{se:.2e}" for m, t, se in terms) + f", {clock}")
    assert ok


def test_criterion_05_void_probability(record_criterion):
    clock = Clock(5 * 60)
    ok, parts = True, []
    for j, (d, tau, t) in enumerate([(1, 1.0, 0.3), (2, 1.0, 0.5)]):
        law = estimate_value_law(FunctionalSpec.nn_threshold(t), tau, 16.0, 100_000, seed=500 + j, dimension=d)
        rep = law.reports[law.support.index(1.0)]
        want = 1 - void_probability(tau, t, d)
        z = abs(rep.value - want) / rep.std_error
        ok &= z <= 3
        parts.append(f"d={d}: {rep.value:.5f}+-{rep.std_error:.5f} vs {want:.5f} (z={z:.2f})")
    ok &= clock.ok()
    record_criterion(5, ok, "; ".join(parts) + f"; {clock}")
    assert ok


def test_criterion_06_renyi_parking(record_criterion):
    clock = Clock(10 * 60)
    spec = FunctionalSpec.packing(1.0)
    frac = {}
    for j, tau in enumerate((2.0, 10.0, 50.0)):
        r = estimate_lln(spec, IDENT, tau, [1e4], 20, seed=600 + j, target_replicates=0)[0]
        # accepted count * ball length / lambda, ball length 1
        frac[tau] = (r.value, r.std_error)
    sims = [renyi_gap_simulation(1000.0, 2e4, s) for s in range(40)]
    jam, jam_se = float(np.mean(sims)), float(np.std(sims, ddof=1) / math.sqrt(len(sims)))
    (a, sa), (b, sb), (c, sc) = frac[2.0], frac[10.0], frac[50.0]
    increasing = (b - a) > 3 * math.hypot(sa, sb) and (c - b) > 3 * math.hypot(sb, sc)
    window = 0.70 <= c <= 0.75
    oracle_ok = abs(jam - 0.7476) <= 0.001 and abs(jam - renyi_coverage(1000.0)) <= 3 * jam_se
    approach = 0 < jam - c < 0.01 and (jam - c) > 3 * math.hypot(jam_se, sc)
    ok = increasing and window and oracle_ok and approach and clock.ok()
    analytic = ", ".join(f"theta({t:g}) = {renyi_coverage(t):.4f}" for t in frac)
    record_criterion(6, ok, f"fractions {a:.4f}+-{sa:.4f}, {b:.4f}+-{sb:.4f}, {c:.4f}+-{sc:.4f} at tau 2/10/50; "
                            f"oracle at tau=1000 {jam:.4f}+-{jam_se:.4f}; analytic {analytic}; {clock}")
    assert ok


def test_criterion_07_exponential_tails(record_criterion):
    clock = Clock(10 * 60)
    packing = fit_tail(sample_radius_distribution(FunctionalSpec.packing(), 1.0, 64.0, 5000, seed=701), 50)
    # NN radii never exceed the threshold, so the probe grid has to resolve (0, t] and reach past t
    nn_grid = tuple(np.round(np.linspace(0.02, 0.6, 30), 6))
    nn_est = sample_radius_distribution(FunctionalSpec.nn_threshold(0.3), 1.0, 64.0, 5000, grid=nn_grid, seed=702)
    nn = fit_tail(nn_est, 50)
    rng = np.random.default_rng(703)
    synth = fit_survival(rng.exponential(0.5, 10_000), np.geomspace(0.05, 5.0, 24), 50)
    ok = (packing.slope < 0 and packing.r_squared >= 0.9 and nn.slope < 0 and nn.r_squared >= 0.9
          and abs(synth.slope + 2) <= 0.1 and clock.ok())
    record_criterion(7, ok, f"packing slope {packing.slope:.3f} R2 {packing.r_squared:.3f}; "
                            f"nn slope {nn.slope:.3f} R2 {nn.r_squared:.3f}; synthetic slope {synth.slope:.3f}; {clock}")
    assert ok


def test_criterion_08_scaled_cumulant(record_criterion):
    clock = Clock(15 * 60)
    v = 0.05
    gauss = estimate_scaled_cumulant(None, None, 1.0, CumulantScanConfig(0.25, (16.0, 64.0, 256.0), 20_000), seed=801,
                                     sampler=partial(gaussian_statistic, v))
    g_ok = all(abs(r.value - gaussian_scaled_cumulant(v)) <= 3 * r.std_error for r in gauss)
    nn = estimate_scaled_cumulant(FunctionalSpec.nn_threshold(0.3), IDENT, 1.0,
                                  CumulantScanConfig(0.25, (250.0, 1000.0, 4000.0), 10_000), seed=802)
    last = nn[-1]
    ratio = last.value / (0.5 * last.metadata["variance_density"])
    ok = g_ok and 0.5 <= ratio <= 1.5 and clock.ok()
    record_criterion(8, ok, "gaussian " + ", ".join(f"{r.value:.4f}+-{r.std_error:.4f}" for r in gauss)
                            + f" vs {v / 2}; nn Lambda " + ", ".join(f"{r.value:.3f}" for r in nn)
                            + f", V_hat {last.metadata['variance_density']:.3f}, ratio at lambda 4000 {ratio:.3f}; {clock}")
    assert ok


def test_criterion_09_rate_function(record_criterion):
    clock = Clock(60)
    fs = [IDENT, make_test_function("one"), make_test_function("cosine:2:0.3")]
    # a binary score makes any three test functions linearly dependent, so use a continuous one
    basis = estimate_rate_basis(FunctionalSpec.germ_grain(), fs, 1.0, method="direct", lam=256.0, replicates=600, seed=901)
    rng = np.random.default_rng(902)
    worst = 0.0
    for _ in range(5):
        g = rng.normal(size=3)
        worst = max(worst, abs(rate_quadratic_form(basis, g) - rate_brute_force(basis.gram, g)))
    A = rng.normal(size=(5, 5))
    nested = RateBasis(tuple(range(5)), A @ A.T + 0.01 * np.eye(5))
    monotone = True
    for _ in range(100):
        g = rng.normal(size=5)
        vals = [rate_quadratic_form(nested.restrict(k), g[:k]) for k in range(1, 6)]
        vals_est = [rate_quadratic_form(basis.restrict(k), g[:k]) for k in range(1, 4)]
        monotone &= all(b >= a for a, b in zip(vals, vals[1:])) and all(b >= a for a, b in zip(vals_est, vals_est[1:]))
    ok = worst <= 1e-6 and monotone and clock.ok()
    record_criterion(9, ok, f"max |J_3 - brute force| = {worst:.2e}, nested monotone on 100 draws: {monotone}, {clock}")
    assert ok


DETERMINISM_SETTINGS = [
    "--set", "process.lambda=64",
    "--set", "process.lambda_grid=16,64",
    "--set", "estimation.replicates=120",
    "--set", "estimation.target_replicates=60",
    "--set", "model.threshold=0.3",
    "--set", "pair.replicates_per_shell=40",
    "--set", "pair.diagonal_replicates=100",
    "--set", "pair.r_max=1.5",
    "--set", "pair.aux_volume=32",
    "--set", "specinfo.instances=3",
]
RADIUS_SETTINGS = ["--set", "model.kind=packing", "--set", "process.lambda=64", "--set", "radius.n_points=400",
                   "--set", "radius.resamples=16", "--set", "radius.min_count=20"]


def test_criterion_10_determinism(tmp_path, record_criterion):
    clock = Clock(5 * 60)
    commands = {c: DETERMINISM_SETTINGS for c in ("sample", "value-law", "lln", "variance", "cumulant-scan", "rate-eval",
                                                  "specinfo-verify")}
    commands["radius-tails"] = RADIUS_SETTINGS
    mismatched, failed = [], []
    for command, settings in commands.items():
        outs = []
        for workers in (1, 4):
            out = tmp_path / f"{command}-{workers}"
            if run([command, "--out", str(out), "--workers", str(workers), "--seed", "1234", *settings]) != 0:
                failed.append(f"{command}@{workers}")
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            mismatched.append(command)
    ok = not mismatched and not failed and clock.ok()
    record_criterion(10, ok, f"{len(commands)} commands at workers 1 and 4, mismatched: {mismatched or 'none'}, "
                             f"non-zero exits: {failed or 'none'}, {clock}")
    assert ok
