import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_sequential
from stabfield.errors import CertificationError, ParameterError
from stabfield.empirical import (
    EmpiricalMeasure,
    center,
    combine,
    empirical_point_measure,
    field_quadrature,
    field_statistic,
    local_functional,
    measure_to_csv,
    pair_with_test,
    test_function as make_test_function,
)
from stabfield.functionals import FunctionalSpec, evaluate_all
from stabfield.geometry import PointConfiguration, TorusGeometry, sample_poisson
from stabfield.seeding import stream

FAMILY_NAMES = ["one", "zero", "const:-2.5", "poly:1:1", "poly:2:3", "poly:3:0.5", "logistic:2:0.5",
                "cosine:3:0.2", "poly:0:4"]


class TestTestFunctions:
    @pytest.mark.parametrize("name", FAMILY_NAMES)
    def test_sup_norm_holds(self, name):
        f = make_test_function(name)
        v = np.linspace(-50, 50, 100_001)
        assert np.max(np.abs(f(v))) <= f.sup_norm + 1e-15

    @pytest.mark.parametrize("name", ["poly:1:1", "poly:2:3", "cosine:3:0.2", "const:-2.5"])
    def test_sup_norm_attained(self, name):
        f = make_test_function(name)
        v = np.linspace(-50, 50, 100_001)
        assert np.max(np.abs(f(v))) == pytest.approx(f.sup_norm, rel=1e-6)

    def test_values(self):
        assert make_test_function("poly:2:3")(np.array([1.0, 2.0, -1.5])).tolist() == [1.0, 3.0, 2.25]
        assert make_test_function("logistic:2:0.5")(0.5) == pytest.approx(0.5)

    @pytest.mark.parametrize("bad", ["nope", "poly:1", "poly:x:1", "poly:-1:1", "poly:1:0"])
    def test_bad_names(self, bad):
        with pytest.raises(ParameterError):
            make_test_function(bad)


def random_measure(seed, n=500, lam=123.0):
    return EmpiricalMeasure(stream(seed, 0, "atoms").normal(size=n) * 3, lam)


class TestEmpiricalMeasure:
    def test_empty(self):
        c = PointConfiguration.empty(TorusGeometry(1, 10.0))
        Z = empirical_point_measure(c, FunctionalSpec.packing())
        assert Z.total_weight == 0 and pair_with_test(make_test_function("one"), Z) == 0.0

    def test_constant_collapse(self):
        c = sample_poisson(TorusGeometry(2, 6.0), 2.0, 1)
        Z = empirical_point_measure(c, FunctionalSpec.constant(0.7))
        assert np.all(Z.values == 0.7)
        f = make_test_function("cosine:1:0")
        assert pair_with_test(f, Z) == pytest.approx(math.cos(0.7) * len(c) / 36.0, rel=1e-14)
        assert pair_with_test(make_test_function("one"), Z) == pytest.approx(len(c) / 36.0, rel=1e-15)

    def test_weights(self):
        c = sample_poisson(TorusGeometry(1, 50.0), 1.0, 2)
        Z = empirical_point_measure(c, FunctionalSpec.nn_threshold(0.5))
        assert all(w == 1 / 50.0 for _, w in Z.atoms)
        assert Z.total_weight == len(c) / 50.0

    def test_packing_atoms_match_oracle(self):
        g = TorusGeometry(1, 12.0)
        for s in range(10):
            c = sample_poisson(g, 1.0, 100 + s)
            want = brute_sequential(c.positions.tolist(), c.time.tolist(), [0.5] * len(c), box=12.0)
            np.testing.assert_array_equal(empirical_point_measure(c, FunctionalSpec.packing()).values, want)

    def test_certification_failure(self):
        c = PointConfiguration(TorusGeometry(1, 0.5), [[0.0]], [0.1], [0.0])
        with pytest.raises(CertificationError):
            empirical_point_measure(c, FunctionalSpec.packing())

    def test_pairing_matches_exact_sum(self):
        for s in range(20):
            Z = random_measure(s)
            f = make_test_function("poly:3:10")
            exact = sum((Fraction(float(v)) for v in f(Z.values)), Fraction(0)) / Fraction(Z.lam)
            assert abs(pair_with_test(f, Z) - float(exact)) <= 1e-12 * max(abs(float(exact)), 1e-300)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
    def test_bilinear_in_f(self, seed, a, b):
        Z = random_measure(seed)
        f, g = make_test_function("cosine:1:0.3"), make_test_function("poly:2:4")
        lhs = pair_with_test(combine([f, g], [a, b]), Z)
        rhs = a * pair_with_test(f, Z) + b * pair_with_test(g, Z)
        scale = (abs(a) + abs(b)) * 4 * Z.total_weight
        assert abs(lhs - rhs) <= 1e-12 * max(scale, 1e-300)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 1000), st.sampled_from(FAMILY_NAMES))
    def test_bound(self, seed, name):
        Z = random_measure(seed)
        f = make_test_function(name)
        assert abs(pair_with_test(f, Z)) <= f.sup_norm * Z.total_weight * (1 + 1e-12)

    def test_csv(self):
        Z = random_measure(3, n=1000)
        lines = measure_to_csv(Z).strip().split("\n")
        assert lines[0] == "value,weight"
        back = np.array([float(r.split(",")[0]) for r in lines[1:]])
        np.testing.assert_array_equal(back, Z.values)

    def test_center(self):
        assert center(5, 3) == 2 and center(1.25, 1.25) == 0
        vals = stream(1, 0, "c").normal(size=1000)
        m = vals.mean()
        assert abs(np.mean([center(v, m) for v in vals])) < 1e-14


class TestLocalFunctionals:
    def test_registry(self):
        phi = local_functional("mark_sum:poly:1:1:5", 2)
        assert phi.bound == 5 and phi.support_radius == pytest.approx(math.sqrt(2) / 2)
        assert local_functional("mark_pattern:0.5:1:1", 1).support_radius == 0.5
        with pytest.raises(ParameterError):
            local_functional("what", 1)
        with pytest.raises(ParameterError):
            local_functional("mark_pattern:a:b", 1)

    def test_reads_only_support(self):
        phi = local_functional("mark_sum:poly:1:1:5", 1)
        assert phi(np.array([[0.1], [0.49], [0.51]]), np.array([1.0, 1.0, 1.0])) == 2.0


class TestFieldStatistic:
    def test_fubini_cube_count(self):
        # grid spacing divides 1, so every point is seen from exactly 1/h^d nodes
        g = TorusGeometry(2, 10.0)
        c = sample_poisson(g, 1.5, 9)
        phi = local_functional("cube_count", 2)
        val = field_statistic(c, FunctionalSpec.constant(0.0), phi, "grid", Q=40 * 40)
        assert val == pytest.approx(len(c) / 100.0, abs=1e-12)

    def test_fubini_1d_generic_grid(self):
        g = TorusGeometry(1, 7.3)
        c = sample_poisson(g, 2.0, 10)
        phi = local_functional("cube_count", 1)
        for Q in (100, 1000, 10_000):
            val = field_statistic(c, FunctionalSpec.constant(0.0), phi, "grid", Q=Q)
            assert abs(val - len(c) / 7.3) <= len(c) / 7.3 * (7.3 / Q) * 2

    def test_mark_sum_matches_pairing(self):
        g = TorusGeometry(1, 30.0)
        c = sample_poisson(g, 1.0, 11)
        spec = FunctionalSpec.nn_threshold(0.4)
        f = make_test_function("poly:1:1")
        phi = local_functional("mark_sum:poly:1:1:1000", 1)
        val = field_statistic(c, spec, phi, "grid", Q=30 * 64)
        assert val == pytest.approx(pair_with_test(f, empirical_point_measure(c, spec)), abs=1e-12)

    def test_lattice_shift_invariance(self):
        g = TorusGeometry(2, 8.0)
        c = sample_poisson(g, 1.0, 12)
        spec = FunctionalSpec.nn_threshold(0.6)
        phi = local_functional("mark_pattern:1.0:1:1", 2)
        a = field_statistic(c, spec, phi, "grid", Q=64 * 64)
        b = field_statistic(c.shift([0.125 * 3, -0.125 * 5]), spec, phi, "grid", Q=64 * 64)
        assert a == pytest.approx(b, abs=1e-12)

    def test_doubling_q_consistent(self):
        g = TorusGeometry(2, 10.0)
        c = sample_poisson(g, 1.0, 13)
        spec = FunctionalSpec.nn_threshold(0.6)
        phi = local_functional("mark_pattern:0.8:1:1", 2)
        for method in ("grid", "monte_carlo"):
            a = field_quadrature(c, spec, phi, method, Q=2000, seed=1)
            b = field_quadrature(c, spec, phi, method, Q=4000, seed=2)
            assert abs(a.value - b.value) < 3 * math.hypot(a.std_error, b.std_error)

    def test_errors(self):
        c = sample_poisson(TorusGeometry(1, 1.0), 3.0, 1)
        with pytest.raises(ParameterError):
            field_statistic(c, FunctionalSpec.constant(0.0), local_functional("mark_pattern:0.6:0:1", 1))
        with pytest.raises(ParameterError):
            field_statistic(c, FunctionalSpec.constant(0.0), local_functional("cube_count", 1), "simpson")

    def test_constant_closure(self):
        g = TorusGeometry(1, 20.0)
        c = sample_poisson(g, 1.0, 14)
        Z = empirical_point_measure(c, FunctionalSpec.constant(2.0))
        f = make_test_function("poly:2:10")
        assert pair_with_test(f, Z) == pytest.approx(4.0 * len(c) / 20.0, rel=1e-15)
        assert np.array_equal(evaluate_all(c, FunctionalSpec.constant(2.0)), Z.values)
