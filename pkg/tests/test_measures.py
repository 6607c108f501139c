import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from freesub import measures as ms
from freesub.measures import (
    SpectralMeasure,
    cdf,
    levy_distance,
    make_atoms,
    measure_from_json,
    point_mass,
    quantile_discretize,
    semicircle,
    stieltjes,
    stieltjes_deriv,
    two_point,
)


class TestMakeAtoms:
    def test_point_mass(self):
        mu = make_atoms([0], [1])
        assert mu.locations.tolist() == [0.0]
        assert mu.weights.tolist() == [1.0]

    def test_merge_and_normalize(self):
        mu = make_atoms([1, -1, 1], [1, 1, 1])
        assert mu.locations.tolist() == [-1.0, 1.0]
        np.testing.assert_allclose(mu.weights, [1 / 3, 2 / 3])

    def test_normalization(self):
        mu = make_atoms([2, 0], [3, 1])
        assert mu.locations.tolist() == [0.0, 2.0]
        np.testing.assert_allclose(mu.weights, [0.25, 0.75])

    def test_empty_input(self):
        with pytest.raises(ValueError):
            make_atoms([], [])

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            make_atoms([0, 1], [0.5, -0.5])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            make_atoms([0, np.inf], [0.5, 0.5])
        with pytest.raises(ValueError):
            make_atoms([0, 1], [0.5, np.nan])

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            make_atoms([0, 1], [1.0])

    def test_immutability(self):
        mu = make_atoms([0, 1], [1, 1])
        with pytest.raises(ValueError):
            mu.locations[0] = 5.0


class TestSemicircle:
    def test_single_atom_is_median(self):
        mu = semicircle(1.0, 1)
        assert mu.n_atoms == 1
        assert abs(mu.locations[0]) < 1e-12

    def test_two_atoms_quartiles(self):
        # independent oracle: root-find the closed-form CDF at 3/4
        def f_sc(x):
            return 0.5 + x * math.sqrt(4 - x * x) / (4 * math.pi) + math.asin(x / 2) / math.pi

        q = brentq(lambda x: f_sc(x) - 0.75, 0, 2, xtol=1e-13)
        mu = semicircle(1.0, 2)
        np.testing.assert_allclose(mu.locations, [-q, q], atol=1e-10)
        np.testing.assert_allclose(mu.weights, [0.5, 0.5])

    def test_levy_convergence_to_dense_reference(self):
        dense = semicircle(1.0, 50_000)
        d = levy_distance(semicircle(1.0, 10_000), dense)
        assert d < 1e-3

    def test_support_bound(self):
        mu = semicircle(2.0, 100)
        assert mu.support_bound == pytest.approx(2 * math.sqrt(2.0))
        assert np.max(np.abs(mu.locations)) <= mu.support_bound

    def test_bad_variance(self):
        with pytest.raises(ValueError):
            semicircle(0.0, 10)
        with pytest.raises(ValueError):
            semicircle(-1.0, 10)


class TestQuantileDiscretize:
    def test_constant_collapses(self):
        mu = quantile_discretize(lambda p: 2.5, 7)
        assert mu.n_atoms == 1
        assert mu.locations[0] == 2.5
        assert mu.weights[0] == 1.0

    def test_uniform_two_atoms(self):
        mu = quantile_discretize(lambda p: p, 2)
        np.testing.assert_allclose(mu.locations, [0.25, 0.75])

    def test_two_point_quantiles(self):
        ref = two_point(-1.0, 1.0)
        mu = quantile_discretize(lambda p: ms.quantile(ref, p), 4)
        np.testing.assert_allclose(mu.locations, [-1.0, 1.0])
        np.testing.assert_allclose(mu.weights, [0.5, 0.5])

    def test_non_finite_quantile(self):
        with pytest.raises(ValueError):
            quantile_discretize(lambda p: math.inf, 3)

    def test_levy_convergence_monotone(self):
        dense = semicircle(1.0, 50_000)
        ds = [levy_distance(semicircle(1.0, n), dense) for n in (10, 100, 1000)]
        assert ds[0] > ds[1] > ds[2]
        assert ds[2] < 1e-3


class TestStieltjes:
    def test_point_mass_at_i(self):
        assert stieltjes(point_mass(0.0), 1j) == 1j

    def test_two_point_at_i(self):
        assert stieltjes(two_point(-1, 1), 1j) == pytest.approx(0.5j)

    def test_semicircle_closed_form(self):
        # m_sc(i) = i (sqrt 5 - 1)/2 from the quadratic branch with m ~ -1/z
        got = stieltjes(semicircle(1.0, 10_000), 1j)
        assert got == pytest.approx(1j * (math.sqrt(5) - 1) / 2, abs=1e-3)

    def test_atom_collision(self):
        with pytest.raises(ValueError):
            stieltjes(point_mass(1.0), 1.0 + 0j)

    def test_resolvent_bound(self):
        mu = two_point(-1, 1, 0.3)
        for z in (2j, 0.5 + 0.1j, -3 + 0j):
            if z.imag == 0 and np.min(np.abs(mu.locations - z)) == 0:
                continue
            dist = np.min(np.abs(mu.locations - z))
            assert abs(stieltjes(mu, z)) <= 1 / dist + 1e-12


class TestStieltjesDeriv:
    def test_point_mass(self):
        assert stieltjes_deriv(point_mass(0.0), 1j) == pytest.approx(-1.0)

    def test_shifted_point_mass(self):
        for c, z in ((0.7, 2j), (-1.2, 0.3 + 0.8j)):
            assert stieltjes_deriv(point_mass(c), z) == pytest.approx(1 / (c - z) ** 2)

    def test_central_difference(self):
        mu = semicircle(1.0, 100)
        z, h = 2j, 1e-5
        fd = (stieltjes(mu, z + h) - stieltjes(mu, z - h)) / (2 * h)
        assert abs(stieltjes_deriv(mu, z) - fd) < 1e-6

    def test_central_difference_relative_far_from_support(self):
        mu = semicircle(1.0, 200)
        h = 1e-5
        for z in (2.5 + 0.5j, -3 + 0.2j, 4j):
            fd = (stieltjes(mu, z + h) - stieltjes(mu, z - h)) / (2 * h)
            d = stieltjes_deriv(mu, z)
            assert abs(d - fd) / abs(d) < 1e-6


class TestCdf:
    def test_point_mass(self):
        mu = point_mass(0.0)
        assert cdf(mu, -1.0) == 0.0
        assert cdf(mu, 0.0) == 1.0

    def test_two_point_midpoint(self):
        assert cdf(two_point(-1, 1), 0.0) == 0.5

    @given(st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=50, deadline=None)
    def test_monotone(self, x, y):
        mu = two_point(-1.0, 1.0, 0.3)
        if x > y:
            x, y = y, x
        assert cdf(mu, x) <= cdf(mu, y)


finite_small = st.floats(-10, 10, allow_nan=False)
weight_st = st.floats(0.05, 1.0)


def _random_measure(draw_locs, draw_wts):
    return make_atoms(draw_locs, draw_wts)


measure_st = st.builds(
    _random_measure,
    st.lists(finite_small, min_size=5, max_size=5, unique=True),
    st.lists(weight_st, min_size=5, max_size=5),
)


class TestLevyDistance:
    def test_identity(self):
        mu = two_point(-1, 1, 0.3)
        assert levy_distance(mu, mu) == 0.0

    def test_point_mass_shift(self):
        # minimal feasible shift for delta_0 vs delta_c is min(c, 1)
        assert levy_distance(point_mass(0.0), point_mass(0.3)) == pytest.approx(0.3)
        assert levy_distance(point_mass(0.0), point_mass(2.0)) == pytest.approx(1.0)

    @given(measure_st, measure_st)
    @settings(max_examples=40, deadline=None)
    def test_symmetry(self, mu1, mu2):
        assert levy_distance(mu1, mu2) == pytest.approx(levy_distance(mu2, mu1), abs=1e-12)

    @given(measure_st, measure_st, measure_st)
    @settings(max_examples=40, deadline=None)
    def test_triangle_inequality(self, mu1, mu2, mu3):
        d13 = levy_distance(mu1, mu3)
        d12 = levy_distance(mu1, mu2)
        d23 = levy_distance(mu2, mu3)
        assert d13 <= d12 + d23 + 1e-10

    @given(measure_st, measure_st)
    @settings(max_examples=40, deadline=None)
    def test_definition_on_probe_grid(self, mu1, mu2):
        # the returned s satisfies the defining envelope inequalities
        s = levy_distance(mu1, mu2)
        xs = np.concatenate([mu1.locations, mu2.locations,
                             mu1.locations - s, mu2.locations + s])
        for x in xs:
            f1 = cdf(mu1, x)
            assert cdf(mu2, x - s) - s <= f1 + 1e-9
            assert f1 <= cdf(mu2, x + s) + s + 1e-9

    def test_zero_iff_equal(self):
        mu1 = two_point(-1, 1, 0.4)
        mu2 = two_point(-1, 1, 0.45)
        assert levy_distance(mu1, mu2) > 0


class TestGlobalInvariants:
    @given(st.floats(-3, 3), st.floats(0.05, 4.0))
    @settings(max_examples=60, deadline=None)
    def test_disc_membership(self, e, eta):
        # m(E + i eta) lies in the closed disc with diameter [0, i/eta]
        z = complex(e, eta)
        for mu in (two_point(-1, 1, 0.3), semicircle(1.0, 64), point_mass(0.5)):
            m = stieltjes(mu, z)
            assert abs(m - 0.5j / eta) <= 0.5 / eta + 1e-12
            assert m.imag > 0

    def test_conjugation(self):
        mu = semicircle(1.0, 128)
        for z in (1j, 0.4 + 0.3j, -2 + 1.5j):
            assert stieltjes(mu, z.conjugate()) == stieltjes(mu, z).conjugate()


class TestJsonLiterals:
    def test_atoms(self):
        mu = measure_from_json({"atoms": [[0.0, 0.5], [1.0, 0.5]]})
        assert mu.locations.tolist() == [0.0, 1.0]

    def test_point_mass(self):
        mu = measure_from_json({"point_mass": 0.7})
        assert mu.locations.tolist() == [0.7]

    def test_two_point(self):
        mu = measure_from_json({"two_point": {"a": -1, "b": 1, "p": 0.25}})
        np.testing.assert_allclose(mu.weights, [0.25, 0.75])

    def test_semicircle(self):
        mu = measure_from_json({"semicircle": {"variance": 1.0, "n": 32}})
        assert mu.n_atoms == 32

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            measure_from_json({"cauchy": 1.0})

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            measure_from_json({"atoms": [[0, 1]], "extra": 1})


class TestSpectralMeasureValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SpectralMeasure(np.array([0.0]), np.array([0.5]), 1.0)

    def test_locations_must_increase(self):
        with pytest.raises(ValueError):
            SpectralMeasure(np.array([1.0, 0.0]), np.array([0.5, 0.5]), 1.0)

    def test_support_bound_covers_atoms(self):
        with pytest.raises(ValueError):
            SpectralMeasure(np.array([-2.0, 2.0]), np.array([0.5, 0.5]), 1.0)
