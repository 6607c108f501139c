import math

import numpy as np
import pytest

from freesub import freeconv as fc
from freesub import measures as ms
from freesub.freeconv import (
    DomainEscapeError,
    MaxIterationsError,
    SingularJacobianError,
    SolverOptions,
    continuation_path,
    default_eta_schedule,
    density,
    genericity,
    is_well_behaved,
    solve_point,
)
from freesub.measures import point_mass, semicircle, stieltjes, two_point


SC = semicircle(1.0, 10_000)
TP = two_point(-1.0, 1.0)


def solve_at(mu_a, mu_b, z, opts=fc.DEFAULT_OPTIONS):
    sched = default_eta_schedule(mu_a, mu_b, z.imag)
    return continuation_path(mu_a, mu_b, z.real, sched, opts)


class TestSolvePoint:
    def test_identity_with_delta_zero(self):
        z = 1j
        sol = solve_at(SC, point_mass(0.0), z)
        m_a = stieltjes(SC, z)
        assert abs(sol.s_beta) < 1e-10
        assert sol.s_alpha == pytest.approx(-z - 1 / m_a, abs=1e-9)
        assert sol.m == pytest.approx(m_a, abs=1e-9)
        assert sol.residual_norm <= 1e-12

    def test_shift_by_delta_c(self):
        c, z = 0.8, 0.5 + 1.2j
        sol = solve_at(SC, point_mass(c), z)
        assert sol.s_beta == pytest.approx(-c, abs=1e-10)
        assert sol.m == pytest.approx(stieltjes(SC, z - c), abs=1e-9)

    def test_semicircle_pair_closed_form(self):
        z = 2j
        sol = solve_at(SC, SC, z)
        expect = 1j * (math.sqrt(3) - 1) / 2
        assert sol.m == pytest.approx(expect, abs=1e-3)
        assert sol.s_alpha == pytest.approx(sol.s_beta, abs=1e-10)
        assert sol.s_alpha == pytest.approx(expect, abs=1e-3)

    def test_both_single_atoms_exact(self):
        sol = solve_point(point_mass(0.4), point_mass(-1.1), 1j, (0, 0))
        assert sol.s_alpha == -0.4
        assert sol.s_beta == 1.1
        assert sol.m == pytest.approx(1 / (0.4 - 1.1 - 1j))
        assert sol.iterations == 0

    def test_real_z_rejected(self):
        with pytest.raises(ValueError):
            solve_point(SC, SC, 1.0 + 0j, (0, 0))


class TestErrors:
    def test_max_iterations(self):
        opts = SolverOptions(tol=1e-30, max_iter=2)
        with pytest.raises(MaxIterationsError):
            solve_point(SC, TP, 1j, (-0.0, -0.0), opts)

    def test_singular_jacobian(self):
        # both transforms nearly flat far from the support: det ~ 0
        with pytest.raises(SingularJacobianError):
            solve_point(TP, TP, 1j, (10_000.0, 10_000.0))

    def test_domain_escape_on_bad_init(self):
        with pytest.raises(DomainEscapeError):
            solve_point(SC, TP, 1j, (0.0, -2j))


class TestContinuation:
    def test_delta_c_along_whole_path(self):
        c = 0.6
        for eta in (8.0, 2.0, 0.5, 0.05):
            sched = default_eta_schedule(TP, point_mass(c), eta)
            sol = continuation_path(TP, point_mass(c), 0.3, sched)
            assert sol.s_beta == pytest.approx(-c, abs=1e-10)

    def test_branch_at_high_eta(self):
        # first-moment tail: |m + 1/z| <= 2(K_a + K_b)/|z|^2
        z = 10j
        sol = continuation_path(TP, TP, 0.0, [10.0])
        bound = 2 * (TP.support_bound + TP.support_bound) / abs(z) ** 2
        assert abs(sol.m + 1 / z) <= bound
        sol2 = continuation_path(SC, SC, 0.0, [16.0])
        bound2 = 2 * (SC.support_bound + SC.support_bound) / 16.0 ** 2
        assert abs(sol2.m + 1 / 16j) <= bound2

    def test_path_stability_between_schedules(self):
        a = continuation_path(SC, SC, 0.0, [4, 2, 1, 0.5, 0.1])
        b = continuation_path(SC, SC, 0.0, [4, 3, 2, 1, 0.5, 0.25, 0.1])
        assert abs(a.m - b.m) < 1e-9

    def test_failure_carries_eta(self):
        opts = SolverOptions(tol=1e-30, max_iter=2)
        with pytest.raises(MaxIterationsError) as err:
            continuation_path(SC, TP, 0.0, [8.0, 2.0], opts)
        assert err.value.eta_failed in (8.0, 2.0)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            continuation_path(SC, SC, 0.0, [1.0, 2.0])
        with pytest.raises(ValueError):
            continuation_path(SC, SC, 0.0, [2.0, -1.0])
        with pytest.raises(ValueError):
            continuation_path(SC, SC, 0.0, [])


class TestDensity:
    def test_semicircle_pair_at_zero(self):
        rho = density(SC, SC, [0.0])[0].rho
        assert rho == pytest.approx(math.sqrt(2) / (2 * math.pi), abs=1e-3)

    def test_two_point_pair_arcsine(self):
        rho = density(TP, TP, [0.0])[0].rho
        assert rho == pytest.approx(1 / (2 * math.pi), abs=1e-3)

    def test_outside_support(self):
        rho = density(TP, TP, [10.0])[0].rho
        assert rho < 1e-4

    def test_rho_nonnegative_on_grid(self):
        pts = density(TP, TP, np.linspace(-3, 3, 25))
        for p in pts:
            assert p.error is None
            assert p.rho >= 0

    def test_per_point_failures_reported_in_row(self):
        opts = SolverOptions(tol=1e-30, max_iter=2)
        pts = density(SC, TP, [0.0, 1.0], eta_floor=0.5, opts=opts)
        assert len(pts) == 2
        for p in pts:
            assert p.error is not None and "MaxIterationsError" in p.error
            assert math.isnan(p.rho)
            assert p.solution is None

    def test_delta_identity_density(self):
        # convolving with delta_0 reproduces the measure's own transform
        grid = [-1.5, -0.4, 0.0, 0.9, 2.2]
        pts = density(SC, point_mass(0.0), grid, eta_floor=1e-4)
        for p in pts:
            z = complex(p.e, 1e-4)
            assert p.solution.m == pytest.approx(stieltjes(SC, z), abs=1e-8)

    def test_semicircle_pair_curve_matches_variance_two_law(self):
        grid = np.linspace(-2.5, 2.5, 11)
        pts = density(SC, SC, grid)
        for p in pts:
            exact = math.sqrt(max(8 - p.e ** 2, 0.0)) / (4 * math.pi)
            assert p.rho == pytest.approx(exact, abs=2e-3)


class TestGenericity:
    def test_two_delta_zero(self):
        e = 1.3
        sol = continuation_path(point_mass(0.0), point_mass(0.0), e,
                                default_eta_schedule(point_mass(0.0), point_mass(0.0), 1e-6))
        diag = genericity(point_mass(0.0), point_mass(0.0), e, sol)
        assert diag.k_value == pytest.approx(e ** 2, abs=1e-4)

    def test_semicircle_pair_k_at_zero(self):
        sol = continuation_path(SC, SC, 0.0, default_eta_schedule(SC, SC, 1e-6))
        diag = genericity(SC, SC, 0.0, sol)
        assert diag.k_value == pytest.approx(-4.0, abs=1e-3)

    def test_smoothness_values_at_zero(self):
        sol = continuation_path(SC, SC, 0.0, default_eta_schedule(SC, SC, 1e-6))
        diag = genericity(SC, SC, 0.0, sol)
        assert diag.im_s_alpha_limit == pytest.approx(1 / math.sqrt(2), abs=1e-3)
        assert diag.im_s_beta_limit == pytest.approx(1 / math.sqrt(2), abs=1e-3)
        assert diag.well_behaved


class TestWellBehaved:
    def test_semicircle_pair_bulk(self):
        report = is_well_behaved(SC, SC, (-1.0, 1.0), 11)
        assert report.all_pass
        assert len(report.points) == 11

    def test_delta_zero_never_smooth(self):
        report = is_well_behaved(SC, point_mass(0.0), (-0.5, 0.5), 5)
        assert not report.all_pass
        for _, diag in report.points:
            assert diag is not None
            assert diag.im_s_beta_limit <= 1e-3

    def test_outside_support_not_smooth(self):
        report = is_well_behaved(TP, TP, (8.0, 9.0), 3)
        assert not report.all_pass


class TestInvariants:
    ZS = [0.3 + 0.7j, -1.1 + 0.4j, 2j, 0.05 + 1.5j, -0.6 + 0.2j]

    def _solve(self, mu_a, mu_b, z):
        return continuation_path(mu_a, mu_b, z.real,
                                 default_eta_schedule(mu_a, mu_b, z.imag))

    def test_residual_and_eliminant(self):
        for z in self.ZS:
            sol = self._solve(SC, TP, z)
            assert sol.residual_norm <= 1e-12
            assert abs(sol.m * (z + sol.s_alpha + sol.s_beta) + 1) < 1e-14

    def test_swap_symmetry(self):
        for z in self.ZS:
            ab = self._solve(SC, TP, z)
            ba = self._solve(TP, SC, z)
            assert abs(ab.m - ba.m) < 1e-10
            assert abs(ab.s_alpha - ba.s_beta) < 1e-10
            assert abs(ab.s_beta - ba.s_alpha) < 1e-10

    def test_equal_measure_symmetry(self):
        for z in self.ZS:
            sol = self._solve(TP, TP, z)
            assert abs(sol.s_alpha - sol.s_beta) < 1e-10
            assert abs(sol.s_alpha + (z + 1 / sol.m) / 2) < 1e-10

    def test_positivity(self):
        for z in self.ZS:
            sol = self._solve(SC, TP, z)
            assert sol.m.imag > 0
            assert sol.s_alpha.imag >= -10 * sol.residual_norm
            assert sol.s_beta.imag >= -10 * sol.residual_norm

    def test_conjugation(self):
        for z in self.ZS:
            up = self._solve(SC, TP, z)
            dn = solve_point(SC, TP, z.conjugate(),
                             (up.s_alpha.conjugate(), up.s_beta.conjugate()))
            assert dn.m == pytest.approx(up.m.conjugate(), abs=1e-12)
            assert dn.s_alpha == pytest.approx(up.s_alpha.conjugate(), abs=1e-12)
            assert dn.s_beta == pytest.approx(up.s_beta.conjugate(), abs=1e-12)


class TestSolverOptions:
    def test_json_round_trip(self):
        opts = SolverOptions(tol=1e-10, max_iter=77)
        again = SolverOptions.from_json(opts.to_json())
        assert again == opts

    def test_defaults(self):
        opts = SolverOptions()
        assert opts.tol == 1e-12
        assert opts.max_iter == 200
        assert opts.eta_floor == 1e-6
        assert opts.eta_ratio == 0.5
        assert opts.genericity_threshold == 1e-3
        assert opts.smoothness_threshold == 1e-3
