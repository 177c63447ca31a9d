import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asynclqr import matops
from conftest import random_psd, seeded_contractive, truncated_stein_sum


class TestSolveDlyap:
    def test_zero_dynamics(self):
        sol = matops.solve_dlyap(np.zeros((4, 4)), np.eye(4))
        assert np.allclose(sol.x, np.eye(4), atol=1e-14)
        assert sol.residual_norm <= 1e-10

    def test_scaled_identity_geometric_series(self):
        # X solves X = 0.25 X + I, i.e. the geometric series 1/(1 - 0.25).
        sol = matops.solve_dlyap(0.5 * np.eye(2), np.eye(2))
        assert np.allclose(sol.x, (4.0 / 3.0) * np.eye(2), atol=1e-13)

    def test_nominal_closed_loop_matches_truncated_sum(self, nominal, k0):
        f = nominal.a - nominal.b @ k0.k
        w = nominal.q + k0.k.T @ nominal.r @ k0.k
        sol = matops.solve_dlyap(f, w)
        oracle = truncated_stein_sum(f, w, horizon=1000)
        rel = np.linalg.norm(sol.x - oracle) / np.linalg.norm(oracle)
        assert rel <= 1e-8

    def test_hundred_seeded_instances_match_series_oracle(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            f = seeded_contractive(rng)
            w = random_psd(rng)
            sol = matops.solve_dlyap(f, w)
            assert sol.residual_norm <= 1e-10
            assert np.max(np.abs(sol.x - sol.x.T)) <= 1e-12
            oracle = truncated_stein_sum(f, w)
            assert np.linalg.norm(sol.x - oracle) <= 1e-8 * np.linalg.norm(oracle)

    def test_psd_input_gives_psd_solution(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            f = seeded_contractive(rng)
            w = random_psd(rng)
            sol = matops.solve_dlyap(f, w)
            np.linalg.cholesky(sol.x + 1e-12 * np.eye(4))

    def test_singular_system_raises(self):
        # rho(F) = 1 makes the vectorized system singular.
        with pytest.raises(matops.NotContractive):
            matops.solve_dlyap(np.eye(3), np.eye(3))
        # A pair of eigenvalues with product one is singular too.
        with pytest.raises(matops.NotContractive):
            matops.solve_dlyap(np.diag([2.0, 0.5]), np.eye(2))

    def test_supercritical_solution_exists_but_is_not_psd(self):
        # For rho(F) > 1 the Stein equation can still have an exact solution;
        # it is just not PSD, which is what the contractivity test keys on.
        sol = matops.solve_dlyap(1.5 * np.eye(2), np.eye(2))
        assert sol.residual_norm <= 1e-10
        with pytest.raises(np.linalg.LinAlgError):
            np.linalg.cholesky(sol.x)
        assert not matops.is_contractive(1.5 * np.eye(2))

    def test_dimension_errors(self):
        with pytest.raises(matops.DimensionMismatch):
            matops.solve_dlyap(np.zeros((2, 3)), np.eye(2))
        with pytest.raises(matops.DimensionMismatch):
            matops.solve_dlyap(np.zeros((2, 2)), np.eye(3))
        with pytest.raises(matops.DimensionMismatch):
            matops.solve_dlyap(np.zeros((2, 2)), np.array([[1.0, 2.0], [0.0, 1.0]]))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_residual_and_symmetry_property(self, seed):
        rng = np.random.default_rng(seed)
        f = seeded_contractive(rng)
        w = random_psd(rng)
        sol = matops.solve_dlyap(f, w)
        assert sol.residual_norm <= 1e-10
        assert np.linalg.norm(sol.x - sol.x.T) <= 1e-12


class TestSolveDare:
    def test_scalar_no_dynamics(self):
        p, k = matops.solve_dare([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        assert abs(p[0, 0] - 1.0) <= 1e-12
        assert abs(k[0, 0]) <= 1e-12

    def test_scalar_golden_ratio(self):
        # P = 1 + P - P^2/(1+P) has the positive root (1 + sqrt(5)) / 2.
        p, k = matops.solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        golden = (1.0 + np.sqrt(5.0)) / 2.0
        assert abs(p[0, 0] - golden) <= 1e-9
        assert abs(k[0, 0] - golden / (1.0 + golden)) <= 1e-9

    def test_nominal_residual_and_stationarity(self, nominal, init_spec):
        p, k_star = matops.solve_dare(nominal.a, nominal.b, nominal.q, nominal.r)
        riccati = (
            nominal.q
            + nominal.a.T @ p @ nominal.a
            - nominal.a.T
            @ p
            @ nominal.b
            @ np.linalg.solve(nominal.r + nominal.b.T @ p @ nominal.b, nominal.b.T @ p @ nominal.a)
        )
        assert np.linalg.norm(p - riccati) <= 1e-9
        assert matops.is_contractive(nominal.a - nominal.b @ k_star)
        from asynclqr.lqr_core import analytic_gradient

        grad = analytic_gradient(nominal, k_star, init_spec)
        assert np.linalg.norm(grad) <= 1e-8

    def test_seeded_stabilizable_instances(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            a = rng.standard_normal((4, 4))
            b = rng.standard_normal((4, 2))
            p, k = matops.solve_dare(a, b, np.eye(4), np.eye(2))
            riccati = (
                np.eye(4)
                + a.T @ p @ a
                - a.T @ p @ b @ np.linalg.solve(np.eye(2) + b.T @ p @ b, b.T @ p @ a)
            )
            assert np.linalg.norm(p - riccati) <= 1e-9
            assert matops.is_contractive(a - b @ k)

    def test_unstabilizable_raises(self):
        with pytest.raises(matops.NoConvergence):
            matops.solve_dare(2.0 * np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1))

    def test_r_must_be_positive_definite(self):
        with pytest.raises(matops.DimensionMismatch):
            matops.solve_dare(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))


class TestContractivity:
    def test_diagonal_cases(self):
        assert matops.is_contractive(0.99 * np.eye(2))
        assert not matops.is_contractive(np.eye(2))
        assert not matops.is_contractive(1.01 * np.eye(2))

    def test_nominal_closed_loop_under_initial_gain(self, nominal, k0):
        assert matops.is_contractive(nominal.a - nominal.b @ k0.k)

    def test_agrees_with_radius_estimate_on_seeded_matrices(self):
        rng = np.random.default_rng(2024)
        checked = 0
        for _ in range(100):
            g = rng.standard_normal((4, 4))
            g *= rng.uniform(0.2, 1.8) / np.max(np.abs(np.linalg.eigvals(g)))
            estimate = matops.spectral_radius_estimate(g)
            if abs(estimate - 1.0) <= 1e-3:
                continue
            checked += 1
            assert matops.is_contractive(g) == (estimate < 1.0)
        assert checked >= 90  # the margin guard should rarely trigger

    def test_radius_estimate_matches_eigenvalues(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            g = rng.standard_normal((4, 4))
            truth = np.max(np.abs(np.linalg.eigvals(g)))
            assert abs(matops.spectral_radius_estimate(g) - truth) <= 1e-8 * max(truth, 1.0)
        assert matops.spectral_radius_estimate(np.array([[0.0, 1.0], [0.0, 0.0]])) == 0.0


class TestEigenBounds:
    def test_eig_min_max_on_known_matrix(self):
        mat = np.diag([0.5, 2.0, 7.0])
        assert abs(matops.symmetric_eig_min(mat) - 0.5) <= 1e-10
        assert abs(matops.symmetric_eig_max(mat) - 7.0) <= 1e-10

    def test_spectral_norm_matches_svd(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            g = rng.standard_normal((4, 3))
            truth = np.linalg.svd(g, compute_uv=False)[0]
            assert abs(matops.spectral_norm(g) - truth) <= 1e-9 * truth

    def test_random_symmetric_extremes(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            s = random_psd(rng)
            eigs = np.linalg.eigvalsh(s)
            assert abs(matops.symmetric_eig_min(s) - eigs[0]) <= 1e-9 * max(1.0, abs(eigs[0]))
            assert abs(matops.symmetric_eig_max(s) - eigs[-1]) <= 1e-9 * eigs[-1]
