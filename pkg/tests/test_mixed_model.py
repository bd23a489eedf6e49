import math

import numpy as np
import pytest

from segqc.errors import DegenerateDesignError, DomainError
from segqc.mixed_model import fit_random_intercept

from oracles import gls_beta, reml_grid_argmax


def simulate(rng, n_groups=20, per_group=10, beta=(1.0, 0.5), sigma_b=1.0, sigma_e=0.5):
    group = np.repeat(np.arange(n_groups), per_group)
    x = rng.normal(size=group.size)
    b = rng.normal(scale=sigma_b, size=n_groups)
    y = beta[0] + beta[1] * x + b[group] + rng.normal(scale=sigma_e, size=group.size)
    return y, group, x


class TestValidation:
    def test_too_few_observations(self):
        with pytest.raises(DomainError):
            fit_random_intercept([1.0, 2.0], ["a", "b"], [0.0, 1.0])

    def test_single_group_rejected(self):
        with pytest.raises(DomainError):
            fit_random_intercept([1.0, 2.0, 3.0], ["a", "a", "a"], [0.0, 1.0, 2.0])

    def test_constant_x_rejected(self):
        with pytest.raises(DegenerateDesignError):
            fit_random_intercept([1.0, 2.0, 3.0, 4.0], ["a", "a", "b", "b"], [1.0, 1.0, 1.0, 1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            fit_random_intercept([1.0, float("nan"), 3.0, 4.0], ["a", "a", "b", "b"], [0, 1, 0, 1])
        with pytest.raises(DomainError):
            fit_random_intercept([1.0, 2.0, 3.0, 4.0], ["a", "a", "b", "b"], [0, float("inf"), 0, 1])


class TestKnownCases:
    def test_balanced_intercept_only_mean(self):
        # balanced design: the GLS intercept equals the grand mean for every lambda
        fit = fit_random_intercept([1.0, 2.0, 3.0, 4.0], ["a", "a", "b", "b"])
        assert fit.beta[0] == pytest.approx(2.5, abs=1e-9)

    def test_independent_data_reduces_to_ols(self):
        # group-centered noise: zero between-group variance, so the
        # variance ratio collapses to the search floor
        rng = np.random.default_rng(0)
        group = np.repeat(np.arange(10), 8)
        x = rng.normal(size=group.size)
        noise = rng.normal(scale=1.0, size=group.size)
        for g in np.unique(group):
            noise[group == g] -= noise[group == g].mean()
        y = 2.0 + 0.7 * x + noise
        fit = fit_random_intercept(y, group, x)
        X = np.column_stack([np.ones_like(x), x])
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert fit.lambda_ratio == pytest.approx(1e-6, rel=1e-6)  # boundary
        assert fit.beta[0] == pytest.approx(ols[0], rel=1e-4)
        assert fit.beta[1] == pytest.approx(ols[1], rel=1e-4)

    def test_strong_group_effect_detected(self):
        rng = np.random.default_rng(1)
        y, group, x = simulate(rng, sigma_b=3.0, sigma_e=0.5)
        fit = fit_random_intercept(y, group, x)
        assert fit.sigma_b2 > fit.sigma_e2
        assert fit.sigma_b2 == pytest.approx(9.0, rel=0.8)

    def test_p_value_matches_wald_z(self):
        rng = np.random.default_rng(2)
        y, group, x = simulate(rng)
        fit = fit_random_intercept(y, group, x)
        expected = math.erfc(abs(fit.wald_z) / math.sqrt(2.0))
        assert fit.p_value == expected
        assert 0.0 <= fit.p_value <= 1.0

    def test_significant_effect_small_p(self):
        rng = np.random.default_rng(3)
        y, group, x = simulate(rng, beta=(0.0, 2.0), sigma_b=1.0, sigma_e=0.3)
        fit = fit_random_intercept(y, group, x)
        assert fit.p_value < 1e-6


class TestAgainstGridOracle:
    @pytest.mark.parametrize("seed", range(8))
    def test_lambda_within_one_percent_of_grid(self, seed):
        rng = np.random.default_rng(seed)
        sigma_b = [0.0, 0.3, 1.0, 3.0][seed % 4]
        y, group, x = simulate(rng, sigma_b=sigma_b, sigma_e=1.0)
        fit = fit_random_intercept(y, group, x)
        lam_grid, beta_grid = reml_grid_argmax(y, group, x, num=4000)
        assert fit.lambda_ratio == pytest.approx(lam_grid, rel=0.01)

    @pytest.mark.parametrize("seed", range(4))
    def test_beta_matches_closed_form_gls(self, seed):
        rng = np.random.default_rng(100 + seed)
        y, group, x = simulate(rng)
        fit = fit_random_intercept(y, group, x)
        oracle = gls_beta(y, group, x, fit.lambda_ratio)
        np.testing.assert_allclose(fit.beta, oracle, atol=1e-6)


class TestInvarianceProperties:
    def test_shift_moves_only_intercept(self):
        rng = np.random.default_rng(5)
        y, group, x = simulate(rng)
        base = fit_random_intercept(y, group, x)
        shifted = fit_random_intercept(y + 13.25, group, x)
        assert shifted.beta[0] == pytest.approx(base.beta[0] + 13.25, abs=1e-9)
        assert shifted.beta[1] == pytest.approx(base.beta[1], abs=1e-9)
        assert shifted.sigma_b2 == pytest.approx(base.sigma_b2, rel=1e-9)
        assert shifted.sigma_e2 == pytest.approx(base.sigma_e2, rel=1e-9)
        assert shifted.wald_z == pytest.approx(base.wald_z, rel=1e-9)
        assert shifted.p_value == pytest.approx(base.p_value, rel=1e-9)

    def test_scale_scales_beta_and_variances(self):
        rng = np.random.default_rng(6)
        y, group, x = simulate(rng)
        s = 3.5
        base = fit_random_intercept(y, group, x)
        scaled = fit_random_intercept(s * y, group, x)
        assert scaled.beta[0] == pytest.approx(s * base.beta[0], rel=1e-9)
        assert scaled.beta[1] == pytest.approx(s * base.beta[1], rel=1e-9)
        assert scaled.sigma_b2 == pytest.approx(s**2 * base.sigma_b2, rel=1e-7)
        assert scaled.sigma_e2 == pytest.approx(s**2 * base.sigma_e2, rel=1e-7)
        assert scaled.wald_z == pytest.approx(base.wald_z, rel=1e-9)
        assert scaled.p_value == pytest.approx(base.p_value, rel=1e-9)

    def test_boundary_lambda_reported_not_raised(self):
        # strongly negative intra-group correlation pushes lambda to the floor
        y = np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0])
        group = np.array(["a", "a", "b", "b", "c", "c"])
        x = np.array([0.0, 1.0, 1.0, 0.0, 0.5, 0.25])
        fit = fit_random_intercept(y, group, x)
        assert 1e-6 <= fit.lambda_ratio <= 1e6
