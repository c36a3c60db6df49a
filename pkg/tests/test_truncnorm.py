import numpy as np
import pytest

from spcp import DataError
from spcp.truncnorm import truncated_normal


class TestSupport:
    def test_all_draws_below_bound(self, rng):
        draws = truncated_normal(np.zeros(5000), 1.0, 0.0, rng)
        assert np.all(draws <= 0.0)

    def test_far_tail_returns_in_bounded_time(self, rng):
        x = truncated_normal(8.0, 1.0, 0.0, rng)
        assert np.isfinite(x) and x <= 0.0
        draws = truncated_normal(np.full(2000, 8.0), 1.0, 0.0, rng)
        assert np.all(draws <= 0.0)
        # conditional mass concentrates just below the bound
        assert draws.mean() == pytest.approx(-0.122, abs=0.02)

    def test_scalar_returns_float(self, rng):
        assert isinstance(truncated_normal(1.0, 2.0, 0.0, rng), float)

    def test_sigma_positive_required(self, rng):
        with pytest.raises(DataError):
            truncated_normal(0.0, 0.0, 0.0, rng)


class TestMoments:
    def test_half_normal_mean_and_variance(self, rng):
        n = 200_000
        draws = truncated_normal(np.zeros(n), 1.0, 0.0, rng)
        assert draws.mean() == pytest.approx(-np.sqrt(2 / np.pi), abs=0.01)
        assert draws.var() == pytest.approx(1 - 2 / np.pi, abs=0.01)

    def test_scaled_half_normal_variance(self, rng):
        n = 200_000
        draws = truncated_normal(np.zeros(n), 2.0, 0.0, rng)
        assert draws.var() == pytest.approx(4 * (1 - 2 / np.pi), rel=0.02)

    def test_inactive_truncation_matches_normal(self, rng):
        n = 100_000
        draws = truncated_normal(np.full(n, -10.0), 1.0, 0.0, rng)
        assert draws.mean() == pytest.approx(-10.0, abs=0.02)
        assert draws.var() == pytest.approx(1.0, rel=0.03)

    def test_tail_region_matches_theory(self, rng):
        # mu = 4 above the bound: E[Z | Z <= -4] = -phi(4)/Phi(-4) for standard Z
        from scipy.stats import norm

        n = 100_000
        draws = truncated_normal(np.full(n, 4.0), 1.0, 0.0, rng)
        want = 4.0 - norm.pdf(4) / norm.cdf(-4)
        assert draws.mean() == pytest.approx(want, abs=0.01)

    def test_broadcasting(self, rng):
        mu = np.array([[0.0], [5.0]])
        sig = np.array([1.0, 2.0, 3.0])
        out = truncated_normal(mu, sig, 0.0, rng)
        assert out.shape == (2, 3)
        assert np.all(out <= 0.0)
