import math

import numpy as np
import pytest
from scipy.stats import norm

from spcp import DataError
from spcp.likelihood import (
    SiteParams,
    VFSeries,
    design_row,
    latent_gaussian_log_lik,
    observed_cp,
    site_moments,
    tobit_log_lik,
    tobit_log_lik_total,
)

LOG_PHI_0 = -0.5 * math.log(2 * math.pi)


class TestObservedCp:
    def test_lower_clamp(self):
        assert observed_cp(-3.0, 0.0, 2.0) == 0.0

    def test_upper_clamp(self):
        assert observed_cp(5.0, 0.0, 2.0) == 2.0

    def test_interior_identity(self):
        assert observed_cp(1.2, 0.0, 2.0) == 1.2

    def test_vectorized(self):
        np.testing.assert_allclose(
            observed_cp(np.array([-1.0, 0.5, 9.0]), 0.0, 2.0), [0.0, 0.5, 2.0])

    def test_bad_window_rejected(self):
        with pytest.raises(DataError):
            observed_cp(0.5, 1.0, 1.0)


class TestDesignRow:
    def test_before_cp(self):
        np.testing.assert_allclose(design_row(0.3, 0.5), [1.0, 0.0])

    def test_after_cp(self):
        np.testing.assert_allclose(design_row(0.7, 0.5), [1.0, 0.2])

    def test_boundary_contributes_zero_offset(self):
        np.testing.assert_allclose(design_row(0.5, 0.5), [1.0, 0.0])


class TestSiteMoments:
    def test_direct_evaluation(self):
        p = SiteParams.from_effects(25.0, -15.0, -0.5, 0.1, 0.5, 0.0, 1.0)
        mu, sig = site_moments(p, 0.25)
        assert mu == pytest.approx(25.0)
        assert sig == pytest.approx(math.exp(-0.5))

    def test_flat_variance_when_slope_zero(self):
        p = SiteParams.from_effects(10.0, -2.0, 0.3, 0.0, 0.4, 0.0, 1.0)
        sigs = [site_moments(p, t)[1] for t in np.linspace(0, 1, 9)]
        assert np.ptp(sigs) == 0.0

    def test_continuity_at_change_point(self):
        p = SiteParams.from_effects(25.0, -15.0, -0.5, 0.1, 0.5, 0.0, 1.0)
        mu_at, sig_at = site_moments(p, 0.5)
        mu_before, sig_before = site_moments(p, 0.5 - 1e-12)
        assert mu_at == pytest.approx(mu_before, abs=1e-9)
        assert sig_at == pytest.approx(sig_before, abs=1e-9)

    def test_continuity_property_random_draws(self, rng):
        for _ in range(20):
            b0, b1, l0, l1 = rng.standard_normal(4)
            eta = float(rng.uniform(0.1, 0.9))
            p = SiteParams.from_effects(b0, b1, l0, l1, eta, 0.0, 1.0)
            eps = 1e-9
            mu_m, sig_m = site_moments(p, eta - eps)
            mu_p, sig_p = site_moments(p, eta + eps)
            assert abs(mu_p - mu_m) < 1e-6
            assert abs(math.log(sig_p) - math.log(sig_m)) < 1e-6

    def test_cp_at_end_degenerates_to_intercept(self):
        times = np.linspace(0.0, 1.0, 11)
        p = SiteParams.from_effects(25.0, -15.0, -0.5, 0.1, 99.0, 0.0, 1.0)
        mus, sigs = zip(*(site_moments(p, t) for t in times))
        assert np.ptp(mus) == 0.0
        assert np.ptp(sigs) == 0.0

    def test_overflow_guard(self):
        from spcp import NumericError

        p = SiteParams.from_effects(0.0, 0.0, 400.0, 0.0, 0.5, 0.0, 1.0)
        with pytest.raises(NumericError):
            site_moments(p, 0.2)


class TestTobitLogLik:
    def test_uncensored_density_at_mean(self):
        assert tobit_log_lik(2.0, False, 2.0, 1.0) == pytest.approx(LOG_PHI_0, abs=1e-9)

    def test_censored_symmetric_point(self):
        assert tobit_log_lik(0.0, True, 0.0, 1.0) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_censored_far_tail_is_stable(self):
        # log Phi(-8) from a high-precision erfc evaluation
        got = tobit_log_lik(0.0, True, 8.0, 1.0)
        assert math.isfinite(got)
        assert got == pytest.approx(-35.0134371599, abs=1e-6)

    def test_uncensored_maximized_at_observation(self):
        obs = 1.3
        best = tobit_log_lik(obs, False, obs, 0.7)
        for mu in np.linspace(-2, 4, 41):
            if mu != obs:
                assert tobit_log_lik(obs, False, mu, 0.7) <= best

    def test_total_matches_cellwise(self, rng):
        m, nu = 4, 6
        obs = np.abs(rng.standard_normal((m, nu)))
        obs[rng.random((m, nu)) < 0.3] = 0.0
        cens = obs == 0.0
        mu = rng.standard_normal((m, nu))
        sig = np.exp(0.3 * rng.standard_normal((m, nu)))
        want = sum(
            tobit_log_lik(obs[i, t], bool(cens[i, t]), mu[i, t], sig[i, t])
            for i in range(m) for t in range(nu))
        got = tobit_log_lik_total(obs, cens, mu, sig)
        assert got == pytest.approx(want, rel=1e-12)


class TestLatentGaussianLogLik:
    def make_series(self, latent, times):
        obs = np.maximum(latent, 0.0)
        cens = latent <= 0.0
        obs[cens] = 0.0
        return VFSeries(times=times, obs=obs, censored=cens, latent=latent)

    def test_single_cell_density_at_mean(self):
        times = np.array([0.0, 1.0])
        latent = np.array([[5.0, 5.0]])
        s = self.make_series(latent, times)
        Phi = np.array([[5.0, 0.0, 0.25, 0.0, 2.0]])
        want = 2 * norm.logpdf(5.0, 5.0, math.exp(0.25))
        assert latent_gaussian_log_lik(s, Phi) == pytest.approx(want, rel=1e-12)

    def test_doubling_sigma_costs_log2_per_cell(self):
        times = np.linspace(0, 1, 5)
        latent = np.full((3, 5), 2.0)
        s = self.make_series(latent, times)
        Phi = np.tile([2.0, 0.0, 0.1, 0.0, 2.0], (3, 1))
        base = latent_gaussian_log_lik(s, Phi)
        Phi2 = Phi.copy()
        Phi2[:, 2] += math.log(2.0)
        assert latent_gaussian_log_lik(s, Phi2) == pytest.approx(
            base - 15 * math.log(2.0), rel=1e-12)

    def test_matches_per_cell_loop_oracle(self, rng):
        m, nu = 3, 4
        times = np.sort(rng.uniform(0.05, 1.0, nu))
        times[0] = 0.0
        latent = rng.standard_normal((m, nu)) + 3.0
        s = self.make_series(latent.copy(), times)
        Phi = np.column_stack([
            rng.normal(3, 1, m), rng.normal(0, 1, m),
            rng.normal(0, 0.3, m), rng.normal(0, 0.3, m),
            rng.uniform(-0.5, 1.5, m)])
        want = 0.0
        for i in range(m):
            theta = min(max(Phi[i, 4], times[0]), times[-1])
            for t in range(nu):
                gt = max(times[t] - theta, 0.0) if times[t] >= theta else 0.0
                mu = Phi[i, 0] + Phi[i, 1] * gt
                sd = math.exp(Phi[i, 2] + Phi[i, 3] * gt)
                want += norm.logpdf(s.latent[i, t], mu, sd)
        assert latent_gaussian_log_lik(s, Phi) == pytest.approx(want, rel=1e-12)


class TestVFSeries:
    def test_invariants_enforced(self):
        times = np.array([0.0, 0.5, 1.0])
        obs = np.array([[1.0, 0.0, 2.0]])
        cens = obs == 0.0
        s = VFSeries(times=times, obs=obs, censored=cens)
        assert s.latent[0, 1] <= 0.0
        assert s.latent[0, 0] == 1.0

    def test_nonmonotone_times_rejected(self):
        with pytest.raises(DataError, match="strictly increasing"):
            VFSeries(times=np.array([0.0, 0.5, 0.5]), obs=np.zeros((1, 3)),
                     censored=np.ones((1, 3), dtype=bool))

    def test_nonzero_start_rejected(self):
        with pytest.raises(DataError, match="x1 = 0"):
            VFSeries(times=np.array([0.5, 1.0]), obs=np.ones((1, 2)),
                     censored=np.zeros((1, 2), dtype=bool))

    def test_negative_obs_rejected(self):
        with pytest.raises(DataError, match="nonnegative"):
            VFSeries(times=np.array([0.0, 1.0]), obs=np.array([[-1.0, 1.0]]),
                     censored=np.array([[False, False]]))

    def test_censor_flag_consistency_rejected(self):
        with pytest.raises(DataError, match="censored flags"):
            VFSeries(times=np.array([0.0, 1.0]), obs=np.array([[0.0, 1.0]]),
                     censored=np.array([[False, False]]))

    def test_subset_visits(self):
        times = np.array([0.0, 0.5, 1.0, 1.5])
        obs = np.arange(8, dtype=float).reshape(2, 4) + 1
        s = VFSeries(times=times, obs=obs, censored=obs == 0)
        sub = s.subset_visits(2)
        assert sub.nu == 2
        np.testing.assert_allclose(sub.obs, obs[:, :2])
