import numpy as np
import pytest
from scipy.stats import chisquare, kstest

import spcp
from spcp import DataError
from spcp.likelihood import VFSeries
from spcp.sampler import McmcConfig, SpatialCpConfig, run_chain
from spcp.variants import (
    ModelSpec,
    NonspatialChain,
    NonspatialConfig,
    PlrConfig,
    VARIANTS,
    fit,
)
from conftest import random_graph


def make_series(rng, m, nu, slope=0.0, noise=1.0, level=3.0, theta=None):
    times = np.linspace(0.0, 1.0, nu)
    g = np.zeros(nu) if theta is None else np.where(times >= theta, times - theta, 0.0)
    y = level + slope * g[None, :] + noise * rng.standard_normal((m, nu))
    cens = y <= 0.0
    obs = np.where(cens, 0.0, y)
    return VFSeries(times=times, obs=obs, censored=cens)


def tiny_mcmc(seed=0, n_iter=400, n_burn=100, n_thin=3):
    return McmcConfig(n_iter=n_iter, n_burn=n_burn, n_thin=n_thin, seed=seed,
                      pilot_block=30, pilot_max_blocks=3)


class TestDispatch:
    def test_unknown_variant_rejected(self):
        with pytest.raises(DataError):
            ModelSpec(variant="nope")

    def test_spatial_dispatch_is_run_chain(self, rng):
        graph = random_graph(rng, 4)
        series = make_series(rng, 4, 5)
        cfg = tiny_mcmc(seed=11)
        spec = ModelSpec(variant="spatial-cp", mcmc=cfg)
        a = fit(spec, series, graph)
        b = run_chain(series, graph, cfg)
        np.testing.assert_array_equal(a.Phi, b.Phi)
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_spatial_needs_graph(self, rng):
        series = make_series(rng, 4, 5)
        with pytest.raises(DataError):
            fit(ModelSpec(variant="spatial-cp", mcmc=tiny_mcmc()), series, None)

    def test_all_variants_share_schema(self, rng):
        graph = random_graph(rng, 4)
        series = make_series(rng, 4, 6, slope=-2.0, theta=0.5)
        for variant in VARIANTS:
            samples = fit(ModelSpec(variant=variant, mcmc=tiny_mcmc(seed=5)),
                          series, graph)
            assert samples.Phi.shape == (100, 4, 5)
            assert samples.delta.shape == (100, 5)
            assert samples.Sigma.shape == (100, 5, 5)
            assert samples.variant == variant
            th = samples.theta
            assert np.all(th >= series.x1) and np.all(th <= series.x_nu)

    def test_discrete_thetas_live_on_time_grid(self, rng):
        graph = random_graph(rng, 3)
        series = make_series(rng, 3, 6, slope=-2.0, theta=0.4)
        samples = fit(ModelSpec(variant="ns-disc", mcmc=tiny_mcmc(seed=2)),
                      series, graph)
        grid = set(np.round(series.times[:-1], 12))
        assert set(np.round(samples.eta.ravel(), 12)).issubset(grid)


class TestPlr:
    def test_recovers_least_squares_on_clean_data(self, rng):
        m, nu = 5, 12
        times = np.linspace(0.0, 1.0, nu)
        beta0 = rng.uniform(3, 5, m)
        beta1 = rng.uniform(-2, 0, m)
        y = beta0[:, None] + beta1[:, None] * times[None, :]
        y = y + 0.05 * rng.standard_normal((m, nu))
        series = VFSeries(times=times, obs=np.maximum(y, 0),
                          censored=(y <= 0))
        spec = ModelSpec(variant="plr", mcmc=McmcConfig(
            n_iter=4000, n_burn=1000, n_thin=3, seed=4))
        samples = fit(spec, series, None)
        X = np.column_stack([np.ones(nu), times])
        for i in range(m):
            want = np.linalg.lstsq(X, y[i], rcond=None)[0]
            got = np.array([samples.Phi[:, i, 0].mean(), samples.Phi[:, i, 1].mean()])
            np.testing.assert_allclose(got, want, atol=0.02)

    def test_schema_padding(self, rng):
        series = make_series(rng, 3, 5)
        samples = fit(ModelSpec(variant="plr", mcmc=tiny_mcmc(seed=1)), series, None)
        assert np.all(np.isnan(samples.delta))
        assert np.all(np.isnan(samples.alpha))
        assert np.all(samples.Phi[:, :, 3] == 0.0)  # flat variance process
        assert np.all(samples.Phi[:, :, 4] == series.x1)


class TestDiscreteCp:
    def make_chain(self, rng, series, seed=0):
        return NonspatialChain(series, tiny_mcmc(seed=seed), NonspatialConfig(),
                               "discrete")

    def test_two_visits_single_candidate(self, rng):
        series = make_series(rng, 2, 2)
        chain = self.make_chain(rng, series)
        idx = chain.gibbs_discrete_cp()
        assert np.all(idx == 0)
        assert np.all(chain.Phi[:, 4] == series.times[0])

    def test_flat_likelihood_selects_uniformly(self, rng):
        series = make_series(rng, 1, 6)
        chain = self.make_chain(rng, series)
        chain.prior_only = True
        counts = np.zeros(5)
        for _ in range(10_000):
            idx = chain.gibbs_discrete_cp()
            counts[idx[0]] += 1
        assert chisquare(counts).pvalue > 1e-3

    def test_strong_break_finds_modal_index(self, rng):
        nu = 10
        times = np.linspace(0.0, 0.9, nu)
        theta_true = times[4]  # break at visit 5 of 10
        g = np.where(times >= theta_true, times - theta_true, 0.0)
        y = 5.0 - 8.0 * g[None, :] + 0.05 * rng.standard_normal((1, nu))
        series = VFSeries(times=times, obs=np.maximum(y, 0), censored=(y <= 0))
        chain = self.make_chain(rng, series)
        chain.Phi[:, 0] = 5.0
        chain.Phi[:, 1] = -8.0
        chain.Phi[:, 2] = np.log(0.05)
        chain.Phi[:, 3] = 0.0
        hits = 0
        n = 2000
        for _ in range(n):
            idx = chain.gibbs_discrete_cp()
            hits += idx[0] == 4
        assert hits / n >= 0.95


class TestUniformCp:
    def test_proposals_outside_support_rejected(self, rng):
        series = make_series(rng, 3, 5)
        chain = NonspatialChain(series, tiny_mcmc(), NonspatialConfig(), "uniform")
        chain.prop_sd["cp"][:] = 50.0  # almost every proposal lands outside
        chain.prior_only = True
        for _ in range(200):
            chain._mh_cp_continuous()
            assert np.all(chain.Phi[:, 4] > series.x1)
            assert np.all(chain.Phi[:, 4] < series.x_nu)

    def test_flat_likelihood_recovers_uniform_prior(self, rng):
        series = make_series(rng, 1, 5)
        chain = NonspatialChain(series, tiny_mcmc(seed=3), NonspatialConfig(),
                                "uniform")
        chain.prior_only = True
        chain.prop_sd["cp"][:] = 0.4
        draws = np.empty(10_000)
        for r in range(10_000):
            chain._mh_cp_continuous()
            draws[r] = chain.Phi[0, 4]
        assert kstest(draws, "uniform", args=(series.x1, series.x_nu - series.x1)).statistic < 0.05

    def test_single_site_hook(self, rng):
        series = make_series(rng, 3, 5)
        chain = NonspatialChain(series, tiny_mcmc(seed=1), NonspatialConfig(),
                                "uniform")
        before = chain.Phi[:, 4].copy()
        chain.metropolis_uniform_cp(1)
        assert chain.Phi[0, 4] == before[0]
        assert chain.Phi[2, 4] == before[2]


class TestLatentCp:
    def test_prior_recovery_with_frozen_hyper(self, rng):
        """With the likelihood off and the hierarchy frozen, every effect
        column must recover its independent normal prior."""
        series = make_series(rng, 4, 5)
        prior = NonspatialConfig(sample_hyper=False,
                                 init_hyper_mean=np.array([1.0, -1.0, 0.3, 0.0, 0.5]),
                                 init_hyper_var=np.array([1.0, 0.5, 0.25, 0.25, 2.0]))
        chain = NonspatialChain(series, tiny_mcmc(seed=8), NonspatialConfig(
            sample_hyper=False, init_hyper_mean=prior.init_hyper_mean,
            init_hyper_var=prior.init_hyper_var), "latent", prior_only=True)
        chain.pilot_adapt()
        n = 20_000
        draws = np.empty((n, 5))
        for r in range(n):
            chain.sweep()
            draws[r] = chain.Phi[0]
        for c in range(5):
            thin = draws[::2, c]
            stat = kstest(thin, "norm", args=(
                prior.init_hyper_mean[c], np.sqrt(prior.init_hyper_var[c]))).statistic
            assert stat < 0.05, f"column {c} KS {stat:.3f}"

    def test_single_site_matches_spatial_full_conditional(self, rng):
        """m = 1: the latent-variant eta update and the spatial sampler's
        must target the same full conditional."""
        from spcp.graph import SpatialGraph

        nu = 8
        times = np.linspace(0.0, 1.0, nu)
        y = 4.0 - 3.0 * np.maximum(times - 0.45, 0.0) + 0.3 * rng.standard_normal(nu)
        series = VFSeries(times=times, obs=np.maximum(y, 0)[None, :],
                          censored=(y <= 0)[None, :])
        hv = np.array([2.0, 2.0, 1.0, 1.0, 0.8])
        hm = np.array([4.0, -3.0, np.log(0.3), 0.0, 0.4])
        rho = 0.99
        n = 30_000

        ns = NonspatialChain(series, McmcConfig(n_iter=10, n_burn=5, n_thin=1, seed=21),
                             NonspatialConfig(sample_hyper=False, init_hyper_mean=hm,
                                              init_hyper_var=hv), "latent")
        ns.Phi[0] = hm
        ns.prop_sd["cp"][:] = 0.3
        draws_ns = np.empty(n)
        for r in range(n):
            ns._mh_cp_continuous()
            draws_ns[r] = ns.Phi[0, 4]

        graph = SpatialGraph(site_ids=np.array([1]), rows=np.array([0]),
                             cols=np.array([0]), dissim=np.array([0.3]),
                             edges=np.zeros((0, 2), dtype=np.int64))
        sp_prior = SpatialCpConfig(alpha_bounds=(0.0, 1.0), rho=rho,
                                   init_Sigma=np.diag(hv * (1 - rho)),
                                   init_delta=hm, sample_sigma=False,
                                   sample_delta=False, sample_alpha=False)
        from spcp.sampler import SpatialCpChain

        sp = SpatialCpChain(series, graph,
                            McmcConfig(n_iter=10, n_burn=5, n_thin=1, seed=22),
                            prior=sp_prior)
        sp.state.Phi[0] = hm
        sp.refresh_caches()
        sp.state.prop_sd["eta"][:] = 0.3
        draws_sp = np.empty(n)
        for r in range(n):
            sp.metropolis_site_update("eta", 0)
            draws_sp[r] = sp.state.Phi[0, 4]

        stat = kstest(draws_ns[::3], draws_sp[::3]).statistic
        assert stat < 0.05

    def test_hyper_updates_are_conjugate(self, rng):
        """Frozen effect columns: the hierarchy draws must match the
        normal / inverse-gamma full conditionals."""
        from scipy.stats import invgamma, norm

        series = make_series(rng, 30, 4)
        cfgp = NonspatialConfig(ig_shape=2.0, ig_rate=1.5, hyper_mean_var=10.0)
        chain = NonspatialChain(series, tiny_mcmc(seed=5), cfgp, "latent")
        col = rng.standard_normal(30) * 0.7 + 0.4
        chain.Phi[:, 2] = col
        n = 20_000
        means = np.empty(n)
        variances = np.empty(n)
        for r in range(n):
            chain.hyper_var[2] = 0.49  # freeze the variance when testing the mean
            chain.gibbs_hyper()
            means[r] = chain.hyper_mean[2]
            variances[r] = chain.hyper_var[2]
        prec = 30 / 0.49 + 1 / 10.0
        want_mean = (col.sum() / 0.49) / prec
        assert means.mean() == pytest.approx(want_mean, abs=4 / np.sqrt(n * prec))
        assert means.var() == pytest.approx(1 / prec, rel=0.1)
        # variance draws condition on the freshly drawn mean each sweep;
        # check the tail against a long simulated reference
        ref = np.empty(n)
        rng2 = np.random.default_rng(99)
        for r in range(n):
            mu = want_mean + rng2.standard_normal() / np.sqrt(prec)
            rate = cfgp.ig_rate + 0.5 * np.sum((col - mu) ** 2)
            ref[r] = invgamma.rvs(cfgp.ig_shape + 15, scale=rate, random_state=rng2)
        assert kstest(variances, ref).statistic < 0.03


class TestNsLatentMatchesSpatialLimit:
    def test_posterior_agreement_when_spatial_structure_off(self, rng):
        """alpha fixed huge with diagonal fixed Sigma: the spatial model's
        prior factorizes into the latent variant's, so posteriors agree."""
        graph = random_graph(rng, 3, dissim_scale=1.0)
        series = make_series(rng, 3, 8, slope=-2.5, noise=0.4, theta=0.45)
        rho = 0.99
        v = np.array([4.0, 4.0, 1.0, 1.0, 1.0])
        hm = np.array([3.0, -2.5, np.log(0.4), 0.0, 0.45])
        n_iter, n_burn, thin = 30_000, 2_000, 4
        sp_prior = SpatialCpConfig(alpha_bounds=(999.0, 1001.0), init_alpha=1000.0,
                                   rho=rho, init_Sigma=np.diag(v * (1 - rho)),
                                   init_delta=hm, sample_sigma=False,
                                   sample_delta=False, sample_alpha=False)
        cfg = McmcConfig(n_iter=n_iter, n_burn=n_burn, n_thin=thin, seed=31)
        sp = run_chain(series, graph, cfg, prior=sp_prior)

        ns_prior = NonspatialConfig(sample_hyper=False, init_hyper_mean=hm,
                                    init_hyper_var=v)
        spec = ModelSpec(variant="ns-latent",
                         mcmc=McmcConfig(n_iter=n_iter, n_burn=n_burn,
                                         n_thin=thin, seed=32),
                         nonspatial=ns_prior)
        ns = fit(spec, series, graph)

        for c in range(5):
            a = sp.Phi[:, :, c]
            b = ns.Phi[:, :, c]
            tol = 6 * (a.std(axis=0) + b.std(axis=0)) / np.sqrt(a.shape[0] / 8) + 1e-6
            assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < tol), f"col {c}"
