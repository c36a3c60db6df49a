"""The comparison models behind one fitting interface.

Five variants share the Tobit likelihood and the constant-before-change
parameterization; they differ in how site effects are tied together:

* ``spatial-cp``   - the full spatial model (:mod:`spcp.sampler`).
* ``ns-latent``    - continuous change points through a latent process, but
  effects independent across sites with normal/inverse-gamma hierarchies.
* ``ns-cont``      - continuous change points, independent and uniform on
  the follow-up window a priori; no latent process.
* ``ns-disc``      - discrete change points on the visit grid, uniform over
  candidate indices.
* ``plr``          - independent Tobit linear regression per site (no
  change point).

Every fit returns :class:`spcp.sampler.PosteriorSamples` with the same
effect-matrix schema (beta0, beta1, lambda0, lambda1, eta), so diagnostics
are variant-agnostic: ``plr`` stores its line as a change at x1 with a flat
variance process, and the discrete/uniform variants store the change point
itself in the eta column.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import DataError, NumericError
from .likelihood import EFFECT_NAMES, LOG_SIGMA_CAP
from .sampler import (
    McmcConfig,
    PosteriorSamples,
    SpatialCpConfig,
    SpatialCpChain,
    collect_draws,
    run_chain,
)
from .truncnorm import truncated_normal

VARIANTS = ("spatial-cp", "ns-latent", "ns-cont", "ns-disc", "plr")
P = len(EFFECT_NAMES)


@dataclass
class NonspatialConfig:
    """Hierarchical priors for the non-spatial change-point variants.

    Each effect column c gets site values iid N(mean_c, var_c) with
    mean_c ~ N(0, hyper_mean_var) and var_c ~ IG(ig_shape, ig_rate).
    The change-point column only carries a hierarchy in the latent
    variant.
    """

    hyper_mean_var: float = 1000.0
    ig_shape: float = 0.001
    ig_rate: float = 0.001
    sample_hyper: bool = True
    init_hyper_mean: np.ndarray = None
    init_hyper_var: np.ndarray = None


@dataclass
class PlrConfig:
    """Priors for per-site Tobit linear regression."""

    beta_var: float = 1000.0
    ig_shape: float = 0.001
    ig_rate: float = 0.001


@dataclass
class ModelSpec:
    """Variant selector plus per-variant priors and the MCMC configuration."""

    variant: str = "spatial-cp"
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    spatial: SpatialCpConfig = field(default_factory=SpatialCpConfig)
    nonspatial: NonspatialConfig = field(default_factory=NonspatialConfig)
    plr: PlrConfig = field(default_factory=PlrConfig)
    prior_only: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown model variant {self.variant!r}")


def fit(spec, series, graph=None):
    """Fit the selected variant and return posterior samples.

    The graph is only consulted by the spatial variant; non-spatial fits
    accept graph=None.
    """
    if spec.variant == "spatial-cp":
        if graph is None:
            raise DataError("the spatial variant requires a graph")
        return run_chain(series, graph, spec.mcmc, prior=spec.spatial,
                         prior_only=spec.prior_only)
    if spec.variant == "plr":
        chain = PlrChain(series, spec.mcmc, spec.plr, prior_only=spec.prior_only)
    else:
        cp_mode = {"ns-latent": "latent", "ns-cont": "uniform", "ns-disc": "discrete"}[spec.variant]
        chain = NonspatialChain(series, spec.mcmc, spec.nonspatial, cp_mode,
                                prior_only=spec.prior_only)
    chain.pilot_adapt()
    phi, delta, sigma, alpha = collect_draws(chain, spec.mcmc)
    return PosteriorSamples(
        Phi=phi, delta=delta, Sigma=sigma, alpha=alpha,
        site_ids=series.site_ids.copy(), times=chain.x.copy(),
        variant=spec.variant, accept_rates=chain.accept_summary(),
        config=spec.mcmc, meta=chain.meta())


class NonspatialChain:
    """Gibbs/Metropolis chain for the non-spatial change-point variants.

    Site effects are independent given the per-effect hierarchy, so every
    update vectorizes across sites. The change-point column is handled per
    ``cp_mode``: a latent real-valued process ("latent"), the observed
    change point itself with a uniform prior ("uniform"), or an index of
    the visit grid ("discrete").
    """

    def __init__(self, series, config, prior, cp_mode, prior_only=False):
        if cp_mode not in ("latent", "uniform", "discrete"):
            raise DataError(f"unknown cp_mode {cp_mode!r}")
        self.series = series
        self.config = config
        self.prior = prior
        self.cp_mode = cp_mode
        self.prior_only = prior_only
        self.rng = np.random.default_rng(config.seed)
        self.m = series.m
        self.x = series.times.copy()
        self.x1, self.x_nu = series.x1, series.x_nu
        self.obs = series.obs
        self.cens = series.censored
        self.nu = series.nu
        if cp_mode == "discrete" and self.nu < 2:
            raise DataError("discrete change points need at least two visits")
        # candidate change-point times: visit indices 1..nu-1
        self.cp_candidates = self.x[: self.nu - 1].copy()
        self._hier_cols = [0, 1, 2, 3, 4] if cp_mode == "latent" else [0, 1, 2, 3]
        self._init_state()
        self.reset_counters()
        self._step_name = "init"

    def _init_state(self):
        m = self.m
        Phi = np.zeros((m, P))
        self.latent = np.where(self.cens, -0.1, self.obs)
        for i in range(m):
            vals = self.obs[i, ~self.cens[i]]
            Phi[i, 0] = vals.mean() if vals.size else 0.0
            sd = vals.std() if vals.size > 1 else 0.0
            Phi[i, 2] = np.log(sd) if sd > 0 else 0.0
        if self.cp_mode == "discrete":
            Phi[:, 4] = self.cp_candidates[len(self.cp_candidates) // 2]
        else:
            Phi[:, 4] = 0.5 * (self.x1 + self.x_nu)
        self.Phi = Phi
        pr = self.prior
        if pr.init_hyper_mean is not None:
            self.hyper_mean = np.asarray(pr.init_hyper_mean, dtype=float).copy()
        else:
            self.hyper_mean = Phi.mean(axis=0)
        if pr.init_hyper_var is not None:
            self.hyper_var = np.asarray(pr.init_hyper_var, dtype=float).copy()
        else:
            self.hyper_var = np.ones(P)
        span = self.x_nu - self.x1
        self.prop_sd = {
            "lambda0": np.full(m, 0.1),
            "lambda1": np.full(m, 0.1),
            "cp": np.full(m, 0.25 * span),
        }

    # ----- caches ----------------------------------------------------------

    def _theta(self):
        if self.cp_mode == "latent":
            return np.clip(self.Phi[:, 4], self.x1, self.x_nu)
        return self.Phi[:, 4]

    def _moments(self, theta=None):
        theta = self._theta() if theta is None else theta
        g = np.where(self.x[None, :] >= theta[:, None], self.x[None, :] - theta[:, None], 0.0)
        mu = self.Phi[:, 0][:, None] + self.Phi[:, 1][:, None] * g
        logsig = self.Phi[:, 2][:, None] + self.Phi[:, 3][:, None] * g
        return g, mu, logsig

    def _row_loglik(self, mu, logsig):
        if self.prior_only:
            return np.zeros(self.m)
        r = (self.latent - mu) * np.exp(-logsig)
        return np.sum(-logsig - 0.5 * r * r, axis=1)

    def reset_counters(self):
        self.accepted = {k: np.zeros(self.m) for k in ("lambda0", "lambda1", "cp")}
        self.attempts = 0

    def snapshot(self):
        delta = np.full(P, np.nan)
        sigma = np.full((P, P), np.nan)
        for c in self._hier_cols:
            delta[c] = self.hyper_mean[c]
            sigma[c, c] = self.hyper_var[c]
        return self.Phi.copy(), delta, sigma, np.nan

    def accept_summary(self):
        out = {k: float(v.mean() / max(self.attempts, 1)) for k, v in self.accepted.items()}
        return out

    def meta(self):
        return {
            "cp_mode": self.cp_mode,
            "prior_only": self.prior_only,
            "hyper_mean_var": self.prior.hyper_mean_var,
            "ig_shape": self.prior.ig_shape,
            "ig_rate": self.prior.ig_rate,
            "y_scale": self.series.y_scale,
            "time_scale": self.series.time_scale,
            "eye_id": self.series.eye_id,
        }

    # ----- steps -----------------------------------------------------------

    def gibbs_latent(self):
        if self.prior_only or not self.cens.any():
            return
        _, mu, logsig = self._moments()
        self.latent[self.cens] = truncated_normal(
            mu[self.cens], np.exp(logsig[self.cens]), 0.0, self.rng)

    def gibbs_beta(self):
        """Per-site conjugate draw of (beta0, beta1); 2x2 systems solved in
        closed form across all sites at once."""
        g, _, logsig = self._moments()
        pv1, pv2 = self.hyper_var[0], self.hyper_var[1]
        pm1, pm2 = self.hyper_mean[0], self.hyper_mean[1]
        if self.prior_only:
            self.Phi[:, 0] = pm1 + np.sqrt(pv1) * self.rng.standard_normal(self.m)
            self.Phi[:, 1] = pm2 + np.sqrt(pv2) * self.rng.standard_normal(self.m)
            return
        w = np.exp(-2.0 * logsig)
        wg = w * g
        p11 = w.sum(axis=1) + 1.0 / pv1
        p12 = wg.sum(axis=1)
        p22 = (wg * g).sum(axis=1) + 1.0 / pv2
        r1 = (w * self.latent).sum(axis=1) + pm1 / pv1
        r2 = (wg * self.latent).sum(axis=1) + pm2 / pv2
        l11 = np.sqrt(p11)
        l21 = p12 / l11
        l22 = np.sqrt(p22 - l21 * l21)
        w1 = r1 / l11
        w2 = (r2 - l21 * w1) / l22
        mean2 = w2 / l22
        mean1 = (w1 - l21 * mean2) / l11
        z = self.rng.standard_normal((self.m, 2))
        a2 = z[:, 1] / l22
        a1 = (z[:, 0] - l21 * a2) / l11
        self.Phi[:, 0] = mean1 + a1
        self.Phi[:, 1] = mean2 + a2

    def _mh_lambda(self, col):
        name = EFFECT_NAMES[col]
        cur = self.Phi[:, col].copy()
        z = self.rng.standard_normal(self.m)
        u = self.rng.random(self.m)
        prop = cur + self.prop_sd[name] * z
        g, mu, logsig = self._moments()
        d = prop - cur
        logsig_new = logsig + (d[:, None] * g if col == 3 else d[:, None])
        ok = np.all(np.abs(logsig_new) <= LOG_SIGMA_CAP, axis=1)
        ll_cur = self._row_loglik(mu, logsig)
        ll_new = self._row_loglik(mu, np.where(ok[:, None], logsig_new, 0.0))
        ll_new[~ok] = -np.inf
        pm, pv = self.hyper_mean[col], self.hyper_var[col]
        dprior = ((cur - pm) ** 2 - (prop - pm) ** 2) / (2.0 * pv)
        acc = ok & (np.log(u) < (ll_new - ll_cur) + dprior)
        self.Phi[acc, col] = prop[acc]
        self.accepted[name] += acc

    def _mh_cp_continuous(self, sites=None):
        """Random-walk update of the change point column (latent or uniform)."""
        cur = self.Phi[:, 4].copy()
        z = self.rng.standard_normal(self.m)
        u = self.rng.random(self.m)
        prop = cur + self.prop_sd["cp"] * z
        if self.cp_mode == "latent":
            theta_prop = np.clip(prop, self.x1, self.x_nu)
            in_support = np.ones(self.m, dtype=bool)
            pm, pv = self.hyper_mean[4], self.hyper_var[4]
            dprior = ((cur - pm) ** 2 - (prop - pm) ** 2) / (2.0 * pv)
        else:
            theta_prop = prop
            in_support = (prop > self.x1) & (prop < self.x_nu)
            dprior = np.zeros(self.m)
        _, mu_c, ls_c = self._moments()
        _, mu_p, ls_p = self._moments(np.where(in_support, theta_prop, self._theta()))
        ll_cur = self._row_loglik(mu_c, ls_c)
        ll_new = self._row_loglik(mu_p, ls_p)
        acc = in_support & (np.log(u) < (ll_new - ll_cur) + dprior)
        if sites is not None:
            keep = np.zeros(self.m, dtype=bool)
            keep[np.asarray(sites)] = True
            acc &= keep
        self.Phi[acc, 4] = prop[acc]
        self.accepted["cp"] += acc
        return acc

    def gibbs_discrete_cp(self, sites=None):
        """Exact categorical draw of the discrete change-point index.

        The full conditional over the candidate indices 1..nu-1 is the
        per-candidate likelihood under a uniform prior, normalized with
        log-sum-exp.
        """
        ct = self.cp_candidates
        C = ct.shape[0]
        G = np.where(self.x[None, :] >= ct[:, None], self.x[None, :] - ct[:, None], 0.0)
        mu = self.Phi[:, 0][:, None, None] + self.Phi[:, 1][:, None, None] * G[None, :, :]
        ls = self.Phi[:, 2][:, None, None] + self.Phi[:, 3][:, None, None] * G[None, :, :]
        if self.prior_only:
            ll = np.zeros((self.m, C))
        else:
            r = (self.latent[:, None, :] - mu) * np.exp(-ls)
            ll = np.sum(-ls - 0.5 * r * r, axis=2)
        logp = ll - logsumexp(ll, axis=1, keepdims=True)
        cum = np.cumsum(np.exp(logp), axis=1)
        u = self.rng.random(self.m)
        idx = np.minimum((cum < u[:, None]).sum(axis=1), C - 1)
        if sites is not None:
            keep = np.zeros(self.m, dtype=bool)
            keep[np.asarray(sites)] = True
            self.Phi[keep, 4] = ct[idx[keep]]
        else:
            self.Phi[:, 4] = ct[idx]
        self.accepted["cp"] += 1.0
        return idx

    def metropolis_uniform_cp(self, site):
        """Single-site change-point update; returns True if accepted."""
        return bool(self._mh_cp_continuous(sites=[site])[site])

    def gibbs_hyper(self):
        """Conjugate normal / inverse-gamma updates of the hierarchies."""
        if not self.prior.sample_hyper:
            return
        pr = self.prior
        for c in self._hier_cols:
            col = self.Phi[:, c]
            prec = self.m / self.hyper_var[c] + 1.0 / pr.hyper_mean_var
            mean = (col.sum() / self.hyper_var[c]) / prec
            self.hyper_mean[c] = mean + self.rng.standard_normal() / np.sqrt(prec)
            shape = pr.ig_shape + 0.5 * self.m
            rate = pr.ig_rate + 0.5 * float(np.sum((col - self.hyper_mean[c]) ** 2))
            self.hyper_var[c] = rate / self.rng.gamma(shape)

    def sweep(self):
        self._step_name = "latent"
        self.gibbs_latent()
        self._step_name = "beta"
        self.gibbs_beta()
        self._step_name = "lambda0"
        self._mh_lambda(2)
        self._step_name = "lambda1"
        self._mh_lambda(3)
        self._step_name = "cp"
        if self.cp_mode == "discrete":
            self.gibbs_discrete_cp()
        else:
            self._mh_cp_continuous()
        self._step_name = "hyper"
        self.gibbs_hyper()
        self.attempts += 1

    def pilot_adapt(self):
        cfg = self.config
        if not cfg.pilot:
            return self.prop_sd
        tuned = ["lambda0", "lambda1"] + (["cp"] if self.cp_mode != "discrete" else [])
        lo, hi = cfg.pilot_target_low, cfg.pilot_target_high
        for _ in range(cfg.pilot_max_blocks):
            self.reset_counters()
            for _ in range(cfg.pilot_block):
                self.sweep()
            all_ok = True
            for name in tuned:
                rate = self.accepted[name] / cfg.pilot_block
                sd = self.prop_sd[name]
                sd[rate > hi] *= 2.0
                sd[rate < lo] *= 0.5
                if np.any(rate > hi) or np.any(rate < lo):
                    all_ok = False
            if all_ok:
                break
        self.reset_counters()
        return self.prop_sd


class PlrChain:
    """Per-site Bayesian Tobit linear regression (no change point).

    The stored effect matrix encodes the line as a change at x1 with zero
    pre-change span: beta0 is the level at x1, beta1 the slope, lambda0
    half the log of the residual variance, lambda1 = 0, eta = x1.
    """

    def __init__(self, series, config, prior, prior_only=False):
        self.series = series
        self.config = config
        self.prior = prior
        self.prior_only = prior_only
        self.rng = np.random.default_rng(config.seed)
        self.m = series.m
        self.x = series.times.copy()
        self.g = np.tile(self.x - series.x1, (self.m, 1))
        self.obs = series.obs
        self.cens = series.censored
        self.latent = np.where(self.cens, -0.1, self.obs)
        self.beta = np.zeros((self.m, 2))
        for i in range(self.m):
            vals = self.obs[i, ~self.cens[i]]
            self.beta[i, 0] = vals.mean() if vals.size else 0.0
        self.sig2 = np.ones(self.m)
        self._step_name = "init"
        self.attempts = 0

    def snapshot(self):
        phi = np.zeros((self.m, P))
        phi[:, 0] = self.beta[:, 0]
        phi[:, 1] = self.beta[:, 1]
        phi[:, 2] = 0.5 * np.log(self.sig2)
        phi[:, 4] = self.series.x1
        return phi, np.full(P, np.nan), np.full((P, P), np.nan), np.nan

    def accept_summary(self):
        return {}

    def meta(self):
        return {
            "prior_only": self.prior_only,
            "beta_var": self.prior.beta_var,
            "y_scale": self.series.y_scale,
            "time_scale": self.series.time_scale,
            "eye_id": self.series.eye_id,
        }

    def sweep(self):
        rng = self.rng
        pr = self.prior
        self._step_name = "latent"
        if not self.prior_only and self.cens.any():
            mu = self.beta[:, 0][:, None] + self.beta[:, 1][:, None] * self.g
            sd = np.sqrt(self.sig2)[:, None] * np.ones_like(mu)
            self.latent[self.cens] = truncated_normal(mu[self.cens], sd[self.cens], 0.0, rng)
        self._step_name = "beta"
        if self.prior_only:
            self.beta = np.sqrt(pr.beta_var) * rng.standard_normal((self.m, 2))
        else:
            w = 1.0 / self.sig2
            nu = self.x.shape[0]
            p11 = nu * w + 1.0 / pr.beta_var
            p12 = self.g.sum(axis=1) * w
            p22 = (self.g * self.g).sum(axis=1) * w + 1.0 / pr.beta_var
            r1 = self.latent.sum(axis=1) * w
            r2 = (self.g * self.latent).sum(axis=1) * w
            l11 = np.sqrt(p11)
            l21 = p12 / l11
            l22 = np.sqrt(p22 - l21 * l21)
            w1 = r1 / l11
            w2 = (r2 - l21 * w1) / l22
            mean2 = w2 / l22
            mean1 = (w1 - l21 * mean2) / l11
            z = rng.standard_normal((self.m, 2))
            a2 = z[:, 1] / l22
            a1 = (z[:, 0] - l21 * a2) / l11
            self.beta[:, 0] = mean1 + a1
            self.beta[:, 1] = mean2 + a2
        self._step_name = "sigma2"
        if self.prior_only:
            self.sig2 = pr.ig_rate / rng.gamma(pr.ig_shape, size=self.m)
        else:
            resid = self.latent - (self.beta[:, 0][:, None] + self.beta[:, 1][:, None] * self.g)
            shape = pr.ig_shape + 0.5 * self.x.shape[0]
            rate = pr.ig_rate + 0.5 * (resid * resid).sum(axis=1)
            self.sig2 = rate / rng.gamma(shape, size=self.m)
        self.attempts += 1

    def pilot_adapt(self):
        return {}
