"""Metropolis-within-Gibbs sampler for the spatial change-point model.

One sweep updates, in order: the latent censored observations, the mean
coefficients (beta0, beta1) as a joint conjugate block, the variance
coefficients lambda0 and lambda1 and the latent change point eta site by
site with random-walk Metropolis steps, then the prior mean delta (conjugate
normal), the cross-covariance Sigma (conjugate inverse-Wishart), and the
adjacency decay alpha (random walk on a logit transform of its bounded
support). The sweep order is fixed for reproducibility; any fixed scan is
valid for Metropolis-within-Gibbs.

Proposal scales are tuned by pilot adaptation before burn-in and frozen
afterwards, which preserves the chain's stationary distribution.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import log_expit
from scipy.stats import invwishart

from . import DataError, NumericError
from . import _kernels
from .graph import alpha_upper_bound, precision_matrix
from .likelihood import EFFECT_NAMES, observed_cp
from .mcar import column_conditional
from .truncnorm import truncated_normal

P_EFFECTS = len(EFFECT_NAMES)
MH_COLUMNS = ("lambda0", "lambda1", "eta")


def alpha_to_real(alpha, a, b):
    """Map alpha in (a, b) to the real line: log((alpha - a) / (b - alpha))."""
    return float(np.log((alpha - a) / (b - alpha)))


def alpha_from_real(delta_t, a, b):
    """Inverse of :func:`alpha_to_real` via the logistic function."""
    s = 1.0 / (1.0 + np.exp(-delta_t))
    return float(a + (b - a) * s)


@dataclass
class McmcConfig:
    """Chain length, thinning, pilot adaptation, and the seed.

    Defaults give 250,000 post burn-in sweeps thinned to 10,000 stored
    draws. The thinned draw count (n_iter - n_burn) / n_thin must be exact.
    """

    n_iter: int = 260_000
    n_burn: int = 10_000
    n_thin: int = 25
    seed: int = 0
    pilot: bool = True
    pilot_block: int = 100
    pilot_target_low: float = 0.2
    pilot_target_high: float = 0.6
    pilot_max_blocks: int = 20

    def __post_init__(self):
        if self.n_burn >= self.n_iter:
            raise DataError("n_burn must be smaller than n_iter")
        if self.n_thin < 1 or (self.n_iter - self.n_burn) % self.n_thin != 0:
            raise DataError("(n_iter - n_burn) must be an exact multiple of n_thin")

    @property
    def n_draws(self):
        return (self.n_iter - self.n_burn) // self.n_thin


@dataclass
class SpatialCpConfig:
    """Hyperparameters and structural switches for the spatial model.

    kappa2 is the prior variance of each component of delta; Sigma gets an
    inverse-Wishart(xi, Psi) prior with defaults xi = p + 1 and Psi = I
    (marginally uniform correlations); alpha is uniform on
    (alpha_bounds[0], alpha_bounds[1]), by default (0, b) with b from
    :func:`spcp.graph.alpha_upper_bound`. The sample_* switches freeze a
    hyperparameter at its initial value, which is useful for validation
    runs.
    """

    kappa2: float = 1000.0
    xi: float = None
    Psi: np.ndarray = None
    rho: float = 0.99
    alpha_bounds: tuple = None
    sample_delta: bool = True
    sample_sigma: bool = True
    sample_alpha: bool = True
    init_delta: np.ndarray = None
    init_Sigma: np.ndarray = None
    init_alpha: float = None

    def resolved(self, p=P_EFFECTS):
        xi = p + 1 if self.xi is None else self.xi
        Psi = np.eye(p) if self.Psi is None else np.asarray(self.Psi, dtype=float)
        return replace(self, xi=float(xi), Psi=Psi)


@dataclass
class ChainState:
    """Mutable sampler state: effects, hyperparameters, latent data, tuning."""

    Phi: np.ndarray
    delta: np.ndarray
    Sigma: np.ndarray
    alpha: float
    latent: np.ndarray
    prop_sd: dict
    iteration: int = 0


@dataclass
class PosteriorSamples:
    """Thinned post burn-in draws plus everything needed to reuse them.

    Phi has shape (n_draws, m, 5) with columns (beta0, beta1, lambda0,
    lambda1, eta); theta is derived by clamping eta to the fitted window.
    Variants without a given hyperparameter store NaN in that slot.
    """

    Phi: np.ndarray
    delta: np.ndarray
    Sigma: np.ndarray
    alpha: np.ndarray
    site_ids: np.ndarray
    times: np.ndarray
    variant: str = "spatial-cp"
    accept_rates: dict = field(default_factory=dict)
    config: McmcConfig = None
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return int(self.Phi.shape[0])

    @property
    def m(self):
        return int(self.Phi.shape[1])

    @property
    def x1(self):
        return float(self.times[0])

    @property
    def x_nu(self):
        return float(self.times[-1])

    @property
    def eta(self):
        return self.Phi[:, :, 4]

    @property
    def theta(self):
        return np.clip(self.Phi[:, :, 4], self.x1, self.x_nu)

    def column(self, name):
        return self.Phi[:, :, EFFECT_NAMES.index(name)]

    def save(self, out_dir):
        from .dataio import save_samples

        save_samples(self, out_dir)

    @classmethod
    def load(cls, out_dir):
        from .dataio import load_samples

        return load_samples(out_dir)


class SpatialCpChain:
    """One chain of the spatial sampler with its working caches.

    The heavy per-sweep quantities (the Leroux precision and its Cholesky
    factor, per-site neighbor weights, the mean/log-sd matrices, and
    per-site likelihood sums) are cached and refreshed only by the steps
    that invalidate them; Q changes only when an alpha proposal is
    accepted.
    """

    def __init__(self, series, graph, config, prior=None, prior_only=False, rng=None):
        self.series = series
        self.graph = graph
        self.config = config
        self.prior = (prior or SpatialCpConfig()).resolved()
        self.prior_only = bool(prior_only) or series is None
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self.m = graph.m
        self.rho = self.prior.rho
        if self.prior.alpha_bounds is not None:
            self.a_alpha, self.b_alpha = map(float, self.prior.alpha_bounds)
        else:
            self.a_alpha, self.b_alpha = 0.0, alpha_upper_bound(graph)
        if not self.a_alpha < self.b_alpha:
            raise DataError("alpha bounds must satisfy a < b")

        if self.prior_only:
            self.x = np.zeros(0)
            self.x1, self.x_nu = 0.0, 1.0
            self.obs = np.zeros((self.m, 0))
            self.cens = np.zeros((self.m, 0), dtype=bool)
        else:
            if series.m != self.m:
                raise DataError("series site count does not match the graph")
            self.x = series.times.copy()
            self.x1, self.x_nu = series.x1, series.x_nu
            self.obs = series.obs
            self.cens = series.censored

        # neighbor structure (CSR over sites) and per-entry dissimilarities
        self.indptr, self.nbr = graph.neighbor_lists()
        self.z_csr = np.abs(graph.dissim[self.nbr] - np.repeat(graph.dissim[np.arange(self.m)], np.diff(self.indptr)))

        self._col_k = {c: np.array([i]) for i, c in enumerate(EFFECT_NAMES)}
        self._col_j = {c: np.array([j for j in range(P_EFFECTS) if j != i])
                       for i, c in enumerate(EFFECT_NAMES)}
        self.state = self._init_state()
        self._refresh_alpha_caches(self.state.alpha)
        try:
            self._sigma_chol = np.linalg.cholesky(self.state.Sigma)
        except np.linalg.LinAlgError as e:
            raise DataError("initial Sigma must be positive definite") from e
        self._refresh_effect_caches()
        self.reset_counters()
        self._step_name = "init"

    # ----- initialization -------------------------------------------------

    def _init_state(self):
        m, pr = self.m, self.prior
        nu = self.x.shape[0]
        Phi = np.zeros((m, P_EFFECTS))
        if nu:
            latent = np.where(self.cens, -0.1, self.obs)
            for i in range(m):
                vals = self.obs[i, ~self.cens[i]]
                Phi[i, 0] = vals.mean() if vals.size else 0.0
                sd = vals.std() if vals.size > 1 else 0.0
                Phi[i, 2] = np.log(sd) if sd > 0 else 0.0
        else:
            latent = np.zeros((m, 0))
        Phi[:, 4] = 0.5 * (self.x1 + self.x_nu)
        if pr.init_delta is not None:
            delta = np.asarray(pr.init_delta, dtype=float).copy()
        else:
            delta = Phi.mean(axis=0)
        Sigma = np.eye(P_EFFECTS) if pr.init_Sigma is None else np.asarray(pr.init_Sigma, dtype=float).copy()
        alpha = 0.5 * (self.a_alpha + self.b_alpha) if pr.init_alpha is None else float(pr.init_alpha)
        if not self.a_alpha < alpha < self.b_alpha:
            raise DataError("initial alpha must be strictly inside its bounds")
        span = self.x_nu - self.x1
        prop_sd = {
            "lambda0": np.full(m, 0.1),
            "lambda1": np.full(m, 0.1),
            "eta": np.full(m, 0.25 * span),
            "alpha": 1.0,
        }
        return ChainState(Phi=Phi, delta=delta, Sigma=Sigma, alpha=alpha,
                          latent=latent, prop_sd=prop_sd)

    def _refresh_alpha_caches(self, alpha):
        Q = precision_matrix(self.graph, alpha, self.rho).Q
        L = np.linalg.cholesky(Q)
        self.Q = Q
        self.Q_chol = L
        self.Q_logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        self.wv = np.exp(-self.z_csr * alpha)
        self.qdiag = np.diag(Q).copy()

    def _refresh_effect_caches(self):
        """Recompute theta, the change-point offsets, mu, log sd, and the
        per-site likelihood sums from the current state."""
        Phi = self.state.Phi
        self.theta = observed_cp(Phi[:, 4], self.x1, self.x_nu)
        self.g = np.where(self.x[None, :] >= self.theta[:, None],
                          self.x[None, :] - self.theta[:, None], 0.0)
        self.mu = Phi[:, 0][:, None] + Phi[:, 1][:, None] * self.g
        self.logsig = Phi[:, 2][:, None] + Phi[:, 3][:, None] * self.g
        self.sitell = np.zeros(self.m)
        if self.x.shape[0]:
            _kernels.site_loglik(self.state.latent, self.mu, self.logsig, self.sitell)

    def refresh_caches(self):
        """Rebuild every cache from the state (after overwriting state fields)."""
        self._refresh_alpha_caches(self.state.alpha)
        self._sigma_chol = np.linalg.cholesky(self.state.Sigma)
        self._refresh_effect_caches()

    def reset_counters(self):
        self.accepted = {c: np.zeros(self.m) for c in MH_COLUMNS}
        self.accepted["alpha"] = 0.0
        self.attempts = 0

    def snapshot(self):
        st = self.state
        return st.Phi.copy(), st.delta.copy(), st.Sigma.copy(), float(st.alpha)

    # ----- Gibbs steps ----------------------------------------------------

    def gibbs_latent(self):
        """Redraw censored latent cells from upper-truncated normals."""
        if self.prior_only or not self.cens.any():
            return
        mu_c = self.mu[self.cens]
        sig_c = np.exp(self.logsig[self.cens])
        self.state.latent[self.cens] = truncated_normal(mu_c, sig_c, 0.0, self.rng)
        _kernels.site_loglik(self.state.latent, self.mu, self.logsig, self.sitell)

    def gibbs_beta(self):
        """Joint conjugate draw of all beta0, beta1 effects.

        The posterior precision is the conditional-prior precision
        Q (x) Sigma_{k|j}^{-1} plus a block-diagonal likelihood term with a
        2 x 2 block per site.
        """
        st = self.state
        E, S_cond = column_conditional(st.Phi, st.delta, st.Sigma,
                                       np.array([0, 1]), np.array([2, 3, 4]))
        if self.prior_only:
            L_c = np.linalg.cholesky(S_cond)
            Z = self.rng.standard_normal((self.m, 2))
            st.Phi[:, :2] = E + solve_triangular(self.Q_chol.T, Z, lower=False) @ L_c.T
        else:
            S_inv = np.linalg.inv(S_cond)
            w = np.exp(-2.0 * self.logsig)
            wg = w * self.g
            a11 = w.sum(axis=1)
            a12 = wg.sum(axis=1)
            a22 = (wg * self.g).sum(axis=1)
            y = st.latent
            b1 = (w * y).sum(axis=1)
            b2 = (wg * y).sum(axis=1)
            P = np.kron(self.Q, S_inv)
            ii = 2 * np.arange(self.m)
            P[ii, ii] += a11
            P[ii, ii + 1] += a12
            P[ii + 1, ii] += a12
            P[ii + 1, ii + 1] += a22
            rhs = np.empty(2 * self.m)
            rhs[0::2] = b1
            rhs[1::2] = b2
            rhs += (S_inv @ E.T @ self.Q).T.ravel()
            try:
                L = np.linalg.cholesky(P)
            except np.linalg.LinAlgError as e:
                raise NumericError("beta full-conditional precision is singular") from e
            mean = cho_solve((L, True), rhs, check_finite=False)
            draw = mean + solve_triangular(L.T, self.rng.standard_normal(2 * self.m), lower=False)
            st.Phi[:, 0] = draw[0::2]
            st.Phi[:, 1] = draw[1::2]
        self.mu = st.Phi[:, 0][:, None] + st.Phi[:, 1][:, None] * self.g
        if self.x.shape[0]:
            _kernels.site_loglik(st.latent, self.mu, self.logsig, self.sitell)

    def gibbs_delta(self):
        """Conjugate draw of the prior mean.

        Uses (1' Q 1) Sigma^{-1} for the prior-precision contribution, so
        no mp-dimensional algebra appears.
        """
        st = self.state
        q1 = self.Q.sum(axis=1)
        qsum = float(q1.sum())
        cho_s = (self._sigma_chol, True)
        A = qsum * cho_solve(cho_s, np.eye(P_EFFECTS), check_finite=False)
        A[np.diag_indices_from(A)] += 1.0 / self.prior.kappa2
        b = cho_solve(cho_s, st.Phi.T @ q1, check_finite=False)
        L = np.linalg.cholesky(0.5 * (A + A.T))
        mean = cho_solve((L, True), b, check_finite=False)
        st.delta = mean + solve_triangular(L.T, self.rng.standard_normal(P_EFFECTS), lower=False)

    def gibbs_sigma(self):
        """Conjugate inverse-Wishart draw of the cross-covariance."""
        st = self.state
        D = st.Phi - st.delta[None, :]
        S = D.T @ (self.Q @ D)
        S = 0.5 * (S + S.T)
        scale = S + self.prior.Psi
        try:
            np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as e:
            raise NumericError("inverse-Wishart scale matrix is not positive definite") from e
        st.Sigma = invwishart.rvs(df=self.m + self.prior.xi, scale=scale, random_state=self.rng)
        self._sigma_chol = np.linalg.cholesky(st.Sigma)

    # ----- Metropolis steps -------------------------------------------------

    def _mh_column(self, column, sites=None):
        st = self.state
        c = EFFECT_NAMES.index(column)
        E2, S_cond = column_conditional(st.Phi, st.delta, st.Sigma,
                                        self._col_k[column], self._col_j[column])
        E = np.ascontiguousarray(E2[:, 0])
        s2 = float(S_cond[0, 0])
        if sites is None:
            sites = np.arange(self.m, dtype=np.int64)
        else:
            sites = np.asarray(sites, dtype=np.int64)
        n = sites.shape[0]
        z = self.rng.standard_normal(n)
        u = self.rng.random(n)
        acc = np.zeros(n, dtype=np.int64)
        y = st.latent
        if column == "eta":
            _kernels.sweep_eta(
                st.Phi[:, 4], self.theta, E, self.indptr, self.nbr, self.wv,
                self.qdiag, self.rho, s2, self.x, self.x1, self.x_nu,
                st.Phi[:, 0], st.Phi[:, 1], st.Phi[:, 2], st.Phi[:, 3],
                y, self.mu, self.logsig, self.g, self.sitell,
                sites, st.prop_sd["eta"], z, u, acc)
        else:
            _kernels.sweep_lambda(
                column == "lambda1", st.Phi[:, c], E, self.indptr, self.nbr,
                self.wv, self.qdiag, self.rho, s2, y, self.mu, self.logsig,
                self.g, self.sitell, sites, st.prop_sd[column], z, u, acc)
        np.add.at(self.accepted[column], sites, acc)
        return acc

    def metropolis_site_update(self, column, i):
        """Single-site random-walk update; returns True if accepted."""
        if column not in MH_COLUMNS:
            raise DataError(f"no Metropolis update for column {column!r}")
        return bool(self._mh_column(column, sites=[i])[0])

    def metropolis_alpha(self):
        """Random walk on the logit-transformed adjacency decay.

        The target sees alpha through the MCAR density only (uniform prior);
        the Jacobian of the transform contributes s(1-s) with
        s = sigmoid(Delta).
        """
        if not self.prior.sample_alpha:
            return False
        st = self.state
        a, b = self.a_alpha, self.b_alpha
        delta_t = alpha_to_real(st.alpha, a, b)
        delta_p = delta_t + st.prop_sd["alpha"] * self.rng.standard_normal()
        alpha_p = alpha_from_real(delta_p, a, b)
        if not a < alpha_p < b:  # proposal collapsed onto a bound numerically
            return False
        Qp = precision_matrix(self.graph, alpha_p, self.rho).Q
        try:
            Lp = np.linalg.cholesky(Qp)
        except np.linalg.LinAlgError:
            return False
        logdet_p = 2.0 * float(np.sum(np.log(np.diag(Lp))))
        D = st.Phi - st.delta[None, :]
        G = D @ cho_solve((self._sigma_chol, True), D.T, check_finite=False)
        quad_cur = float(np.sum(self.Q * G))
        quad_p = float(np.sum(Qp * G))
        log_r = 0.5 * P_EFFECTS * (logdet_p - self.Q_logdet) - 0.5 * (quad_p - quad_cur)
        log_r += (log_expit(delta_p) + log_expit(-delta_p)) - (log_expit(delta_t) + log_expit(-delta_t))
        if np.isfinite(log_r) and np.log(self.rng.random()) < log_r:
            st.alpha = float(alpha_p)
            self.Q = Qp
            self.Q_chol = Lp
            self.Q_logdet = logdet_p
            self.wv = np.exp(-self.z_csr * alpha_p)
            self.qdiag = np.diag(Qp).copy()
            self.accepted["alpha"] += 1
            return True
        return False

    # ----- orchestration ----------------------------------------------------

    def sweep(self):
        st = self.state
        self._step_name = "latent"
        self.gibbs_latent()
        self._step_name = "beta"
        self.gibbs_beta()
        self._step_name = "lambda0"
        self._mh_column("lambda0")
        self._step_name = "lambda1"
        self._mh_column("lambda1")
        self._step_name = "eta"
        self._mh_column("eta")
        self._step_name = "delta"
        if self.prior.sample_delta:
            self.gibbs_delta()
        self._step_name = "sigma"
        if self.prior.sample_sigma:
            self.gibbs_sigma()
        self._step_name = "alpha"
        self.metropolis_alpha()
        self.attempts += 1
        st.iteration += 1

    def pilot_adapt(self):
        """Tune proposal scales toward the target acceptance band.

        Runs blocks of sweeps; after each block any parameter whose block
        acceptance rate exceeds the band is doubled, any below is halved.
        Stops when every rate is in band or the block budget is spent.
        Tuning happens before burn-in and the scales are frozen afterwards.
        """
        cfg = self.config
        if not cfg.pilot:
            return self.state.prop_sd
        lo, hi = cfg.pilot_target_low, cfg.pilot_target_high
        for _ in range(cfg.pilot_max_blocks):
            self.reset_counters()
            for _ in range(cfg.pilot_block):
                self.sweep()
            all_ok = True
            for col in MH_COLUMNS:
                rate = self.accepted[col] / cfg.pilot_block
                sd = self.state.prop_sd[col]
                sd[rate > hi] *= 2.0
                sd[rate < lo] *= 0.5
                if np.any(rate > hi) or np.any(rate < lo):
                    all_ok = False
            arate = self.accepted["alpha"] / cfg.pilot_block
            if self.prior.sample_alpha:
                if arate > hi:
                    self.state.prop_sd["alpha"] *= 2.0
                    all_ok = False
                elif arate < lo:
                    self.state.prop_sd["alpha"] *= 0.5
                    all_ok = False
            if all_ok:
                break
        self.reset_counters()
        return self.state.prop_sd


def collect_draws(chain, config):
    """Drive a chain through n_iter sweeps, storing the thinned tail.

    The chain must expose sweep(), snapshot() -> (Phi, delta, Sigma, alpha),
    and a _step_name attribute for error reporting. Returns stacked arrays
    (Phi, delta, Sigma, alpha).
    """
    n = config.n_draws
    phi0, delta0, sigma0, _ = chain.snapshot()
    out_phi = np.empty((n,) + phi0.shape)
    out_delta = np.empty((n,) + delta0.shape)
    out_sigma = np.empty((n,) + sigma0.shape)
    out_alpha = np.empty(n)
    kept = 0
    for it in range(config.n_iter):
        try:
            chain.sweep()
        except Exception as e:
            raise NumericError(f"sweep {it} failed in step '{chain._step_name}': {e}") from e
        if it >= config.n_burn and (it - config.n_burn) % config.n_thin == config.n_thin - 1:
            phi, delta, sigma, alpha = chain.snapshot()
            out_phi[kept] = phi
            out_delta[kept] = delta
            out_sigma[kept] = sigma
            out_alpha[kept] = alpha
            kept += 1
    return out_phi, out_delta, out_sigma, out_alpha


def run_chain(series, graph, config, prior=None, prior_only=False, variant="spatial-cp"):
    """Run one spatial chain and return the thinned posterior draws.

    Deterministic given ``config.seed`` and the site ordering. Any step
    failure aborts with the sweep index and step name attached.
    """
    chain = SpatialCpChain(series, graph, config, prior=prior, prior_only=prior_only)
    chain.pilot_adapt()
    out_phi, out_delta, out_sigma, out_alpha = collect_draws(chain, config)
    rates = {c: float(chain.accepted[c].mean() / chain.attempts) for c in MH_COLUMNS}
    rates["alpha"] = float(chain.accepted["alpha"] / chain.attempts)
    times = chain.x if chain.x.shape[0] else np.array([chain.x1, chain.x_nu])
    meta = {
        "prior_only": chain.prior_only,
        "alpha_bounds": [chain.a_alpha, chain.b_alpha],
        "rho": chain.rho,
        "kappa2": chain.prior.kappa2,
        "xi": chain.prior.xi,
    }
    if series is not None:
        meta["y_scale"] = series.y_scale
        meta["time_scale"] = series.time_scale
        meta["eye_id"] = series.eye_id
    return PosteriorSamples(
        Phi=out_phi, delta=out_delta, Sigma=out_sigma, alpha=out_alpha,
        site_ids=(series.site_ids if series is not None else graph.site_ids).copy(),
        times=times.copy(), variant=variant, accept_rates=rates, config=config, meta=meta)
