"""Model fit, prediction, convergence, and progression diagnostics.

All functions are pure post-processing over :class:`PosteriorSamples`;
they never touch the samplers, so the deviance here is an independent
check on whatever produced the draws. The deviance is minus twice the
observed-data Tobit log likelihood (censored cells enter through the
normal CDF), which is comparable across every model variant.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from . import DataError, NumericError
from .likelihood import effect_moments, tobit_log_lik_total

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class FitDiagnostics:
    dic: float
    p_d: float
    mean_deviance: float
    n_dropped_draws: int = 0


@dataclass
class ProgressionMetric:
    """Per-site probabilities that the change point precedes a time point,
    and their maximum over the field."""

    per_site: np.ndarray
    max_metric: float


@dataclass
class LogisticReport:
    aic: float
    auc: float
    p_value: float
    converged: bool = True
    slope: float = float("nan")
    intercept: float = float("nan")


def observed_deviance(Phi, series):
    """-2 x observed-data Tobit log likelihood for one effect-matrix draw."""
    mu, sig = effect_moments(Phi, series.times)
    return -2.0 * tobit_log_lik_total(series.obs, series.censored, mu, sig)


def dic(samples, series):
    """Deviance information criterion with p_D from the plug-in deviance.

    The plug-in uses the posterior means of the effect columns, with the
    observed change point recomputed from the posterior-mean latent change
    point (the clamp is nonlinear, so this convention is fixed rather than
    averaging clamped values). Draws with non-finite deviance are dropped
    with a warning.
    """
    n = samples.n_draws
    if n < 2:
        raise DataError("DIC needs at least two draws")
    dev = np.empty(n)
    for r in range(n):
        try:
            dev[r] = observed_deviance(samples.Phi[r], series)
        except NumericError:
            dev[r] = np.inf
    good = np.isfinite(dev)
    dropped = int(n - good.sum())
    if dropped:
        warnings.warn(f"DIC dropped {dropped} draws with non-finite deviance")
        if not good.any():
            raise DataError("all draws produced non-finite deviance")
    mean_dev = float(dev[good].mean())
    dev_at_mean = observed_deviance(samples.Phi[good].mean(axis=0), series)
    p_d = mean_dev - dev_at_mean
    return FitDiagnostics(dic=mean_dev + p_d, p_d=p_d, mean_deviance=mean_dev,
                          n_dropped_draws=dropped)


def tobit_mean(mu, sigma):
    """E[max(0, Y)] for Y ~ N(mu, sigma^2): mu*Phi(mu/sigma) + sigma*phi(mu/sigma)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = mu / sigma
    out = mu * ndtr(z) + sigma * np.exp(-0.5 * z * z - 0.5 * LOG_2PI)
    return float(out) if out.ndim == 0 else out


def predict_tobit_mean(samples, times):
    """Posterior-mean Tobit prediction per site at the given times (m x T).

    The change point is clamped below at x1 but not above, so a latent
    change sitting past the fitted window starts bending the forecast once
    the evaluation time crosses it; on the fitted window this coincides
    with the fitted moments.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    acc = np.zeros((samples.m, times.shape[0]))
    for r in range(samples.n_draws):
        mu, sig = effect_moments(samples.Phi[r], times,
                                 x1=samples.x1, x_nu=np.inf)
        acc += tobit_mean(mu, sig)
    return acc / samples.n_draws


def mspe(samples, heldout_times, heldout_obs):
    """Mean squared prediction error at held-out visits.

    Compares the posterior-mean Tobit expectation against the observed
    (censored) values; squared errors are averaged over sites, one value
    per held-out time.
    """
    heldout_times = np.atleast_1d(np.asarray(heldout_times, dtype=float))
    heldout_obs = np.asarray(heldout_obs, dtype=float)
    if heldout_obs.ndim == 1:
        heldout_obs = heldout_obs[:, None]
    if heldout_obs.shape != (samples.m, heldout_times.shape[0]):
        raise DataError("held-out grid does not match sites x times")
    pred = predict_tobit_mean(samples, heldout_times)
    out = np.mean((pred - heldout_obs) ** 2, axis=0)
    return float(out[0]) if out.shape[0] == 1 else out


def _spectral_var0(x):
    """Long-run variance of the mean via a Bartlett-windowed autocovariance sum."""
    n = x.shape[0]
    xc = x - x.mean()
    lags = max(1, int(round(1.5 * n ** (1.0 / 3.0))))
    lags = min(lags, n - 1)
    gamma0 = float(xc @ xc) / n
    s = gamma0
    for k in range(1, lags + 1):
        gk = float(xc[k:] @ xc[:-k]) / n
        s += 2.0 * (1.0 - k / (lags + 1.0)) * gk
    return max(s, 0.0) / n


def geweke(chain, first=0.1, last=0.5):
    """Geweke convergence z-score comparing early and late chain segments.

    Means of the first ``first`` and last ``last`` fractions are compared
    with a spectral (Bartlett-window) estimate of each segment's variance
    of the mean. Constant chains are rejected.
    """
    x = np.asarray(chain, dtype=float)
    n = x.shape[0]
    if n < 100:
        raise DataError("geweke needs a chain of at least 100 draws")
    a = x[: int(first * n)]
    b = x[n - int(last * n):]
    va = _spectral_var0(a)
    vb = _spectral_var0(b)
    if va + vb <= 0.0:
        raise DataError("geweke is undefined for a constant chain")
    return float((a.mean() - b.mean()) / np.sqrt(va + vb))


def geweke_panel(samples, rng=None):
    """Max |z| over the conventional parameter panel.

    Applies the Geweke score to each delta component, alpha, the Sigma
    diagonal, and five randomly chosen effect entries (seeded separately
    from the chain), skipping parameters a variant does not carry.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    zs = []
    for k in range(samples.delta.shape[1]):
        col = samples.delta[:, k]
        if np.all(np.isfinite(col)) and col.std() > 0:
            zs.append(abs(geweke(col)))
    if np.all(np.isfinite(samples.alpha)) and samples.alpha.std() > 0:
        zs.append(abs(geweke(samples.alpha)))
    for k in range(samples.Sigma.shape[1]):
        col = samples.Sigma[:, k, k]
        if np.all(np.isfinite(col)) and col.std() > 0:
            zs.append(abs(geweke(col)))
    m, p = samples.Phi.shape[1], samples.Phi.shape[2]
    for _ in range(5):
        i = int(rng.integers(m))
        c = int(rng.integers(p))
        col = samples.Phi[:, i, c]
        if col.std() > 0:
            zs.append(abs(geweke(col)))
    if not zs:
        raise DataError("no usable chains for the Geweke panel")
    return float(max(zs))


def cp_probability(samples, t):
    """Per-site posterior probability that the change point precedes t.

    Inside the fitted window this is the fraction of clamped change-point
    draws below t; beyond the window it is evaluated through the latent
    process, so probabilities keep growing as t moves into the future.
    """
    t = float(t)
    if t <= samples.x_nu:
        draws = samples.theta
    else:
        draws = samples.eta
    return np.mean(draws < t, axis=0)


def progression_metric(samples, t=None):
    """The progression summary: max over sites of P[theta(s) < t | data]."""
    t = samples.x_nu if t is None else float(t)
    p = cp_probability(samples, t)
    return ProgressionMetric(per_site=p, max_metric=float(p.max()))


def auc_mann_whitney(metric, labels):
    """Area under the ROC curve as the rank statistic of metric vs labels."""
    metric = np.asarray(metric, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos = metric[labels]
    neg = metric[~labels]
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUC needs both classes present")
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (pos.size * neg.size))


def logistic_diagnostic(metrics, labels, max_iter=50, tol=1e-10):
    """One-covariate logistic regression of progression labels on a metric.

    Fit by iteratively reweighted least squares; reports AIC, AUC, and the
    Wald p-value of the slope. Perfect separation is flagged via the
    ``converged`` field (AUC is still exact).
    """
    x = np.asarray(metrics, dtype=float)
    yb = np.asarray(labels, dtype=bool)
    if yb.sum() < 2 or (~yb).sum() < 2:
        raise DataError("need at least two eyes per class")
    auc = auc_mann_whitney(x, yb)
    y = yb.astype(float)
    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    converged = False
    for _ in range(max_iter):
        p = expit(X @ beta)
        W = p * (1.0 - p)
        if np.any(W < 1e-12):
            break
        H = X.T @ (W[:, None] * X)
        grad = X.T @ (y - p)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if np.max(np.abs(beta)) > 1e3:
        converged = False
    p = np.clip(expit(X @ beta), 1e-12, 1.0 - 1e-12)
    loglik = float(np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    if not converged:
        return LogisticReport(aic=float("nan"), auc=auc, p_value=float("nan"),
                              converged=False, slope=float(beta[1]), intercept=float(beta[0]))
    aic = 2.0 * 2 - 2.0 * loglik
    W = p * (1.0 - p)
    H = X.T @ (W[:, None] * X)
    cov = np.linalg.inv(H)
    se = float(np.sqrt(cov[1, 1]))
    z = beta[1] / se
    p_value = float(2.0 * np.exp(log_ndtr(-abs(z))))
    return LogisticReport(aic=float(aic), auc=auc, p_value=p_value, converged=True,
                          slope=float(beta[1]), intercept=float(beta[0]))


def credible_interval(draws, level=0.95):
    """Equal-tailed interval via linearly interpolated order statistics."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise DataError("credible interval needs at least two draws")
    if not 0.0 < level <= 1.0:
        raise DataError("level must lie in (0, 1]")
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(draws, [tail, 1.0 - tail])
    return float(lo), float(hi)
