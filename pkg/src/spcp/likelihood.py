"""Change-point mean/variance processes and the Tobit likelihood.

Each site follows a constant-then-linear trajectory in both the mean and
the log standard deviation, with a shared change point theta:

    mu_t   = beta0 + beta1 * (x_t - theta) * 1{theta <= x_t}
    log sd = lambda0 + lambda1 * (x_t - theta) * 1{theta <= x_t}

theta is the latent change point eta clamped to the follow-up window, so
values outside [x_1, x_nu] encode "already progressed" / "not yet".
Observations are left-censored at zero (Tobit): Y* = max(0, Y).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from . import DataError, NumericError

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_SIGMA_CAP = 300.0

# Effect-matrix column order used throughout the package.
EFFECT_NAMES = ("beta0", "beta1", "lambda0", "lambda1", "eta")


def observed_cp(eta, x1, x_nu):
    """Observed change point: eta clamped to the follow-up window [x1, x_nu]."""
    if not x1 < x_nu:
        raise DataError("follow-up window requires x1 < x_nu")
    out = np.clip(eta, x1, x_nu)
    return float(out) if np.ndim(eta) == 0 else out


def cp_offset(times, theta):
    """(x_t - theta) * 1{theta <= x_t} for a vector of times."""
    times = np.asarray(times, dtype=float)
    return np.where(times >= theta, times - theta, 0.0)


def design_row(x_t, theta):
    """Design row [1, (x_t - theta) * 1{theta <= x_t}] at a single time."""
    return np.array([1.0, (x_t - theta) if theta <= x_t else 0.0])


@dataclass(frozen=True)
class SiteParams:
    """Per-site effects plus the derived observed change point."""

    beta0: float
    beta1: float
    lambda0: float
    lambda1: float
    eta: float
    theta: float

    @classmethod
    def from_effects(cls, beta0, beta1, lambda0, lambda1, eta, x1, x_nu):
        return cls(beta0, beta1, lambda0, lambda1, eta, observed_cp(eta, x1, x_nu))


def site_moments(params, x_t):
    """(mu, sigma) of the latent observation at time x_t (scalar or array)."""
    g = cp_offset(x_t, params.theta)
    mu = params.beta0 + params.beta1 * g
    log_sd = params.lambda0 + params.lambda1 * g
    if np.any(np.abs(log_sd) > LOG_SIGMA_CAP):
        raise NumericError("log sigma exceeds the overflow guard")
    return mu, np.exp(log_sd)


def tobit_log_lik(obs, censored, mu, sigma):
    """Observed-data log likelihood of one cell.

    Censored cells contribute log Phi((0 - mu) / sigma) through the stable
    log-CDF; uncensored cells the normal log density at the observed value.
    """
    if np.any(np.asarray(sigma) <= 0):
        raise DataError("sigma must be positive")
    if censored:
        return float(log_ndtr((0.0 - mu) / sigma))
    r = (obs - mu) / sigma
    return float(-np.log(sigma) - 0.5 * r * r - 0.5 * LOG_2PI)


def tobit_log_lik_total(obs, censored, mu, sigma):
    """Sum of cell-wise Tobit log likelihoods over an m x nu grid."""
    obs = np.asarray(obs, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    z = (0.0 - mu) / sigma
    cens_term = log_ndtr(z)
    r = (obs - mu) / sigma
    dens_term = -np.log(sigma) - 0.5 * r * r - 0.5 * LOG_2PI
    return float(np.sum(np.where(censored, cens_term, dens_term)))


def effect_moments(Phi, times, x1=None, x_nu=None):
    """mu and sigma matrices (m x nu) from an effect matrix for given times."""
    times = np.asarray(times, dtype=float)
    if x1 is None:
        x1 = float(times[0])
    if x_nu is None:
        x_nu = float(times[-1])
    theta = observed_cp(Phi[:, 4], x1, x_nu)
    g = np.where(times[None, :] >= theta[:, None], times[None, :] - theta[:, None], 0.0)
    mu = Phi[:, 0][:, None] + Phi[:, 1][:, None] * g
    log_sd = Phi[:, 2][:, None] + Phi[:, 3][:, None] * g
    if np.any(np.abs(log_sd) > LOG_SIGMA_CAP):
        raise NumericError("log sigma exceeds the overflow guard")
    return mu, np.exp(log_sd)


def latent_gaussian_log_lik(series, Phi):
    """Augmented-data log likelihood: sum of normal log densities of the
    latent values under the change-point moments. Drives every Metropolis
    ratio in the sampler."""
    mu, sig = effect_moments(np.asarray(Phi, dtype=float), series.times)
    r = (series.latent - mu) / sig
    return float(np.sum(-np.log(sig) - 0.5 * r * r - 0.5 * LOG_2PI))


@dataclass
class VFSeries:
    """One eye's m x nu censored observation grid.

    ``obs`` / ``times`` are in model units (after any ingestion scaling);
    ``obs_raw`` / ``times_raw`` retain the file values exactly so emitted
    output can round-trip without float drift. ``latent`` is the working
    augmented-data matrix: equal to ``obs`` at uncensored cells and any
    value <= 0 at censored cells.
    """

    times: np.ndarray
    obs: np.ndarray
    censored: np.ndarray
    latent: np.ndarray = None
    site_ids: np.ndarray = None
    eye_id: str = ""
    y_scale: float = 1.0
    time_scale: float = 1.0
    baseline_time: float = 0.0
    obs_raw: np.ndarray = field(default=None, repr=False)
    times_raw: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.obs = np.asarray(self.obs, dtype=float)
        self.censored = np.asarray(self.censored, dtype=bool)
        if self.latent is None:
            self.latent = np.where(self.censored, -0.1, self.obs)
        else:
            self.latent = np.asarray(self.latent, dtype=float)
        if self.site_ids is None:
            self.site_ids = np.arange(1, self.obs.shape[0] + 1, dtype=np.int64)
        self.validate()

    @property
    def m(self):
        return int(self.obs.shape[0])

    @property
    def nu(self):
        return int(self.obs.shape[1])

    @property
    def x1(self):
        return float(self.times[0])

    @property
    def x_nu(self):
        return float(self.times[-1])

    def validate(self):
        if self.obs.shape != self.censored.shape or self.obs.shape != self.latent.shape:
            raise DataError("obs, censored, and latent shapes differ")
        if self.times.shape[0] != self.obs.shape[1]:
            raise DataError("times length does not match the visit count")
        if self.times.shape[0] < 2:
            raise DataError("a series needs at least two visits")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("visit times must be strictly increasing")
        if abs(self.times[0]) > 1e-12:
            raise DataError("times must start at x1 = 0")
        if np.any(self.obs < 0):
            raise DataError("observed values must be nonnegative")
        if not np.array_equal(self.censored, self.obs == 0.0):
            raise DataError("censored flags must mark exactly the zero observations")
        if not np.all(self.latent[~self.censored] == self.obs[~self.censored]):
            raise DataError("latent values must equal observations at uncensored cells")
        if np.any(self.latent[self.censored] > 0):
            raise DataError("latent values at censored cells must be <= 0")

    def subset_visits(self, n_visits):
        """First ``n_visits`` visits as a new series (for hold-out fitting)."""
        if not 2 <= n_visits <= self.nu:
            raise DataError(f"cannot keep {n_visits} of {self.nu} visits")
        sl = slice(0, n_visits)
        return VFSeries(
            times=self.times[sl].copy(),
            obs=self.obs[:, sl].copy(),
            censored=self.censored[:, sl].copy(),
            latent=None,
            site_ids=self.site_ids.copy(),
            eye_id=self.eye_id,
            y_scale=self.y_scale,
            time_scale=self.time_scale,
            baseline_time=self.baseline_time,
            obs_raw=None if self.obs_raw is None else self.obs_raw[:, sl].copy(),
            times_raw=None if self.times_raw is None else self.times_raw[sl].copy(),
        )
