"""Kronecker-structured multivariate CAR prior over site-level effect vectors.

The m x p effect matrix Phi (one p-vector per site, stacked site-major as
phi = (phi_1', ..., phi_m')') follows

    phi ~ MVN(1_m (x) delta, Q(alpha, rho)^{-1} (x) Sigma)

with Q the Leroux precision from :mod:`spcp.graph`. All operations work in
the factored form; the mp x mp covariance is never materialized.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import DataError, NumericError
from .graph import precision_matrix

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class McarHyper:
    """Hyperparameters of the prior: mean delta, cross-covariance Sigma,
    adjacency decay alpha, and the (fixed) Leroux mixing weight rho."""

    delta: np.ndarray
    Sigma: np.ndarray
    alpha: float
    rho: float = 0.99

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        p = self.delta.shape[0]
        if self.Sigma.shape != (p, p):
            raise DataError("Sigma shape does not match delta length")
        if not np.allclose(self.Sigma, self.Sigma.T, atol=1e-10):
            raise DataError("Sigma must be symmetric")

    @property
    def p(self):
        return int(self.delta.shape[0])


def _chol_spd(A, what):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"{what} is not positive definite") from e


def log_density_terms(Phi, delta, Sigma, Q, Q_logdet=None):
    """Log MCAR density given a precomputed precision matrix Q.

    Uses log|Q (x) Sigma^{-1}| = p log|Q| - m log|Sigma| and the trace form
    of the quadratic: (phi - mu)'(Q (x) Sigma^{-1})(phi - mu)
    = tr(D' Q D Sigma^{-1}) with D = Phi - 1 delta'.
    """
    Phi = np.asarray(Phi, dtype=float)
    m, p = Phi.shape
    if delta.shape[0] != p:
        raise DataError("Phi column count does not match delta length")
    if Q.shape != (m, m):
        raise DataError("Q dimension does not match Phi row count")
    L_sig = _chol_spd(Sigma, "Sigma")
    sig_logdet = 2.0 * float(np.sum(np.log(np.diag(L_sig))))
    if Q_logdet is None:
        L_q = _chol_spd(Q, "Q")
        Q_logdet = 2.0 * float(np.sum(np.log(np.diag(L_q))))
    D = Phi - delta[None, :]
    # tr(D' Q D Sigma^{-1}) via the half-solve B = L_sig^{-1} D'
    B = solve_triangular(L_sig, D.T @ Q @ D, lower=True)
    B = solve_triangular(L_sig, B.T, lower=True)
    quad = float(np.trace(B))
    return -0.5 * m * p * LOG_2PI + 0.5 * p * Q_logdet - 0.5 * m * sig_logdet - 0.5 * quad


def mcar_log_density(Phi, hyper, graph):
    """Joint log density of the effect matrix under the MCAR prior."""
    Q = precision_matrix(graph, hyper.alpha, hyper.rho).Q
    return log_density_terms(Phi, hyper.delta, hyper.Sigma, Q)


def mcar_sample(hyper, graph, rng, Q=None):
    """Exact draw of the m x p effect matrix.

    With Q = L L' and Sigma = S S' (Cholesky), the site-major vectorization
    has covariance Q^{-1} (x) Sigma = (L^{-T} (x) S)(L^{-T} (x) S)', so a
    draw is delta' + L^{-T} Z S' applied row/column-wise to an m x p
    standard normal Z.
    """
    if Q is None:
        Q = precision_matrix(graph, hyper.alpha, hyper.rho).Q
    m = Q.shape[0]
    p = hyper.p
    L_q = _chol_spd(Q, "Q")
    L_s = _chol_spd(hyper.Sigma, "Sigma")
    Z = rng.standard_normal((m, p))
    D = solve_triangular(L_q.T, Z, lower=False)
    return hyper.delta[None, :] + D @ L_s.T


def column_conditional(Phi, delta, Sigma, k, j=None):
    """Conditional moments of effect columns k given the complement columns.

    Returns (E, Sigma_cond): the m x |k| conditional mean
    E = 1 delta_k' + (Phi_j - 1 delta_j') Sigma_jj^{-1} Sigma_jk and the
    |k| x |k| Schur complement Sigma_kk - Sigma_kj Sigma_jj^{-1} Sigma_jk.
    The conditional covariance of the stacked columns is
    Q^{-1} (x) Sigma_cond; Q is unchanged by conditioning and is not
    returned here.
    """
    Phi = np.asarray(Phi, dtype=float)
    p = Sigma.shape[0]
    k = np.asarray(k, dtype=np.int64)
    if j is None:
        j = np.setdiff1d(np.arange(p), k)
    else:
        j = np.asarray(j, dtype=np.int64)
    both = np.concatenate([k, j])
    if sorted(both.tolist()) != list(range(p)):
        raise DataError("k and j must partition the effect columns")
    m = Phi.shape[0]
    if j.size == 0:
        return np.tile(delta[k], (m, 1)), Sigma[np.ix_(k, k)].copy()
    S_kk = Sigma[np.ix_(k, k)]
    S_kj = Sigma[np.ix_(k, j)]
    S_jj = Sigma[np.ix_(j, j)]
    try:
        cho = cho_factor(S_jj, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericError("Sigma_jj is singular") from e
    W = cho_solve(cho, S_kj.T, check_finite=False)  # Sigma_jj^{-1} Sigma_jk
    E = delta[k][None, :] + (Phi[:, j] - delta[j][None, :]) @ W
    Sigma_cond = S_kk - S_kj @ W
    Sigma_cond = 0.5 * (Sigma_cond + Sigma_cond.T)
    return E, Sigma_cond


def conditional_moments(Phi, hyper, graph, k, j=None):
    """Spec-level conditional moments: (mean, (Q, Sigma_cond)) in factored form."""
    E, Sigma_cond = column_conditional(Phi, hyper.delta, hyper.Sigma, k, j)
    Q = precision_matrix(graph, hyper.alpha, hyper.rho).Q
    return E, (Q, Sigma_cond)
