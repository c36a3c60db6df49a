"""Compiled inner loops for the Metropolis-within-Gibbs site sweeps.

The site updates within one effect column are sequential (each site's
conditional prior depends on its neighbors' current values), so they are
unrolled here under numba instead of numpy. Kernels consume pre-drawn
standard normals ``z`` and uniforms ``u`` (one per visited site, indexed
by position in ``sites``) so the random stream is owned by the caller.

``sitell`` tracks per-site log likelihood sums without the 2*pi constant;
callers only ever use differences. Proposals that push |log sigma| past
300 at any visit are rejected outright (exp overflow guard).
"""

import numpy as np
from numba import njit

LOG_SIGMA_CAP = 300.0


@njit(cache=True)
def site_loglik(y, mu, logsig, sitell):
    m, nu = y.shape
    for i in range(m):
        acc = 0.0
        for t in range(nu):
            r = (y[i, t] - mu[i, t]) * np.exp(-logsig[i, t])
            acc += -logsig[i, t] - 0.5 * r * r
        sitell[i] = acc


@njit(cache=True)
def sweep_lambda(is_slope, lam, E, indptr, nbr, wv, qdiag, rho, s2,
                 y, mu, logsig, g, sitell, sites, prop_sd, z, u, accept):
    """Random-walk update of lambda0 (is_slope=False) or lambda1 (True).

    lam is the column being updated; E its conditional prior mean given the
    other effect columns. The within-column conditional at site i is
    N(E_i + rho * sum_j w_ij (lam_j - E_j) / Q_ii, s2 / Q_ii).
    """
    nu = y.shape[1]
    for pos in range(sites.shape[0]):
        i = sites[pos]
        cur = lam[i]
        prop = cur + prop_sd[i] * z[pos]
        s = 0.0
        for kk in range(indptr[i], indptr[i + 1]):
            jn = nbr[kk]
            s += wv[kk] * (lam[jn] - E[jn])
        pm = E[i] + rho * s / qdiag[i]
        pv = s2 / qdiag[i]
        d = prop - cur
        ll_new = 0.0
        ok = True
        for t in range(nu):
            ls = logsig[i, t] + (d * g[i, t] if is_slope else d)
            if ls > LOG_SIGMA_CAP or ls < -LOG_SIGMA_CAP:
                ok = False
                break
            r = (y[i, t] - mu[i, t]) * np.exp(-ls)
            ll_new += -ls - 0.5 * r * r
        if not ok:
            accept[pos] = 0
            continue
        dprior = ((cur - pm) ** 2 - (prop - pm) ** 2) / (2.0 * pv)
        if np.log(u[pos]) < (ll_new - sitell[i]) + dprior:
            lam[i] = prop
            sitell[i] = ll_new
            if is_slope:
                for t in range(nu):
                    logsig[i, t] += d * g[i, t]
            else:
                for t in range(nu):
                    logsig[i, t] += d
            accept[pos] = 1
        else:
            accept[pos] = 0


@njit(cache=True)
def sweep_eta(eta, theta, E, indptr, nbr, wv, qdiag, rho, s2,
              x, x1, x_nu, beta0, beta1, lam0, lam1,
              y, mu, logsig, g, sitell, sites, prop_sd, z, u, accept):
    """Random-walk update of the latent change point at each visited site.

    The likelihood sees the proposal only through the clamped change point
    theta = min(max(eta, x1), x_nu); proposals past the window move the
    prior term but leave the likelihood flat.
    """
    nu = x.shape[0]
    for pos in range(sites.shape[0]):
        i = sites[pos]
        cur = eta[i]
        prop = cur + prop_sd[i] * z[pos]
        th = prop
        if th < x1:
            th = x1
        elif th > x_nu:
            th = x_nu
        s = 0.0
        for kk in range(indptr[i], indptr[i + 1]):
            jn = nbr[kk]
            s += wv[kk] * (eta[jn] - E[jn])
        pm = E[i] + rho * s / qdiag[i]
        pv = s2 / qdiag[i]
        ll_new = 0.0
        ok = True
        for t in range(nu):
            gt = x[t] - th
            if gt < 0.0:
                gt = 0.0
            ls = lam0[i] + lam1[i] * gt
            if ls > LOG_SIGMA_CAP or ls < -LOG_SIGMA_CAP:
                ok = False
                break
            r = (y[i, t] - (beta0[i] + beta1[i] * gt)) * np.exp(-ls)
            ll_new += -ls - 0.5 * r * r
        if not ok:
            accept[pos] = 0
            continue
        dprior = ((cur - pm) ** 2 - (prop - pm) ** 2) / (2.0 * pv)
        if np.log(u[pos]) < (ll_new - sitell[i]) + dprior:
            eta[i] = prop
            theta[i] = th
            sitell[i] = ll_new
            for t in range(nu):
                gt = x[t] - th
                if gt < 0.0:
                    gt = 0.0
                g[i, t] = gt
                logsig[i, t] = lam0[i] + lam1[i] * gt
                mu[i, t] = beta0[i] + beta1[i] * gt
            accept[pos] = 1
        else:
            accept[pos] = 0


def warmup():
    """Force JIT compilation of the kernels (useful before forking workers)."""
    m, nu = 2, 3
    y = np.zeros((m, nu))
    mu = np.zeros((m, nu))
    logsig = np.zeros((m, nu))
    g = np.zeros((m, nu))
    sitell = np.zeros(m)
    site_loglik(y, mu, logsig, sitell)
    indptr = np.array([0, 1, 2], dtype=np.int64)
    nbr = np.array([1, 0], dtype=np.int64)
    wv = np.ones(2)
    qdiag = np.ones(m)
    sites = np.arange(m, dtype=np.int64)
    one = np.ones(m)
    zero = np.zeros(m)
    acc = np.zeros(m, dtype=np.int64)
    sweep_lambda(False, zero.copy(), zero, indptr, nbr, wv, qdiag, 0.99, 1.0,
                 y, mu, logsig, g, sitell, sites, one, zero, one * 0.5, acc)
    sweep_eta(zero.copy(), zero.copy(), zero, indptr, nbr, wv, qdiag, 0.99, 1.0,
              np.linspace(0, 1, nu), 0.0, 1.0, zero, zero, zero, zero,
              y, mu, logsig, g, sitell, sites, one, zero, one * 0.5, acc)
