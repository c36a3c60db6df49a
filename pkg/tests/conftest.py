import numpy as np
import pytest

from spcp.graph import build_vf_graph
from spcp.mcar import McarHyper


def random_graph(rng, m, grid=6, dissim_scale=1.0):
    """Random connected-ish lattice subset with distinct covariate values."""
    while True:
        cells = rng.choice(grid * grid, size=m, replace=False)
        rows, cols = np.divmod(cells, grid)
        layout = [(i + 1, int(r), int(c), False) for i, (r, c) in enumerate(zip(rows, cols))]
        angles = {i + 1: float(a) for i, a in enumerate(rng.uniform(0, 359, size=m))}
        g = build_vf_graph(layout, angles, dissim_scale=dissim_scale)
        if g.n_edges >= 1 and g.edge_dissim().min() > 1e-6:
            return g


def random_spd(rng, p, jitter=0.5):
    A = rng.standard_normal((p, p))
    S = A @ A.T + jitter * np.eye(p)
    return 0.5 * (S + S.T)


def random_hyper(rng, p, alpha=0.3, rho=0.99):
    return McarHyper(delta=rng.standard_normal(p), Sigma=random_spd(rng, p),
                     alpha=alpha, rho=rho)


def dense_mcar_cov(graph, hyper):
    """mp x mp covariance of the site-major effect vector, built naively."""
    from spcp.graph import precision_matrix

    Q = precision_matrix(graph, hyper.alpha, hyper.rho).Q
    return np.kron(np.linalg.inv(Q), hyper.Sigma)


def dense_mcar_mean(graph, hyper):
    return np.kron(np.ones(graph.m), hyper.delta)


def dense_conditional(mean, cov, known_idx, known_val):
    """Gaussian conditioning by explicit block inversion (oracle path)."""
    n = mean.shape[0]
    unknown = np.setdiff1d(np.arange(n), known_idx)
    Suu = cov[np.ix_(unknown, unknown)]
    Suk = cov[np.ix_(unknown, known_idx)]
    Skk = cov[np.ix_(known_idx, known_idx)]
    W = Suk @ np.linalg.inv(Skk)
    cond_mean = mean[unknown] + W @ (known_val - mean[known_idx])
    cond_cov = Suu - W @ Suk.T
    return unknown, cond_mean, cond_cov


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
