"""Exact sampling from an upper-truncated normal distribution.

Used by the data-augmentation step for censored cells. Draws from
N(mu, sigma^2) restricted to (-inf, upper]. Bulk truncations use plain
rejection from the untruncated normal; when the bound sits in the far
lower tail (mu far above the bound) an exponential-envelope tail sampler
keeps the expected number of proposals bounded.
"""

import numpy as np

from . import DataError


def _tail_lower(a, rng):
    """Standard-normal draws on [a, inf) for a >= 0, exponential envelope.

    Proposes t = a + Exp(rate) with rate (a + sqrt(a^2 + 4)) / 2 and accepts
    with probability exp(-(t - rate)^2 / 2); acceptance stays above ~0.66
    uniformly in a.
    """
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    todo = np.ones(a.shape, dtype=bool)
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    while np.any(todo):
        n = int(todo.sum())
        t = a[todo] + rng.standard_exponential(n) / rate[todo]
        ok = np.log(rng.random(n)) <= -0.5 * (t - rate[todo]) ** 2
        idx = np.flatnonzero(todo)[ok]
        out.flat[idx] = t[ok]
        todo.flat[idx] = False
    return out


def truncated_normal(mu, sigma, upper, rng):
    """Draw from N(mu, sigma^2) truncated to (-inf, upper].

    Arguments broadcast; the result has the broadcast shape (a float for
    all-scalar input). Robust for mu many standard deviations above the
    bound.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(sigma <= 0):
        raise DataError("sigma must be positive")
    b = np.broadcast(mu, sigma, upper)
    bound = np.empty(b.shape)
    bound[...] = (upper - mu) / sigma
    z = np.empty(b.shape)

    easy = bound >= 0.0  # at least half the mass below the bound
    todo = easy.copy()
    while np.any(todo):
        n = int(todo.sum())
        t = rng.standard_normal(n)
        ok = t <= bound[todo]
        idx = np.flatnonzero(todo)[ok]
        z.flat[idx] = t[ok]
        todo.flat[idx] = False

    hard = ~easy
    if np.any(hard):
        z[hard] = -_tail_lower(-bound[hard], rng)

    out = np.broadcast_to(mu, b.shape) + np.broadcast_to(sigma, b.shape) * z
    if b.shape == ():
        return float(out)
    return out
