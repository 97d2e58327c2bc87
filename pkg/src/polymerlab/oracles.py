"""Brute-force references used by the test-suite and the ``check`` command.

Nothing here shares code paths with the solvers it audits: partition
functions are summed path by path, and free-walk quantities come from closed
forms or quadrature.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, special, stats


def enumerate_lattice(increments: np.ndarray, kernel: np.ndarray, origin: int,
                      beta: float) -> dict:
    """Sum the slab weights of every site sequence ``x_0 = origin, x_1..x_K``.

    Returns ``logZ``, the end-point laws (``(K+1, n)``, polymer of length
    ``t_k``), the length-``T`` marginals and both overlaps.
    """
    K, n = increments.shape
    w = np.exp(beta * increments)
    endpoint = np.zeros((K + 1, n))
    endpoint[0, origin] = 1.0
    for k in range(1, K + 1):
        for tail in itertools.product(range(n), repeat=k):
            path = (origin,) + tail
            weight = 1.0
            for j in range(k):
                weight *= w[j, path[j]] * kernel[path[j], path[j + 1]]
            endpoint[k, path[-1]] += weight
    Z = endpoint[K].sum()
    marginal = np.zeros((K + 1, n))
    for tail in itertools.product(range(n), repeat=K):
        path = (origin,) + tail
        weight = 1.0
        for j in range(K):
            weight *= w[j, path[j]] * kernel[path[j], path[j + 1]]
        for k in range(K + 1):
            marginal[k, path[k]] += weight
    endpoint_law = endpoint / endpoint.sum(axis=1, keepdims=True)
    marginal_law = marginal / Z
    return {
        "logZ": math.log(Z),
        "endpoint_law": endpoint_law,
        "marginal_T": marginal_law,
        "I": float(np.mean((endpoint_law[:-1] ** 2).sum(axis=1))),
        "J": float(np.mean((marginal_law[:-1] ** 2).sum(axis=1))),
    }


def exhaustive_ground_state(env, T: float, n: int, K: int, d: int = 1) -> float:
    """Max of ``H`` over paths with ``n`` jumps at distinct grid times ``k T/K``,
    ``1 <= k <= K-1``, in every direction sequence."""
    times = T * np.arange(K + 1) / K
    moves = [tuple(s * (i == ax) for i in range(d)) for ax in range(d) for s in (1, -1)]
    best = -math.inf
    for slots in itertools.combinations(range(1, K), n):
        for dirs in itertools.product(moves, repeat=n):
            site = (0,) * d
            breaks = [0.0] + [times[k] for k in slots] + [T]
            total = 0.0
            for i in range(n + 1):
                if i > 0:
                    site = tuple(a + b for a, b in zip(site, dirs[i - 1]))
                total += env.value_at(site, breaks[i + 1]) - env.value_at(site, breaks[i])
            best = max(best, total)
    return best


def free_collision_1d(kappa: float, T: float) -> float:
    """``(1/T) int_0^T P(X_t = X'_t) dt`` for two independent rate-kappa walks on Z.

    ``X - X'`` is a rate-``2 kappa`` walk, so the integrand is
    ``exp(-2 kappa t) I_0(2 kappa t)``.
    """
    val, _ = integrate.quad(lambda t: special.ive(0, 2 * kappa * t), 0.0, T,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val / T


def expected_max_normals(m: int) -> float:
    """``E max`` of ``m`` iid standard normals by quadrature."""
    f = lambda x: x * m * stats.norm.pdf(x) * stats.norm.cdf(x) ** (m - 1)
    val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-12)
    return val


def poisson_tail(k: int, mean: float) -> float:
    """``P(N >= k)`` for ``N ~ Poisson(mean)``."""
    return float(stats.poisson.sf(k - 1, mean))
