"""Ground states, conditioned free energies and jump-count rate functions.

``dp_ground_state`` is a last-passage dynamic program over paths whose jumps
sit on a time grid.  ``gamma_estimate`` and friends estimate the conditioned
free energy ``Gamma(beta, r)`` by Monte Carlo over paths with exactly
``[rT]`` jumps, and ``free_energy_variational`` maximizes
``Gamma - I_kappa`` over an ``r``-grid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln, logsumexp

from .environment import BrownianField, derive_seed, worker_rng
from .lattice_solver import grid_times
from .path_sampler import (DegenerateEnsembleWarning, JumpPath, ess, hamiltonian,
                           hamiltonian_batch, sample_conditioned_batch)


def poisson_rate(r, kappa: float):
    """Cramér transform ``r ln(r / kappa) - r + kappa`` of Poisson(kappa); ``0 ln 0 = 0``."""
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < 0) or kappa <= 0:
        raise ValueError("need r >= 0 and kappa > 0")
    safe = np.where(r_arr > 0, r_arr, 1.0)
    out = np.where(r_arr > 0, r_arr * np.log(safe / kappa), 0.0) - r_arr + kappa
    return float(out) if np.ndim(r) == 0 else out


# -- last passage --------------------------------------------------------------

class InfeasibleError(ValueError):
    pass


@dataclass
class GroundState:
    value: float
    path: JumpPath
    K: int


def _shift(arr: np.ndarray, axis: int, step: int, fill: float) -> np.ndarray:
    """``out[x] = arr[x - step]`` along a spatial axis, ``fill`` where undefined."""
    out = np.full_like(arr, fill)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        src[axis], dst[axis] = slice(0, -step), slice(step, None)
    else:
        src[axis], dst[axis] = slice(-step, None), slice(0, step)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def dp_ground_state(env, T: float, n: int, K: int, R: int | None = None) -> GroundState:
    """Best ``H_T`` over paths with exactly ``n`` jumps at grid times ``k T / K``.

    Jumps happen at ``k = 1 .. K-1`` (at most one per grid time); after a jump
    at ``k`` the path accumulates ``dW`` of its new site over slab ``k``.
    """
    d = env.d
    R = n if R is None else R
    if n < 0:
        raise ValueError("n must be >= 0")
    if R < n:
        raise ValueError("box radius must be >= n")
    if n > K - 1:
        raise InfeasibleError(f"{n} jumps do not fit in {K - 1} interior grid times")
    times = grid_times(T, K)
    side = 2 * R + 1
    axes = [np.arange(-R, R + 1)] * d
    sites = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    vals = env.values(np.repeat(sites, K + 1, axis=0), np.tile(times, sites.shape[0]))
    inc = np.diff(vals.reshape(sites.shape[0], K + 1), axis=1).T.reshape((K,) + (side,) * d)

    shape = (side,) * d + (n + 1,)
    V = np.full(shape, -np.inf)
    V[(R,) * d + (0,)] = 0.0
    choice = np.zeros((K,) + shape, dtype=np.int8)
    moves = [(ax, s) for ax in range(d) for s in (1, -1)]
    for k in range(K):
        best = V
        pick = np.zeros(shape, dtype=np.int8)
        if k >= 1 and n > 0:
            for m, (ax, s) in enumerate(moves, start=1):
                cand = np.full(shape, -np.inf)
                cand[..., 1:] = _shift(V[..., :-1], ax, s, -np.inf)
                better = cand > best
                best = np.where(better, cand, best)
                pick = np.where(better, m, pick)
        choice[k] = pick
        V = best + inc[k][..., None]
    final = V[..., n]
    flat = int(np.argmax(final))
    value = float(final.reshape(-1)[flat])
    pos = list(np.unravel_index(flat, final.shape))
    j = n
    jumps, visited = [], [tuple(p - R for p in pos)]
    for k in range(K - 1, -1, -1):
        m = int(choice[(k,) + tuple(pos) + (j,)])
        if m:
            ax, s = moves[m - 1]
            pos[ax] -= s
            j -= 1
            jumps.append(times[k])
            visited.append(tuple(p - R for p in pos))
    path = JumpPath((0,) * d, np.array(jumps[::-1]), np.array(visited[::-1]), T)
    check = hamiltonian(env, path)
    if abs(check - value) > 1e-10 * max(1.0, abs(value)):
        raise RuntimeError(f"DP argmax re-evaluates to {check}, table says {value}")
    return GroundState(value, path, K)


@dataclass
class AlphaTable:
    rows: list[dict]
    alpha_hat: float
    alpha_se: float
    stabilization: list[float]
    scaling: dict = field(default_factory=dict)


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


def alpha_estimate(seeds, n_list, K_per_unit: int = 8, d: int = 1,
                   refine: bool = True) -> AlphaTable:
    """Estimate ``alpha = lim A_n / n`` from grid ground states.

    Each seed gets one environment on ``[0, max n]``; ``A_n`` is computed
    with ``K_per_unit * n`` grid slots and, if ``refine``, with twice that.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    levels = [K_per_unit, 2 * K_per_unit] if refine else [K_per_unit]
    samples = {(n, kp): [] for n in n_list for kp in levels}
    for seed in seeds:
        env = BrownianField(seed, d=d, horizon=float(max(n_list)), record=False)
        for n in n_list:
            for kp in levels:
                samples[(n, kp)].append(dp_ground_state(env, float(n), n, kp * n).value / n)
    rows = []
    for (n, kp), vals in samples.items():
        m, se = _mean_se(vals)
        rows.append({"n": n, "K_per_unit": kp, "mean_A_over_n": m, "se": se})
    finest = levels[-1]
    means = [_mean_se(samples[(n, finest)])[0] for n in n_list]
    a_hat, a_se = _mean_se(samples[(n_list[-1], finest)])
    return AlphaTable(rows, a_hat, a_se, list(np.diff(means)))


def ground_state_scaling(seeds, T: float, r: float, K: int, d: int = 1) -> dict:
    """Compare ``A_{T,r}`` with ``r^{-1/2} A_{rT,1}`` on independent environments.

    The two have the same law by Brownian scaling (grid slots map onto grid
    slots).  Returns the two samples and a two-sample KS test.
    """
    n = int(round(r * T))
    if abs(r * T - n) > 1e-9:
        raise ValueError("r * T must be an integer")
    left, right = [], []
    for i, seed in enumerate(seeds):
        env = BrownianField(seed, d=d, horizon=T, record=False)
        left.append(dp_ground_state(env, T, n, K).value)
        other = BrownianField(derive_seed(seed, 0xA5CA1E), d=d, horizon=r * T, record=False)
        right.append(dp_ground_state(other, r * T, n, K).value / math.sqrt(r))
    ks = stats.ks_2samp(left, right)
    return {"A_T_r": np.array(left), "scaled_A": np.array(right),
            "ks_stat": float(ks.statistic), "ks_pvalue": float(ks.pvalue)}


# -- conditioned free energy -----------------------------------------------------

@dataclass
class GammaEstimate:
    gamma: float
    se: float
    jackknife_bias: float
    per_env: np.ndarray
    min_ess: float


def conditioned_log_mean(env, beta: float, n: int, T: float, M: int,
                         rng: np.random.Generator) -> tuple[float, float, float]:
    """``ln`` of the mean of ``exp(beta H)`` over ``M`` paths with ``n`` jumps.

    Also returns the leave-one-out jackknife bias estimate and the ESS.
    """
    batch = sample_conditioned_batch(n, T, M, rng, env.d)
    lw = beta * hamiltonian_batch(env, batch)
    top = lw.max()
    w = np.exp(lw - top)
    total = w.sum()
    full = top + math.log(total / M)
    loo = top + np.log(np.maximum(total - w, 1e-300) / (M - 1))
    bias = (M - 1) * (loo.mean() - full)
    return full, bias, ess(lw)


def gamma_estimate(beta: float, r: float, T: float, M: int, seeds, d: int = 1,
                   env_factory=None, master_seed: int = 0) -> GammaEstimate:
    """``(1/T) ln E[exp(beta H_T) | N = [rT]]`` averaged over environments.

    ``env_factory(seed)`` builds the environment for a seed (default: a fresh
    field on ``[0, T]``); path randomness comes from a per-seed Philox stream.
    """
    n = int(math.floor(r * T + 1e-9))
    make = env_factory or (lambda s: BrownianField(s, d=d, horizon=T, record=False))
    per, bias, low = [], [], math.inf
    for i, seed in enumerate(seeds):
        env = make(seed)
        lm, b, e = conditioned_log_mean(env, beta, n, T, M, worker_rng(master_seed ^ seed, i))
        per.append(lm / T)
        bias.append(b / T)
        low = min(low, e)
    if low < 2.0:
        warnings.warn(f"conditioned ensemble degenerate (min ESS={low:.2f})",
                      DegenerateEnsembleWarning, stacklevel=2)
    g, se = _mean_se(per)
    return GammaEstimate(g, se, float(np.mean(bias)), np.array(per), low)


# -- variational formula ---------------------------------------------------------

class GridTooShortError(ValueError):
    pass


@dataclass
class Variational:
    psi: float
    psi_se: float
    r_star: float
    rmax_lo: float
    rmax_hi: float


def free_energy_variational(r_grid, gamma_hat, kappa: float, gamma_se=None) -> Variational:
    """Maximize ``Gamma(r) - I_kappa(r)`` over the grid, then refine.

    ``Gamma`` is interpolated linearly between grid points and ``I_kappa`` is
    exact, so the objective is concave on each cell; a golden-section search
    on the two cells around the best grid point gives ``psi``.  The
    maximizer set is the span of the grid points within one SE of the max,
    widened to contain the refined maximizer.
    """
    r = np.asarray(r_grid, dtype=np.float64)
    g = np.asarray(gamma_hat, dtype=np.float64)
    se = np.zeros_like(g) if gamma_se is None else np.asarray(gamma_se, dtype=np.float64)
    if r.size < 3 or np.any(np.diff(r) <= 0):
        raise ValueError("r-grid must be increasing with at least 3 points")
    lam = g - poisson_rate(r, kappa)
    i = int(np.argmax(lam))
    if i == r.size - 1:
        raise GridTooShortError(f"maximum at r_hi = {r[-1]}; extend the r-grid")
    lo, hi = r[max(i - 1, 0)], r[i + 1]
    obj = lambda x: -(np.interp(x, r, g) - poisson_rate(x, kappa))
    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    best_r, best = (res.x, -res.fun) if -res.fun > lam[i] else (r[i], lam[i])
    near = r[lam >= lam[i] - max(se[i], 0.0)]
    lo_r, hi_r = min(near.min(), best_r), max(near.max(), best_r)
    return Variational(float(best), float(se[i]), float(best_r), float(lo_r), float(hi_r))


@dataclass
class RateTables:
    beta: np.ndarray
    r: np.ndarray
    gamma: np.ndarray
    gamma_se: np.ndarray
    kappa: float
    lam: np.ndarray = None
    rate: np.ndarray = None
    psi: np.ndarray = None
    rmax: np.ndarray = None

    CSV_COLUMNS = ("beta", "r", "gamma_hat", "gamma_se", "lambda_hat", "rate_hat",
                   "psi_hat", "rmax_lo", "rmax_hi")

    def rows(self) -> list[dict]:
        out = []
        for a, b in enumerate(self.beta):
            for j, r in enumerate(self.r):
                out.append({"beta": b, "r": r, "gamma_hat": self.gamma[a, j],
                            "gamma_se": self.gamma_se[a, j], "lambda_hat": self.lam[a, j],
                            "rate_hat": self.rate[a, j], "psi_hat": self.psi[a],
                            "rmax_lo": self.rmax[a, 0], "rmax_hi": self.rmax[a, 1]})
        return out


def rate_tables(beta_grid, r_grid, kappa: float, T: float, M: int, seeds, d: int = 1) -> RateTables:
    betas = np.asarray(beta_grid, dtype=np.float64)
    rs = np.asarray(r_grid, dtype=np.float64)
    gam = np.zeros((betas.size, rs.size))
    gse = np.zeros_like(gam)
    for a, b in enumerate(betas):
        for j, r in enumerate(rs):
            est = gamma_estimate(b, r, T, M, seeds, d)
            gam[a, j], gse[a, j] = est.gamma, est.se
    return complete_rate_tables(RateTables(betas, rs, gam, gse, kappa))


def complete_rate_tables(tab: RateTables) -> RateTables:
    """Fill ``Lambda``, ``Psi``, the rate function and ``r_max`` from ``Gamma``."""
    ik = poisson_rate(tab.r, tab.kappa)
    tab.lam = tab.gamma - ik
    tab.psi = np.zeros(tab.beta.size)
    tab.rmax = np.zeros((tab.beta.size, 2))
    for a in range(tab.beta.size):
        v = free_energy_variational(tab.r, tab.gamma[a], tab.kappa, tab.gamma_se[a])
        tab.psi[a] = v.psi
        tab.rmax[a] = v.rmax_lo, v.rmax_hi
    tab.rate = -tab.gamma + ik + tab.psi[:, None]
    return tab


# -- empirical jump-count large deviations ----------------------------------------

@dataclass
class LDPReport:
    n: np.ndarray
    r: np.ndarray
    empirical_rate: np.ndarray
    predicted_rate: np.ndarray
    censored: np.ndarray
    max_gap: float
    gamma: np.ndarray
    psi: float


def jump_count_law(env, kappa: float, beta: float, T: float, n_max: int, M: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Polymer law of ``N(T)`` on ``0..n_max`` and the conditioned log-means.

    Uses ``mu(N = n) ∝ P_kappa(N = n) E[exp(beta H) | N = n]``; the mass
    beyond ``n_max`` is dropped.
    """
    ns = np.arange(n_max + 1)
    cond = np.array([conditioned_log_mean(env, beta, int(n), T, M, rng)[0] for n in ns])
    log_pois = ns * math.log(kappa * T) - kappa * T - gammaln(ns + 1)
    joint = log_pois + cond
    return joint - logsumexp(joint), cond


def ldp_check(seeds, kappa: float, beta: float, T: float, r_grid, M: int,
              d: int = 1, master_seed: int = 0) -> LDPReport:
    """Empirical ``-(1/T) ln mu(N = [rT])`` against the rate built from ``Gamma``.

    Both sides come from the same conditioned ensembles: ``Gamma`` is the
    environment-averaged conditioned log-mean, ``Psi`` its variational max.
    Points whose polymer probability underflows are censored.
    """
    r = np.asarray(r_grid, dtype=np.float64)
    ns = np.floor(r * T + 1e-9).astype(int)
    n_max = int(ns.max())
    emp, cond = [], []
    for i, seed in enumerate(seeds):
        env = BrownianField(seed, d=d, horizon=T, record=False)
        law, c = jump_count_law(env, kappa, beta, T, n_max, M, worker_rng(master_seed ^ seed, i))
        emp.append(-law[ns] / T)
        cond.append(c[ns] / T)
    emp = np.array(emp)
    censored = ~np.all(np.isfinite(emp), axis=0)
    gamma = np.mean(cond, axis=0)
    v = free_energy_variational(r, gamma, kappa)
    predicted = -gamma + poisson_rate(r, kappa) + v.psi
    empirical = np.where(censored, np.nan, np.nanmean(np.where(np.isfinite(emp), emp, np.nan), axis=0))
    gap = float(np.nanmax(np.abs(empirical - predicted))) if np.any(~censored) else float("nan")
    return LDPReport(ns, r, empirical, predicted, censored, gap, gamma, v.psi)
