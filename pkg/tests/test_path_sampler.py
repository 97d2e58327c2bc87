import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from polymerlab import path_sampler as ps
from polymerlab.environment import BrownianField
from polymerlab.oracles import free_collision_1d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- paths ---------------------------------------------------------------------------

def test_jump_path_validation():
    with pytest.raises(ValueError):
        ps.JumpPath((0,), np.array([0.5]), np.array([[0], [2]]), 1.0)
    with pytest.raises(ValueError):
        ps.JumpPath((0,), np.array([0.0]), np.array([[0], [1]]), 1.0)
    with pytest.raises(ValueError):
        ps.JumpPath((0,), np.array([0.6, 0.4]), np.array([[0], [1], [0]]), 1.0)
    with pytest.raises(ValueError):
        ps.JumpPath((1,), np.array([]), np.array([[0]]), 1.0)
    X = ps.JumpPath((0,), np.array([0.2, 0.7]), np.array([[0], [1], [0]]), 1.0)
    assert X.position(0.1) == (0,) and X.position(0.2) == (1,) and X.position(0.9) == (0,)
    assert X.rescaled(2.0).T == 2.0 and X.rescaled(2.0).position(0.5) == (1,)


def test_free_jump_counts(rng):
    kappa, T, n = 1.5, 2.0, 20_000
    counts = np.array([ps.sample_free(kappa, T, rng).n_jumps for _ in range(n)])
    assert abs(counts.mean() - kappa * T) < 3 * math.sqrt(kappa * T / n)
    top = 8
    obs = np.bincount(np.minimum(counts, top), minlength=top + 1)
    exp = stats.poisson.pmf(np.arange(top + 1), kappa * T)
    exp[-1] = stats.poisson.sf(top - 1, kappa * T)
    assert stats.chisquare(obs, exp * n).pvalue > 1e-3


def test_batch_jump_counts(rng):
    b = ps.sample_free_batch(2.0, 1.5, 100_000, rng)
    assert abs(b.counts.mean() - 3.0) < 3 * math.sqrt(3.0 / b.M)


def test_parity(rng):
    for _ in range(500):
        X = ps.sample_free(2.0, 3.0, rng)
        assert (X.endpoint[0] - X.n_jumps) % 2 == 0
    b = ps.sample_free_batch(2.0, 3.0, 2000, rng)
    assert np.all((b.endpoints()[:, 0] - b.counts) % 2 == 0)


def test_conditioned_zero_jumps(rng):
    X = ps.sample_conditioned(0, 2.0, rng, d=2)
    assert X.n_jumps == 0 and X.endpoint == (0, 0)


def test_conditioned_order_statistics(rng):
    n, T, M = 4, 3.0, 100_000
    b = ps.sample_conditioned_batch(n, T, M, rng)
    jumps = np.ones(b.seg_start.size, dtype=bool)
    jumps[b.offsets[:-1]] = False
    times = b.seg_start[jumps].reshape(M, n)
    assert np.all(np.diff(times, axis=1) > 0)
    for i in range(n):
        mean = (i + 1) * T / (n + 1)
        var = T ** 2 * (i + 1) * (n - i) / ((n + 1) ** 2 * (n + 2))
        assert abs(times[:, i].mean() - mean) < 3 * math.sqrt(var / M)


def test_conditioned_matches_rejection(rng):
    kappa, T, n = 1.0, 2.0, 2
    first = [X.jump_times[0] for X in (ps.sample_free(kappa, T, rng) for _ in range(15_000))
             if X.n_jumps == n]
    cond = [ps.sample_conditioned(n, T, rng).jump_times[0] for _ in range(len(first))]
    assert stats.ks_2samp(first, cond).pvalue > 1e-3


# -- Hamiltonian ---------------------------------------------------------------------

def test_constant_path_hamiltonian():
    F = BrownianField(3, d=2, horizon=2.0)
    X = ps.JumpPath((0, 0), np.array([]), np.array([[0, 0]]), 2.0)
    assert ps.hamiltonian(F, X) == F.value_at((0, 0), 2.0)


def test_fake_jump_leaves_hamiltonian(rng):
    F = BrownianField(4, horizon=3.0)
    X = ps.sample_free(1.0, 3.0, rng)
    s = 1.2345
    i = np.searchsorted(X.jump_times, s)
    sites = np.insert(X.sites, i + 1, X.sites[i], axis=0)
    breaks = np.insert(X.breakpoints(), i + 1, s)
    assert ps.segment_hamiltonian(F, sites, breaks) == pytest.approx(ps.hamiltonian(F, X), abs=1e-12)


def test_batch_matches_single(rng):
    F = BrownianField(5, d=2, horizon=2.0)
    b = ps.sample_free_batch(2.0, 2.0, 50, rng, d=2)
    H = ps.hamiltonian_batch(F, b)
    for i in range(b.M):
        assert H[i] == pytest.approx(ps.hamiltonian(F, b.path(i)), abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32), a=st.floats(0.1, 10.0))
def test_hamiltonian_scaling(seed, a):
    rng = np.random.default_rng(seed)
    F = BrownianField(seed, horizon=1.0)
    X = ps.sample_free(2.0, 1.0, rng)
    lhs = ps.hamiltonian(F, X)
    rhs = ps.hamiltonian(F.rescale(a), X.rescaled(a)) / math.sqrt(a)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_hamiltonian_additivity(rng):
    F = BrownianField(6, horizon=2.0)
    X = ps.sample_free(3.0, 2.0, rng)
    s1, b1 = X.restrict(0.0, 0.8)
    s2, b2 = X.restrict(0.8, 2.0)
    total = ps.segment_hamiltonian(F, s1, b1) + ps.segment_hamiltonian(F, s2, b2)
    assert total == pytest.approx(ps.hamiltonian(F, X), abs=1e-12)


def test_hamiltonian_horizon_check(rng):
    with pytest.raises(ValueError):
        ps.hamiltonian(BrownianField(0, horizon=1.0), ps.sample_free(1.0, 2.0, rng))


# -- weights and estimators ----------------------------------------------------------

def test_ess_extremes():
    assert ps.ess(np.zeros(10)) == pytest.approx(10.0)
    assert ps.ess(np.array([0.0, -1e4, -1e4])) == pytest.approx(1.0)


def test_systematic_resample_counts(rng):
    w = rng.random(37)
    w /= w.sum()
    idx = ps.systematic_resample(w, rng)
    counts = np.bincount(idx, minlength=w.size)
    assert np.all(counts >= np.floor(w.size * w)) and np.all(counts <= np.ceil(w.size * w))


@pytest.mark.parametrize("method", ["is", "smc"])
def test_beta_zero_logZ_is_zero(method, rng):
    F = BrownianField(0, horizon=2.0)
    est = ps.estimate_Z(F, 1.0, 0.0, 2.0, 400, rng, method=method)
    assert est.logZ == 0.0


@pytest.mark.filterwarnings("ignore::polymerlab.path_sampler.DegenerateEnsembleWarning")
def test_annealed_identity(rng):
    # E_W E_X exp(beta H) = exp(beta^2 T / 2) for every path
    beta, T = 0.5, 2.0
    zs = np.array([math.exp(ps.estimate_Z(BrownianField(s, horizon=T, record=False), 1.0, beta,
                                          T, 2, rng).logZ) for s in range(3000)])
    assert abs(zs.mean() - math.exp(beta ** 2 * T / 2)) < 3 * zs.std(ddof=1) / math.sqrt(zs.size)


def test_estimator_variance_scales_like_inverse_M(rng):
    F = BrownianField(7, horizon=2.0, record=False)
    Ms = [250, 1000, 4000]
    var = [np.var([ps.estimate_Z(F, 1.0, 0.7, 2.0, M, rng).logZ for _ in range(40)], ddof=1)
           for M in Ms]
    slope = np.polyfit(np.log(Ms), np.log(var), 1)[0]
    assert abs(slope + 1.0) < 0.35


def test_is_and_smc_agree(rng):
    F = BrownianField(8, horizon=2.0, record=False)
    a = ps.estimate_Z(F, 1.0, 1.0, 2.0, 8000, rng, method="is")
    b = ps.estimate_Z(F, 1.0, 1.0, 2.0, 8000, rng, method="smc")
    assert abs(a.logZ - b.logZ) < 3 * math.hypot(a.se, b.se)
    assert b.method == "smc" and len(b.ess_trace) > 1


def test_degenerate_weights_warn(rng):
    F = BrownianField(9, horizon=5.0, record=False)
    with pytest.warns(ps.DegenerateEnsembleWarning):
        est = ps.estimate_Z(F, 1.0, 60.0, 5.0, 50, rng)
    assert est.degenerate and np.isfinite(est.logZ)


def test_unknown_method(rng):
    with pytest.raises(ValueError):
        ps.estimate_Z(BrownianField(0), 1.0, 1.0, 1.0, 10, rng, method="mcmc")


# -- overlaps ------------------------------------------------------------------------

def test_identical_paths_overlap_fully(rng):
    X = ps.sample_free(2.0, 3.0, rng)
    assert ps.overlap_time(X, X) == 1.0


def test_collision_sweep_matches_pairs(rng):
    b = ps.sample_free_batch(1.5, 2.0, 25, rng)
    w = rng.random(b.M)
    w /= w.sum()
    paths = [b.path(i) for i in range(b.M)]
    brute = sum(w[i] * w[j] * ps.overlap_time(paths[i], paths[j])
                for i in range(b.M) for j in range(b.M))
    assert ps.weighted_collision_time(b, w) == pytest.approx(brute, abs=1e-12)


def test_free_replica_overlap(rng):
    kappa, T = 1.0, 2.0
    est = ps.replica_overlap_mc(BrownianField(0, horizon=T), kappa, 0.0, T, 4000, rng)
    assert abs(est.J - free_collision_1d(kappa, T)) < 3 * est.se


def test_weighted_ensemble_rows(rng):
    ens = ps.weighted_ensemble(BrownianField(1, horizon=1.0), 1.0, 0.5, 1.0, 5, rng)
    rows = ens.rows()
    assert len(rows) == 5 and rows[0]["log_weight"] == pytest.approx(0.5 * rows[0]["H"])
    assert 1.0 <= ens.ess <= 5.0
