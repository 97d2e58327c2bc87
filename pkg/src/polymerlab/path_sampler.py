"""Exact continuous-time path machinery.

Paths are stored by their jump times and visited sites, so the Hamiltonian
``H_T(X) = sum_i [W_{X(t_i)}(t_{i+1}) - W_{X(t_i)}(t_i)]`` is evaluated
against the environment with no time grid.  Batches of paths are held flat
(:class:`PathBatch`) so that a whole Monte Carlo ensemble costs one
environment query.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)


class DegenerateEnsembleWarning(RuntimeWarning):
    pass


def _unit_steps(dirs: np.ndarray, d: int) -> np.ndarray:
    steps = np.zeros((dirs.shape[0], d), dtype=np.int64)
    rows = np.arange(dirs.shape[0])
    steps[rows, dirs // 2] = np.where(dirs % 2 == 0, 1, -1)
    return steps


@dataclass(frozen=True)
class JumpPath:
    """Right-continuous nearest-neighbour path on ``[0, T]``."""

    start: tuple
    jump_times: np.ndarray
    sites: np.ndarray
    T: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=np.float64)
        st = np.asarray(self.sites, dtype=np.int64).reshape(jt.size + 1, -1)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "sites", st)
        object.__setattr__(self, "start", tuple(int(c) for c in self.start))
        if tuple(st[0]) != self.start:
            raise ValueError("sites[0] must equal start")
        if jt.size and (jt[0] <= 0 or jt[-1] >= self.T or np.any(np.diff(jt) <= 0)):
            raise ValueError("jump times must be strictly increasing inside (0, T)")
        if jt.size and np.any(np.abs(np.diff(st, axis=0)).sum(axis=1) != 1):
            raise ValueError("consecutive sites must be nearest neighbours")

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def endpoint(self) -> tuple:
        return tuple(int(c) for c in self.sites[-1])

    def breakpoints(self) -> np.ndarray:
        return np.concatenate(([0.0], self.jump_times, [self.T]))

    def position(self, t: float) -> tuple:
        return tuple(int(c) for c in self.sites[np.searchsorted(self.jump_times, t, side="right")])

    def rescaled(self, a: float) -> "JumpPath":
        """``X^(a)(s) = X(s / a)`` on ``[0, a T]``."""
        return JumpPath(self.start, a * self.jump_times, self.sites, a * self.T)

    def restrict(self, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
        """Sites and breakpoints of the path restricted to ``[t0, t1]``."""
        inside = (self.jump_times > t0) & (self.jump_times < t1)
        first = np.searchsorted(self.jump_times, t0, side="right")
        sites = self.sites[first:first + int(inside.sum()) + 1]
        breaks = np.concatenate(([t0], self.jump_times[inside], [t1]))
        return sites, breaks


@dataclass
class PathBatch:
    """``M`` paths stored flat: path ``i`` owns segments ``offsets[i]:offsets[i+1]``."""

    T: float
    counts: np.ndarray
    seg_sites: np.ndarray
    seg_start: np.ndarray
    seg_end: np.ndarray

    @property
    def M(self) -> int:
        return self.counts.size

    @property
    def d(self) -> int:
        return self.seg_sites.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.counts + 1)))

    @property
    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(self.M), self.counts + 1)

    def endpoints(self) -> np.ndarray:
        return self.seg_sites[self.offsets[1:] - 1]

    def path(self, i: int) -> JumpPath:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return JumpPath(tuple(self.seg_sites[lo]), self.seg_start[lo + 1:hi],
                        self.seg_sites[lo:hi], self.T)


def _extend(start_sites: np.ndarray, t0: float, t1: float, counts: np.ndarray,
            rng: np.random.Generator):
    """Segments of free-walk pieces on ``[t0, t1]`` with given jump counts."""
    M, d = start_sites.shape
    total = int(counts.sum())
    owner_j = np.repeat(np.arange(M), counts)
    times = rng.uniform(t0, t1, total)
    times = times[np.lexsort((times, owner_j))]
    steps = _unit_steps(rng.integers(0, 2 * d, total), d)
    nseg = counts + 1
    first = np.concatenate(([0], np.cumsum(nseg)[:-1]))
    is_first = np.zeros(total + M, dtype=bool)
    is_first[first] = True
    full = np.zeros((total + M, d), dtype=np.int64)
    full[is_first] = start_sites
    full[~is_first] = steps
    cs = np.cumsum(full, axis=0)
    seg_owner = np.repeat(np.arange(M), nseg)
    seg_sites = cs - cs[first][seg_owner] + start_sites[seg_owner]
    seg_start = np.empty(total + M)
    seg_start[is_first] = t0
    seg_start[~is_first] = times
    seg_end = np.empty(total + M)
    last = first + nseg - 1
    seg_end[:-1] = seg_start[1:]
    seg_end[last] = t1
    return seg_sites, seg_start, seg_end


def sample_free(kappa: float, T: float, rng: np.random.Generator, d: int = 1,
                start=None) -> JumpPath:
    """Rate-kappa simple random walk: exponential holding times, uniform steps."""
    if not (kappa > 0 and T > 0):
        raise ValueError("need kappa > 0 and T > 0")
    start = (0,) * d if start is None else tuple(start)
    times, sites = [], [np.array(start, dtype=np.int64)]
    t = rng.exponential(1.0 / kappa)
    while t < T:
        times.append(t)
        u = int(rng.integers(0, 2 * d))
        step = np.zeros(d, dtype=np.int64)
        step[u // 2] = 1 if u % 2 == 0 else -1
        sites.append(sites[-1] + step)
        t += rng.exponential(1.0 / kappa)
    return JumpPath(start, np.array(times), np.array(sites), T)


def sample_conditioned(n: int, T: float, rng: np.random.Generator, d: int = 1) -> JumpPath:
    """Walk conditioned on exactly ``n`` jumps: sorted uniform times, uniform steps."""
    if n < 0:
        raise ValueError("n must be >= 0")
    times = np.sort(rng.uniform(0.0, T, n))
    steps = _unit_steps(rng.integers(0, 2 * d, n), d)
    sites = np.vstack([np.zeros((1, d), dtype=np.int64), np.cumsum(steps, axis=0)])
    return JumpPath((0,) * d, times, sites, T)


def sample_free_batch(kappa: float, T: float, M: int, rng: np.random.Generator,
                      d: int = 1) -> PathBatch:
    counts = rng.poisson(kappa * T, M)
    return PathBatch(T, counts, *_extend(np.zeros((M, d), dtype=np.int64), 0.0, T, counts, rng))


def sample_conditioned_batch(n: int, T: float, M: int, rng: np.random.Generator,
                             d: int = 1) -> PathBatch:
    counts = np.full(M, int(n))
    return PathBatch(T, counts, *_extend(np.zeros((M, d), dtype=np.int64), 0.0, T, counts, rng))


def segment_hamiltonian(env, sites: np.ndarray, breaks: np.ndarray) -> float:
    """``sum_i [W_{s_i}(b_{i+1}) - W_{s_i}(b_i)]``; no path validation."""
    sites = np.asarray(sites, dtype=np.int64).reshape(len(breaks) - 1, -1)
    breaks = np.asarray(breaks, dtype=np.float64)
    hi = env.values(sites, breaks[1:])
    lo = env.values(sites, breaks[:-1])
    return float(np.sum(hi - lo))


def hamiltonian(env, path: JumpPath) -> float:
    if path.T > env.horizon:
        raise ValueError("path horizon exceeds environment horizon")
    return segment_hamiltonian(env, path.sites, path.breakpoints())


def hamiltonian_batch(env, batch: PathBatch) -> np.ndarray:
    diff = env.values(batch.seg_sites, batch.seg_end) - env.values(batch.seg_sites, batch.seg_start)
    return np.bincount(batch.owner, weights=diff, minlength=batch.M)


@dataclass
class ZEstimate:
    logZ: float
    se: float
    ess: float
    method: str
    degenerate: bool = False
    ess_trace: list = field(default_factory=list)


def ess(log_weights: np.ndarray) -> float:
    lw = log_weights - np.max(log_weights)
    w = np.exp(lw)
    return float(w.sum() ** 2 / np.sum(w * w))


def log_mean_exp(log_weights: np.ndarray) -> tuple[float, float]:
    """``log mean exp`` and its delta-method standard error."""
    m = log_weights.size
    top = np.max(log_weights)
    w = np.exp(log_weights - top)
    mean = w.mean()
    se = float(w.std(ddof=1) / (math.sqrt(m) * mean)) if m > 1 else float("nan")
    return float(top + math.log(mean)), se


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    M = weights.size
    positions = (rng.uniform() + np.arange(M)) / M
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions)


def _smc_run(env, kappa, beta, T, M, rng, d, checkpoints, threshold):
    grid = T * np.arange(checkpoints + 1) / checkpoints
    sites = np.zeros((M, d), dtype=np.int64)
    logw = np.zeros(M)
    logZ = 0.0
    trace, collapsed = [], 0
    for j in range(checkpoints):
        counts = rng.poisson(kappa * (grid[j + 1] - grid[j]), M)
        seg_sites, s0, s1 = _extend(sites, grid[j], grid[j + 1], counts, rng)
        owner = np.repeat(np.arange(M), counts + 1)
        diff = env.values(seg_sites, s1) - env.values(seg_sites, s0)
        logw = logw + beta * np.bincount(owner, weights=diff, minlength=M)
        sites = seg_sites[np.cumsum(counts + 1) - 1]
        e = ess(logw)
        trace.append(e)
        if e < threshold * M and j < checkpoints - 1:
            if e < 1.0 + 1e-9:
                collapsed += 1
            norm = logsumexp(logw)
            logZ += norm - math.log(M)
            idx = systematic_resample(np.exp(logw - norm), rng)
            sites, logw = sites[idx], np.zeros(M)
    logZ += logsumexp(logw) - math.log(M)
    return logZ, trace, collapsed


def estimate_Z(env, kappa: float, beta: float, T: float, M: int,
               rng: np.random.Generator, d: int = 1, method: str = "is",
               checkpoints: int = 50, threshold: float = 0.5,
               replicates: int = 8) -> ZEstimate:
    """Monte Carlo estimate of ``log Z`` for one environment.

    ``method="is"`` averages ``exp(beta H)`` over ``M`` free paths.
    ``method="smc"`` splits the budget over ``replicates`` independent
    particle systems with systematic resampling whenever the ESS falls below
    ``threshold * M``; each returns an unbiased ``Z`` (product of
    normalizers) and the replicate mean is reported.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    if method == "is":
        batch = sample_free_batch(kappa, T, M, rng, d)
        logw = beta * hamiltonian_batch(env, batch)
        logZ, se = log_mean_exp(logw)
        e = ess(logw)
        degenerate = e < 2.0
        if degenerate:
            warnings.warn(f"importance weights degenerate (ESS={e:.2f})",
                          DegenerateEnsembleWarning, stacklevel=2)
        return ZEstimate(logZ, se, e, "is", degenerate, [e])
    if method == "smc":
        per = max(2, M // replicates)
        runs = [_smc_run(env, kappa, beta, T, per, rng, d, checkpoints, threshold)
                for _ in range(replicates)]
        logs = np.array([r[0] for r in runs])
        logZ, se = log_mean_exp(logs)
        collapsed = sum(r[2] for r in runs)
        if collapsed > 1:
            warnings.warn(f"SMC ensemble collapsed {collapsed} times",
                          DegenerateEnsembleWarning, stacklevel=2)
        trace = runs[0][1]
        return ZEstimate(logZ, se, float(min(trace)), "smc", collapsed > 1, trace)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class WeightedEnsemble:
    batch: PathBatch
    log_weights: np.ndarray
    kappa: float
    beta: float
    H: np.ndarray

    @property
    def ess(self) -> float:
        return ess(self.log_weights)

    def rows(self) -> list[dict]:
        ends = self.batch.endpoints()
        return [{"path": i, "N": int(self.batch.counts[i]),
                 "endpoint": " ".join(map(str, ends[i])),
                 "H": float(self.H[i]), "log_weight": float(self.log_weights[i])}
                for i in range(self.batch.M)]


def weighted_ensemble(env, kappa: float, beta: float, T: float, M: int,
                      rng: np.random.Generator, d: int = 1) -> WeightedEnsemble:
    batch = sample_free_batch(kappa, T, M, rng, d)
    H = hamiltonian_batch(env, batch)
    return WeightedEnsemble(batch, beta * H, kappa, beta, H)


def overlap_time(X: JumpPath, Y: JumpPath) -> float:
    """Fraction of ``[0, T]`` on which two paths sit at the same site."""
    if X.T != Y.T:
        raise ValueError("paths must share the horizon")
    cuts = np.union1d(X.jump_times, Y.jump_times)
    left = np.concatenate(([0.0], cuts))
    right = np.concatenate((cuts, [X.T]))
    ix = np.searchsorted(X.jump_times, left, side="right")
    iy = np.searchsorted(Y.jump_times, left, side="right")
    same = np.all(X.sites[ix] == Y.sites[iy], axis=1)
    return float(np.sum((right - left)[same]) / X.T)


def _site_codes(sites: np.ndarray) -> np.ndarray:
    span = int(np.abs(sites).max()) if sites.size else 0
    base = 2 * span + 1
    codes = np.zeros(sites.shape[0], dtype=np.int64)
    for j in range(sites.shape[1]):
        codes = codes * base + (sites[:, j] + span)
    return codes


def weighted_collision_time(batch: PathBatch, weights: np.ndarray) -> float:
    """``(1/T) int_0^T sum_x m_t(x)^2 dt`` with ``m_t(x) = sum_i w_i 1{X_i(t)=x}``.

    Exact sweep over the merged jump times of the batch.
    """
    codes = _site_codes(batch.seg_sites)
    owner = batch.owner
    jump = np.ones(owner.size, dtype=bool)
    jump[batch.offsets[:-1]] = False
    jump_idx = np.nonzero(jump)[0]
    order = jump_idx[np.argsort(batch.seg_start[jump_idx], kind="stable")]
    mass: dict[int, float] = {}
    for code, w in zip(codes[batch.offsets[:-1]].tolist(), weights.tolist()):
        mass[code] = mass.get(code, 0.0) + w
    S = sum(v * v for v in mass.values())
    total, t_prev = 0.0, 0.0
    times = batch.seg_start[order].tolist()
    new = codes[order].tolist()
    old = codes[order - 1].tolist()
    wts = weights[owner[order]].tolist()
    for t, x, y, w in zip(times, old, new, wts):
        total += S * (t - t_prev)
        t_prev = t
        mx, my = mass[x], mass.get(y, 0.0)
        S += 2.0 * w * (my - mx) + 2.0 * w * w
        mass[x], mass[y] = mx - w, my + w
    total += S * (batch.T - t_prev)
    return total / batch.T


@dataclass
class OverlapEstimate:
    J: float
    se: float
    ess: float


def _self_normalized_overlap(batch: PathBatch, logw: np.ndarray) -> float:
    w = np.exp(logw - logw.max())
    w /= w.sum()
    sq = float(np.sum(w * w))
    return (weighted_collision_time(batch, w) - sq) / (1.0 - sq)


def _subset(batch: PathBatch, idx: np.ndarray) -> PathBatch:
    off = batch.offsets
    seg = np.concatenate([np.arange(off[i], off[i + 1]) for i in idx])
    return PathBatch(batch.T, batch.counts[idx], batch.seg_sites[seg],
                     batch.seg_start[seg], batch.seg_end[seg])


def replica_overlap_mc(env, kappa: float, beta: float, T: float, M: int,
                       rng: np.random.Generator, d: int = 1, groups: int = 20) -> OverlapEstimate:
    """Self-normalized estimate of the overlap ``J`` from weighted free paths.

    Pairs ``i != j`` are weighted by ``w_i w_j``; the standard error comes from
    ``groups`` disjoint batches.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    batch = sample_free_batch(kappa, T, M, rng, d)
    logw = beta * hamiltonian_batch(env, batch)
    e = ess(logw)
    if e < 2.0:
        warnings.warn(f"importance weights degenerate (ESS={e:.2f})",
                      DegenerateEnsembleWarning, stacklevel=2)
    J = _self_normalized_overlap(batch, logw)
    parts = np.array_split(np.arange(M), groups) if M >= 2 * groups else []
    per = [_self_normalized_overlap(_subset(batch, p), logw[p]) for p in parts]
    se = float(np.std(per, ddof=1) / math.sqrt(len(per))) if len(per) > 1 else float("nan")
    return OverlapEstimate(J, se, e)
