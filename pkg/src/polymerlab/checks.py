"""Identity checks shared by the ``check`` command and the acceptance tests.

Each check returns a :class:`CheckRecord` carrying the measured discrepancy,
the tolerance it was held to and whether it is an exact (hard) identity or a
Monte Carlo comparison.  Anchors name the identity being probed.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import lattice_solver as ls
from . import oracles
from .environment import BrownianField, derive_seed, worker_rng
from .ground_state import conditioned_log_mean, dp_ground_state, gamma_estimate
from .path_sampler import (estimate_Z, hamiltonian, replica_overlap_mc,
                           sample_conditioned, sample_free)


@dataclass
class CheckRecord:
    name: str
    anchor: str
    discrepancy: float
    tolerance: float
    passed: bool
    hard: bool
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        kind = "hard" if self.hard else "stat"
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} [{kind}] {self.name}: discrepancy={self.discrepancy:.6g} "
                f"tolerance={self.tolerance:.6g} ({self.runtime:.1f}s)")

    CSV_COLUMNS = ("name", "anchor", "hard", "discrepancy", "tolerance", "passed")

    def row(self) -> dict:
        return {"name": self.name, "anchor": self.anchor, "hard": self.hard,
                "discrepancy": self.discrepancy, "tolerance": self.tolerance,
                "passed": self.passed}


@dataclass
class CheckReport:
    records: list[CheckRecord] = field(default_factory=list)

    def add(self, rec: CheckRecord) -> CheckRecord:
        self.records.append(rec)
        return rec

    def failures(self, strict: bool = False) -> list[CheckRecord]:
        return [r for r in self.records if not r.passed and (r.hard or strict)]

    def exit_code(self, strict: bool = False) -> int:
        return 2 if self.failures(strict) else 0

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records],
                "hard_pass": all(r.passed for r in self.records if r.hard),
                "statistical_pass": all(r.passed for r in self.records if not r.hard)}


class SolveLog:
    """Tracks the consistency residual of every solve that passes through it."""

    def __init__(self):
        self.count = 0
        self.worst = 0.0

    def record(self, fields: ls.SolverFields) -> ls.SolverFields:
        self.count += 1
        self.worst = max(self.worst, fields.consistency_error)
        return fields


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        rec = fn(*args, **kwargs)
        rec.runtime = time.perf_counter() - t0
        return rec
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def map_seeds(fn, seeds, threads: int = 1) -> list:
    """``[fn(s) for s in seeds]``, optionally on a thread pool (order kept)."""
    if threads <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def seed_list(master_seed: int, count: int) -> list[int]:
    return [derive_seed(master_seed, i) for i in range(count)]


# -- desk ensemble ------------------------------------------------------------

@dataclass
class DeskEnsemble:
    """Per-seed lattice statistics for one ``(beta, dt)``."""
    beta: float
    dt: float
    T: float
    seeds: np.ndarray
    logZ: np.ndarray
    I: np.ndarray
    J: np.ndarray
    adapted: np.ndarray
    fd: np.ndarray

    def ito_residual(self) -> np.ndarray:
        return self.logZ - 0.5 * self.beta ** 2 * self.T * (1.0 - self.I)

    def head(self, n: int) -> "DeskEnsemble":
        return DeskEnsemble(self.beta, self.dt, self.T, self.seeds[:n], self.logZ[:n],
                            self.I[:n], self.J[:n], self.adapted[:n], self.fd[:n])

    CSV_COLUMNS = ("seed", "beta", "dt", "logZ", "I", "J", "ito_residual",
                   "adapted_integral", "dlogZ_dbeta")

    def rows(self) -> list[dict]:
        res = self.ito_residual()
        return [{"seed": int(s), "beta": self.beta, "dt": self.dt, "logZ": float(z),
                 "I": float(i), "J": float(j), "ito_residual": float(r),
                 "adapted_integral": float(a), "dlogZ_dbeta": float(f)}
                for s, z, i, j, r, a, f in zip(self.seeds, self.logZ, self.I, self.J,
                                               res, self.adapted, self.fd)]


def desk_ensembles(seeds, betas, kappa: float, T: float, dt: float, d: int = 1,
                   fd_step: float = 0.05, log: SolveLog | None = None,
                   threads: int = 1) -> dict[float, DeskEnsemble]:
    """One environment per seed, solved for every ``beta`` on the same increments.

    ``fd`` is the central difference of ``log Z`` in ``beta`` with step
    ``fd_step``; ``adapted`` is :func:`lattice_solver.adapted_integral`.
    """
    params = ls.SolverParams(kappa, betas[0], T, dt, d=d)
    kernel = ls.build_kernel(params)
    log = log or SolveLog()

    def one(seed):
        env = BrownianField(seed, d=d, horizon=T, record=False)
        inc = ls.grid_increments(env, params, kernel.box)
        out = []
        for beta in betas:
            p = params.with_beta(beta)
            f = log.record(ls.solve(env, p, inc, kernel))
            rep = ls.overlaps_and_localization(fields=f)
            up = ls.solve_forward(env, p.with_beta(beta + fd_step), inc, kernel).logZ
            dn = ls.solve_forward(env, p.with_beta(beta - fd_step), inc, kernel).logZ
            out.append((f.logZ, rep.I, rep.J, ls.adapted_integral(f, inc),
                        (up - dn) / (2 * fd_step)))
        return out

    per_seed = np.array(map_seeds(one, seeds, threads))  # (S, B, 5)
    ens = {}
    for b, beta in enumerate(betas):
        cols = per_seed[:, b, :].T
        ens[beta] = DeskEnsemble(beta, dt, T, np.asarray(seeds), *cols)
    return ens


# -- exact checks ---------------------------------------------------------------

@_timed
def check_oracle_equivalence(seeds, kappa=1.0, beta=1.0, T=1.2, dt=0.2, R=2,
                             tol=1e-10, log: SolveLog | None = None) -> CheckRecord:
    """Lattice solver against brute-force path enumeration on a tiny box."""
    params = ls.SolverParams(kappa, beta, T, dt, d=1, R=R)
    kernel = ls.build_kernel(params)
    P = kernel.matrix()
    worst = 0.0
    for seed in seeds:
        env = BrownianField(seed, horizon=T, record=False)
        inc = ls.grid_increments(env, params, kernel.box)
        f = ls.solve(env, params, inc, kernel)
        if log is not None:
            log.record(f)
        rep = ls.overlaps_and_localization(fields=f)
        ref = oracles.enumerate_lattice(inc, P, kernel.box.origin, beta)
        pairs = [(f.logZ, ref["logZ"]), (ls.endpoint_law(f), ref["endpoint_law"]),
                 (ls.marginal_T(f), ref["marginal_T"]), (rep.I, ref["I"]), (rep.J, ref["J"])]
        for got, want in pairs:
            got, want = np.asarray(got), np.asarray(want)
            scale = max(float(np.max(np.abs(want))), 1e-300)
            worst = max(worst, float(np.max(np.abs(got - want))) / scale)
    return CheckRecord("oracle_equivalence", "transfer operator = path enumeration",
                       worst, tol, worst <= tol, True,
                       details={"seeds": len(seeds), "K": params.K, "R": R})


@_timed
def check_sandwich(seeds, d=1, kappa=1.0, beta=1.0, T=5.0, dt=0.01, tol=1e-12,
                   log: SolveLog | None = None) -> CheckRecord:
    """``b <= 1 - I <= 2b`` and the same for ``J`` on every realization."""
    params = ls.SolverParams(kappa, beta, T, dt, d=d)
    kernel = ls.build_kernel(params)
    worst = 0.0
    for seed in seeds:
        env = BrownianField(seed, d=d, horizon=T, record=False)
        f = ls.solve(env, params, kernel=kernel)
        if log is not None:
            log.record(f)
        worst = max(worst, ls.overlaps_and_localization(fields=f).sandwich_violation())
    return CheckRecord(f"sandwich_d{d}", "b <= a <= 2b (favourite site vs overlap)",
                       worst, tol, worst <= tol, True, details={"seeds": len(seeds), "d": d})


@_timed
def check_pathwise_scaling(n_pairs=1000, master_seed=0, kappa=1.0, T=1.0, d=1,
                           tol=1e-9) -> CheckRecord:
    """``H(W, X) = a^{-1/2} H(W^(a), X^(a))`` for random paths and factors."""
    rng = worker_rng(master_seed, 7)
    n_env = 10
    worst = 0.0
    for e in range(n_env):
        env = BrownianField(derive_seed(master_seed, e), d=d, horizon=T, record=False)
        for _ in range(n_pairs // n_env):
            a = float(np.exp(rng.uniform(math.log(0.1), math.log(10.0))))
            X = sample_free(kappa, T, rng, d)
            lhs = hamiltonian(env, X)
            rhs = hamiltonian(env.rescale(a), X.rescaled(a)) / math.sqrt(a)
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return CheckRecord("pathwise_scaling", "Brownian scaling of the Hamiltonian",
                       worst, tol, worst <= tol, True, details={"pairs": n_pairs})


def check_consistency(log: SolveLog, tol=1e-8) -> CheckRecord:
    return CheckRecord("consistency", "sum_x Z_k(x) v_k(x) constant in k", log.worst,
                       tol, log.worst <= tol and log.count > 0, True,
                       details={"solves": log.count})


@_timed
def check_dp(seeds, K=4, n_max=2, T=1.0, d=1, tol=1e-10) -> CheckRecord:
    """Grid DP against exhaustive search, plus re-evaluation of its argmax path."""
    worst = 0.0
    for seed in seeds:
        env = BrownianField(seed, d=d, horizon=T, record=False)
        for n in range(n_max + 1):
            gs = dp_ground_state(env, T, n, K)
            ref = oracles.exhaustive_ground_state(env, T, n, K, d)
            worst = max(worst, abs(gs.value - ref), abs(hamiltonian(env, gs.path) - gs.value))
    return CheckRecord("dp_ground_state", "last-passage DP = exhaustive maximum",
                       worst, tol, worst <= tol, True, details={"seeds": len(seeds), "K": K})


# -- statistical checks ------------------------------------------------------------

def ito_checks(fine: DeskEnsemble, coarse: DeskEnsemble, rel_tol=0.02) -> list[CheckRecord]:
    """Mean of ``log Z - (beta^2/2) T (1 - I)`` against zero.

    The absolute test allows ``3 SE + C dt T`` with ``C`` from the two
    levels.  The relative figure subtracts ``beta * adapted`` (exact mean
    zero) from each residual before averaging, which removes the martingale
    noise without changing the expectation.
    """
    t0 = time.perf_counter()
    beta, T = fine.beta, fine.T
    raw, raw_se = _mean_se(fine.ito_residual())
    comp_f = fine.ito_residual() - beta * fine.adapted
    comp_c = coarse.ito_residual() - beta * coarse.adapted
    mf, sf = _mean_se(comp_f)
    mc, _ = _mean_se(comp_c)
    C = abs(mc - mf) / ((coarse.dt - fine.dt) * T)
    allow = 3 * raw_se + C * fine.dt * T
    target = 0.5 * beta ** 2 * T * (1.0 - fine.I.mean())
    rel = abs(mf) / abs(target)
    dt = time.perf_counter() - t0
    info = {"beta": beta, "dt": fine.dt, "seeds": len(fine.seeds), "raw_mean": raw,
            "raw_se": raw_se, "C": C, "compensated_mean": mf, "compensated_se": sf,
            "raw_relative": abs(raw) / abs(target), "target": target}
    return [
        CheckRecord(f"ito_absolute_b{beta:g}", "Ito decomposition of log Z", abs(raw), allow,
                    abs(raw) <= allow, False, dt, info),
        CheckRecord(f"ito_relative_b{beta:g}", "Ito decomposition of log Z", rel, rel_tol,
                    rel <= rel_tol, False, 0.0, info),
    ]


def ibp_check(ens: DeskEnsemble, rel_tol=0.05) -> CheckRecord:
    """``d/dbeta E log Z = beta T (1 - E J)`` by central differences.

    The mean-zero ``adapted`` integral is used as a control variate.
    """
    target = ens.beta * ens.T * (1.0 - ens.J.mean())
    est, se = _mean_se(ens.fd - ens.adapted)
    raw, raw_se = _mean_se(ens.fd)
    rel = abs(est - target) / abs(target)
    info = {"beta": ens.beta, "derivative": est, "derivative_se": se, "raw_derivative": raw,
            "raw_se": raw_se, "target": target, "raw_relative": abs(raw - target) / abs(target)}
    return CheckRecord(f"ibp_b{ens.beta:g}", "Gaussian integration by parts in beta",
                       rel, rel_tol, rel <= rel_tol, False, 0.0, info)


def annealed_check(ens: DeskEnsemble) -> CheckRecord:
    m, se = _mean_se(ens.logZ / ens.T)
    bound = 0.5 * ens.beta ** 2
    excess = m - bound - 3 * se
    return CheckRecord(f"annealed_logZ_b{ens.beta:g}", "Jensen: quenched <= annealed",
                       excess, 0.0, excess <= 0.0, False, 0.0,
                       {"mean": m, "se": se, "bound": bound})


@_timed
def check_annealed_gamma(betas, r_grid, T=5.0, M=1000, seeds=(), d=1,
                         master_seed=0) -> CheckRecord:
    """Conditioned free energy never exceeds ``beta^2 / 2`` beyond 3 SE."""
    worst, details = -math.inf, []
    for beta in betas:
        for r in r_grid:
            g = gamma_estimate(beta, r, T, M, seeds, d=d, master_seed=master_seed)
            worst = max(worst, g.gamma - 0.5 * beta ** 2 - 3 * g.se)
            details.append({"beta": beta, "r": r, "gamma": g.gamma, "se": g.se})
    return CheckRecord("annealed_gamma", "Jensen: conditioned quenched <= annealed",
                       worst, 0.0, worst <= 0.0, False, details={"points": details})


def concentration_check(ens: DeskEnsemble, u_factors=(0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0)
                        ) -> CheckRecord:
    """Empirical ``P(|log Z - mean| >= u)`` under ``2 exp(-u^2 / (2 beta^2 T))``."""
    dev = np.abs(ens.logZ - ens.logZ.mean())
    N = dev.size
    scale = ens.beta * math.sqrt(ens.T)
    worst, rows = -math.inf, []
    for c in u_factors:
        u = c * scale
        p = float(np.mean(dev >= u))
        se = math.sqrt(p * (1 - p) / N)
        bound = 2 * math.exp(-u * u / (2 * ens.beta ** 2 * ens.T))
        worst = max(worst, p - bound - 3 * se)
        rows.append({"u": u, "tail": p, "se": se, "bound": bound})
    return CheckRecord(f"concentration_b{ens.beta:g}", "Gaussian concentration of log Z",
                       worst, 0.0, worst <= 0.0, False, 0.0, {"seeds": N, "grid": rows})


@_timed
def check_jump_law(n_free=100_000, kappa=1.0, T=3.0, n_cond=3, n_rej=20_000,
                   master_seed=0, p_min=1e-3) -> CheckRecord:
    """Jump counts of free paths are Poisson; the conditioned sampler matches rejection."""
    rng = worker_rng(master_seed, 11)
    counts = np.array([sample_free(kappa, T, rng).n_jumps for _ in range(n_free)])
    top = int(stats.poisson.isf(5.0 / n_free, kappa * T))
    obs = np.bincount(np.minimum(counts, top), minlength=top + 1).astype(float)
    exp = stats.poisson.pmf(np.arange(top + 1), kappa * T)
    exp[-1] = stats.poisson.sf(top - 1, kappa * T)
    chi = stats.chisquare(obs, exp * n_free)

    firsts_rej, all_rej, ends_rej = [], [], []
    for _ in range(n_rej):
        X = sample_free(kappa, T, rng)
        if X.n_jumps == n_cond:
            firsts_rej.append(X.jump_times[0])
            all_rej.extend(X.jump_times)
            ends_rej.append(X.endpoint[0])
    m = len(firsts_rej)
    cond = [sample_conditioned(n_cond, T, rng) for _ in range(m)]
    ks_first = stats.ks_2samp(firsts_rej, [X.jump_times[0] for X in cond])
    ks_all = stats.ks_2samp(all_rej, np.concatenate([X.jump_times for X in cond]))
    ends_c = np.array([X.endpoint[0] for X in cond])
    support = np.arange(-n_cond, n_cond + 1, 2)
    table = np.array([[np.sum(np.asarray(ends_rej) == s) for s in support],
                      [np.sum(ends_c == s) for s in support]])
    ends = stats.chi2_contingency(table)
    p_low = min(chi.pvalue, ks_first.pvalue, ks_all.pvalue, ends.pvalue)
    return CheckRecord("jump_law", "Poisson jump counts; conditioned = rejection", p_low,
                       p_min, p_low > p_min, False,
                       details={"chisq_p": float(chi.pvalue), "ks_first_p": float(ks_first.pvalue),
                                "ks_all_p": float(ks_all.pvalue), "endpoint_p": float(ends.pvalue),
                                "accepted": m})


@_timed
def check_gamma_scaling(seeds, a_grid=(0.25, 4.0), beta=1.0, r=1.0, T=4.0, M=2000, d=1,
                        master_seed=0) -> CheckRecord:
    """``Gamma(beta, a r)`` against ``a Gamma(beta / sqrt(a), r)`` on rescaled fields.

    Left: environment ``W`` on ``[0, T]``.  Right: ``W^(a)`` on ``[0, aT]``.
    Both use ``[a r T]`` jumps; per-seed differences are averaged.
    """
    worst, rows = -math.inf, []
    for a in a_grid:
        n = int(math.floor(a * r * T + 1e-9))
        diffs = []
        for i, seed in enumerate(seeds):
            env = BrownianField(seed, d=d, horizon=T, record=False)
            rng = worker_rng(master_seed ^ seed, i)
            left = conditioned_log_mean(env, beta, n, T, M, rng)[0] / T
            right = a * conditioned_log_mean(env.rescale(a), beta / math.sqrt(a), n, a * T,
                                             M, rng)[0] / (a * T)
            diffs.append(left - right)
        m, se = _mean_se(diffs)
        worst = max(worst, abs(m) - 3 * se)
        rows.append({"a": a, "n": n, "mean_diff": m, "se": se})
    ratio = max(abs(x["mean_diff"]) / (3 * x["se"]) for x in rows)
    return CheckRecord("gamma_scaling", "scaling relation of the conditioned free energy",
                       ratio, 1.0, worst <= 0.0, False, details={"grid": rows})


def overlap_curve_data(seeds, ratios=(1, 4, 16, 64), beta=1.0, T=10.0, dt=0.01, d=1,
                       log: SolveLog | None = None, threads: int = 1) -> list[dict]:
    """Per-seed overlap reports along ``beta^2 / kappa`` at fixed ``beta``.

    Increments are drawn once per seed on the largest box and cropped.
    """
    params = {q: ls.SolverParams(beta ** 2 / q, beta, T, dt, d=d) for q in ratios}
    kernels = {q: ls.build_kernel(p) for q, p in params.items()}
    big = max((k.box for k in kernels.values()), key=lambda b: b.R)
    probe = ls.SolverParams(1.0, beta, T, dt, d=d, R=big.R)

    def one(seed):
        env = BrownianField(seed, d=d, horizon=T, record=False)
        inc = ls.grid_increments(env, probe, big)
        rows = []
        for q in ratios:
            k = kernels[q]
            f = ls.solve(env, params[q], ls.restrict_increments(inc, big, k.box), k)
            if log is not None:
                log.record(f)
            rep = ls.overlaps_and_localization(fields=f)
            row = rep.row(seed, params[q])
            row["ratio"] = q
            rows.append(row)
        return rows

    return [r for rows in map_seeds(one, seeds, threads) for r in rows]


def summarize_curve(rows: list[dict], ratios) -> list[dict]:
    out = []
    for q in ratios:
        sel = [r for r in rows if r["ratio"] == q]
        entry = {"ratio": q, "kappa": sel[0]["kappa"], "beta": sel[0]["beta"], "seeds": len(sel)}
        for key in ("I", "J", "a", "b", "abar", "bbar"):
            entry[key], entry[key + "_se"] = _mean_se([r[key] for r in sel])
        entry["beta_one_minus_J"] = entry["beta"] * (1.0 - entry["J"])
        entry["sandwich_violation"] = max(max(r["b"] - r["a"], r["a"] - 2 * r["b"],
                                              r["bbar"] - r["abar"], r["abar"] - 2 * r["bbar"], 0.0)
                                          for r in sel)
        out.append(entry)
    return out


def trend_check(curve: list[dict]) -> CheckRecord:
    """Mean ``I`` and ``J`` increase at every step by more than 3 combined SE."""
    worst, steps = math.inf, []
    for lo, hi in zip(curve, curve[1:]):
        for key in ("I", "J"):
            diff = hi[key] - lo[key]
            comb = math.hypot(hi[key + "_se"], lo[key + "_se"])
            worst = min(worst, diff - 3 * comb)
            steps.append({"from": lo["ratio"], "to": hi["ratio"], "key": key,
                          "diff": diff, "combined_se": comb})
    return CheckRecord("localization_trend", "overlaps grow with beta^2/kappa", -worst, 0.0,
                       worst > 0.0, False, details={"steps": steps})


@_timed
def check_cross_method(seeds, kappa=1.0, beta=1.0, T=3.0, dt=0.004, M=20_000,
                       master_seed=0, log: SolveLog | None = None) -> CheckRecord:
    """IS, SMC and replica overlaps against the lattice solution on shared fields.

    The lattice value is extrapolated from ``dt`` and ``dt / 2``; their gap is
    the discretization allowance.
    """
    worst, rows = -math.inf, []
    for i, seed in enumerate(seeds):
        env = BrownianField(seed, horizon=T, record=False)
        lat = []
        for h in (dt, dt / 2):
            f = ls.solve(env, ls.SolverParams(kappa, beta, T, h))
            if log is not None:
                log.record(f)
            lat.append((f.logZ, ls.overlaps_and_localization(fields=f).J))
        rng = worker_rng(master_seed ^ seed, i)
        ests = {"logZ_is": estimate_Z(env, kappa, beta, T, M, rng, method="is"),
                "logZ_smc": estimate_Z(env, kappa, beta, T, M, rng, method="smc")}
        ov = replica_overlap_mc(env, kappa, beta, T, M, rng)
        for name, (val, se, col) in {"logZ_is": (ests["logZ_is"].logZ, ests["logZ_is"].se, 0),
                                     "logZ_smc": (ests["logZ_smc"].logZ, ests["logZ_smc"].se, 0),
                                     "J_replica": (ov.J, ov.se, 1)}.items():
            ref = 2 * lat[1][col] - lat[0][col]
            allow = max(3 * se, abs(lat[1][col] - lat[0][col]))
            gap = abs(val - ref)
            worst = max(worst, gap / allow)
            rows.append({"seed": seed, "quantity": name, "mc": val, "se": se, "lattice": ref,
                         "allowance": allow})
    return CheckRecord("cross_method", "Monte Carlo = transfer operator", worst, 1.0,
                       worst <= 1.0, False, details={"rows": rows})
