"""Command-line experiments: ``polymerlab <kind> [--config PATH] ...``.

Every run writes versioned CSV tables plus ``summary.json`` into ``--out``.
CSV content depends only on (config, seeds); the wall-clock timestamp and
runtimes live in the JSON summary.

Exit codes: 0 all gating checks pass, 2 a gating check failed (outputs are
still written), 1 bad usage, bad config or an infrastructure error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import checks as C
from . import lattice_solver as ls
from .environment import BrownianField, FieldError, SnapshotError, derive_seed, worker_rng
from .ground_state import alpha_estimate, ground_state_scaling, ldp_check, rate_tables
from .path_sampler import estimate_Z

log = logging.getLogger("polymerlab")

KINDS = ("env", "free-energy", "overlap-curve", "localization", "ground-state", "ldp", "check")
SCHEMA_VERSION = 1

# per-kind defaults; anything in the config file or on the command line wins
KIND_DEFAULTS = {
    "env": {"T": 1.0, "n_seeds": 1, "R": 2},
    "free-energy": {"T": 5.0, "n_seeds": 20, "M": 0},
    "overlap-curve": {"T": 10.0, "n_seeds": 100},
    "localization": {"T": 5.0, "n_seeds": 20},
    "ground-state": {"T": 4.0, "n_seeds": 50, "r_grid": [1.0]},
    "ldp": {"T": 5.0, "n_seeds": 20, "M": 1000, "r_grid": [0.25, 0.5, 1.0, 1.5, 2.0, 3.0]},
    "check": {"T": 5.0, "n_seeds": 200},
}

TOLERANCE_KEYS = ("oracle", "sandwich", "pathwise_scaling", "consistency", "dp",
                  "ito_relative", "ibp_relative", "jump_law_p")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    kind: str
    d: int = 1
    kappa: float = 1.0
    beta: float = 1.0
    T: float = 5.0
    dt: float = 0.01
    R: int | None = None
    kernel_tol: float = 1e-12
    M: int = 2000
    seeds: list[int] | None = None
    n_seeds: int = 20
    master_seed: int = 0
    beta_grid: list[float] = field(default_factory=lambda: [0.5, 1.0])
    r_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    a_grid: list[float] = field(default_factory=lambda: [0.25, 4.0])
    ratio_grid: list[float] = field(default_factory=lambda: [1.0, 4.0, 16.0, 64.0])
    n_list: list[int] = field(default_factory=lambda: [2, 4, 8, 16])
    K_per_unit: int = 8
    method: str = "is"
    concentration_seeds: int = 500
    scale: float = 1.0
    snapshot: str | None = None
    out: str = "results"
    threads: int = 1
    strict: bool = False
    tolerances: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: dict, source: str = "<config>") -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{source}: unknown field(s) {', '.join(unknown)}")
        if "kind" not in data:
            raise ConfigError(f"{source}: missing field 'kind'")
        kind = data["kind"]
        if kind not in KINDS:
            raise ConfigError(f"{source}: field 'kind' must be one of {', '.join(KINDS)}")
        merged = {**KIND_DEFAULTS[kind], **data}
        try:
            cfg = cls(**merged)
        except TypeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        cfg.validate(source)
        return cfg

    def validate(self, source: str = "<config>") -> None:
        def bad(name, why):
            raise ConfigError(f"{source}: field '{name}' {why}")

        for name in ("kappa", "T", "dt", "kernel_tol", "scale"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                bad(name, "must be a positive number")
        if not isinstance(self.beta, (int, float)) or self.beta < 0:
            bad("beta", "must be a non-negative number")
        for name in ("d", "n_seeds", "K_per_unit", "threads", "concentration_seeds"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                bad(name, "must be a positive integer")
        if not isinstance(self.M, int) or self.M < 0:
            bad("M", "must be a non-negative integer")
        if self.R is not None and (not isinstance(self.R, int) or self.R < 0):
            bad("R", "must be a non-negative integer")
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed < 2 ** 64:
            bad("master_seed", "must be an unsigned 64-bit integer")
        for name in ("beta_grid", "r_grid", "a_grid", "ratio_grid", "n_list"):
            g = getattr(self, name)
            if not isinstance(g, list) or not g:
                bad(name, "must be a nonempty list")
            if any(not isinstance(v, (int, float)) or v < 0 for v in g):
                bad(name, "entries must be non-negative numbers")
        for name in ("r_grid", "a_grid", "ratio_grid", "n_list"):
            if any(v <= 0 for v in getattr(self, name)):
                bad(name, "entries must be positive")
        if self.seeds is not None:
            if not isinstance(self.seeds, list) or not self.seeds:
                bad("seeds", "must be a nonempty list")
            if any(not isinstance(s, int) or s < 0 for s in self.seeds):
                bad("seeds", "entries must be non-negative integers")
            if len(set(self.seeds)) != len(self.seeds):
                bad("seeds", "entries must be distinct")
        if self.method not in ("is", "smc"):
            bad("method", "must be 'is' or 'smc'")
        if not isinstance(self.tolerances, dict):
            bad("tolerances", "must be a table of name -> value")
        for k, v in self.tolerances.items():
            if k not in TOLERANCE_KEYS:
                bad(f"tolerances.{k}", f"is not one of {', '.join(TOLERANCE_KEYS)}")
            if not isinstance(v, (int, float)) or not v > 0:
                bad(f"tolerances.{k}", "must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            bad("dt", "must divide T")

    def seed_values(self, count: int | None = None) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return C.seed_list(self.master_seed, count or self.n_seeds)

    def scaled(self, n: int, floor: int = 2) -> int:
        return max(floor, int(round(n * self.scale)))

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def solver_params(self, beta: float | None = None) -> ls.SolverParams:
        return ls.SolverParams(self.kappa, self.beta if beta is None else beta, self.T,
                               self.dt, d=self.d, R=self.R, kernel_tol=self.kernel_tol)


def load_config_file(path: str) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


# -- output helpers ---------------------------------------------------------------

def _plain(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: _plain(row[c]) for c in columns})


def _mean_se(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return {"mean": float(x.mean()), "se": se}


# -- experiment kinds -----------------------------------------------------------------

def run_env(cfg: ExperimentConfig, out: Path, report: C.CheckReport) -> dict:
    """Reveal a site/time grid, snapshot it, reload and audit bit-equality."""
    if cfg.snapshot:
        try:
            data = Path(cfg.snapshot).read_bytes()
        except OSError:
            raise FieldError(f"environment snapshot {cfg.snapshot} not found") from None
        env = BrownianField.load(data)
    else:
        env = BrownianField(cfg.seed_values(1)[0], d=cfg.d, horizon=cfg.T)
        sites = ls.lattice_sites(cfg.d, cfg.R if cfg.R is not None else 2)
        times = ls.grid_times(cfg.T, int(round(cfg.T / cfg.dt)))
        for x in sites:
            env.values(x, times)
    t0 = time.perf_counter()
    blob = env.snapshot()
    (out / "env_snapshot.v1.json").write_bytes(blob)
    again = BrownianField.load((out / "env_snapshot.v1.json").read_bytes())
    mismatches = again.audit()
    rows = [{"site": " ".join(map(str, s)), "t": t, "value": v}
            for s in env.revealed_sites() for t, v in zip(*_track_arrays(env, s))]
    write_csv(out / "env_samples.v1.csv", ("site", "t", "value"), rows)
    report.add(C.CheckRecord("snapshot_audit", "replay reproduces every revealed sample",
                             float(mismatches), 0.0, mismatches == 0, True,
                             time.perf_counter() - t0, {"samples": len(rows)}))
    return {"master_seed": env.master_seed, "sites": len(env.revealed_sites()),
            "samples": len(rows)}


def _track_arrays(env, site):
    tr = env.track(site)
    return tr.times, tr.values


def run_free_energy(cfg, out, report) -> dict:
    params = cfg.solver_params()
    kernel = ls.build_kernel(params)
    solves = C.SolveLog()

    def one(args):
        i, seed = args
        env = BrownianField(seed, d=cfg.d, horizon=cfg.T, record=False)
        f = ls.solve(env, params, kernel=kernel)
        rep = ls.overlaps_and_localization(fields=f)
        row = {"seed": seed, "logZ": f.logZ, "free_energy": f.logZ / cfg.T, "I": rep.I,
               "J": rep.J, "leak": f.leak, "consistency": f.consistency_error,
               "logZ_mc": float("nan"), "logZ_mc_se": float("nan")}
        if cfg.M > 0:
            est = estimate_Z(env, cfg.kappa, cfg.beta, cfg.T, cfg.M,
                             worker_rng(cfg.master_seed, i), d=cfg.d, method=cfg.method)
            row["logZ_mc"], row["logZ_mc_se"] = est.logZ, est.se
        return row, f

    results = C.map_seeds(one, list(enumerate(cfg.seed_values())), cfg.threads)
    rows = [r for r, _ in results]
    for _, f in results:
        solves.record(f)
    cols = ("seed", "logZ", "free_energy", "I", "J", "leak", "consistency", "logZ_mc",
            "logZ_mc_se")
    write_csv(out / "free_energy.v1.csv", cols, rows)
    report.add(C.check_consistency(solves, cfg.tol("consistency", 1e-8)))
    summary = {k: _mean_se([r[k] for r in rows]) for k in ("free_energy", "I", "J")}
    summary["annealed_bound"] = 0.5 * cfg.beta ** 2
    return summary


def run_overlap_curve(cfg, out, report) -> dict:
    """Overlaps along ``beta^2/kappa`` at fixed ``beta`` (``kappa = beta^2 / ratio``)."""
    if cfg.beta <= 0:
        raise ConfigError("field 'beta' must be positive for overlap-curve")
    solves = C.SolveLog()
    ratios = sorted(cfg.ratio_grid)
    rows = C.overlap_curve_data(cfg.seed_values(), ratios, cfg.beta, cfg.T, cfg.dt, cfg.d,
                                log=solves, threads=cfg.threads)
    cols = ("ratio",) + ls.OverlapReport.CSV_COLUMNS
    write_csv(out / "overlap_rows.v1.csv", cols, rows)
    curve = C.summarize_curve(rows, ratios)
    ccols = ("ratio", "kappa", "beta", "seeds", "I", "I_se", "J", "J_se", "a", "a_se", "b",
             "b_se", "abar", "abar_se", "bbar", "bbar_se", "beta_one_minus_J",
             "sandwich_violation")
    write_csv(out / "overlap_curve.v1.csv", ccols, curve)
    worst = max(c["sandwich_violation"] for c in curve)
    tol = cfg.tol("sandwich", 1e-12)
    report.add(C.CheckRecord("sandwich", "b <= a <= 2b (favourite site vs overlap)", worst,
                             tol, worst <= tol, True))
    report.add(C.check_consistency(solves, cfg.tol("consistency", 1e-8)))
    if len(curve) > 1:
        report.add(C.trend_check(curve))
    bj = [c["beta_one_minus_J"] for c in curve]
    # beta (1 - J) is monotone only in the limit; report, never gate
    return {"curve": curve, "beta_one_minus_J_monotone": bool(np.all(np.diff(bj) >= 0)),
            "beta_one_minus_J_increments": list(np.diff(bj)), "asymptotic_only": True}


def run_localization(cfg, out, report) -> dict:
    params = cfg.solver_params()
    kernel = ls.build_kernel(params)
    solves = C.SolveLog()

    def one(seed):
        env = BrownianField(seed, d=cfg.d, horizon=cfg.T, record=False)
        f = solves.record(ls.solve(env, params, kernel=kernel))
        rep = ls.overlaps_and_localization(fields=f)
        prof = ls.decay_profile(f)
        return {"seed": seed, "I": rep.I, "J": rep.J, "a": rep.a, "b": rep.b, "abar": rep.abar,
                "bbar": rep.bbar, "x_star_T": " ".join(map(str, rep.x_star[-1])),
                "favourite_mass_T": float(prof.shell_max.max()),
                "outer_shell_mass": float(prof.shell_mass[-1]),
                "violation": rep.sandwich_violation()}

    rows = C.map_seeds(one, cfg.seed_values(), cfg.threads)
    cols = ("seed", "I", "J", "a", "b", "abar", "bbar", "x_star_T", "favourite_mass_T",
            "outer_shell_mass")
    write_csv(out / "localization.v1.csv", cols, rows)
    worst = max(r["violation"] for r in rows)
    tol = cfg.tol("sandwich", 1e-12)
    report.add(C.CheckRecord("sandwich", "b <= a <= 2b (favourite site vs overlap)", worst,
                             tol, worst <= tol, True))
    report.add(C.check_consistency(solves, cfg.tol("consistency", 1e-8)))
    return {k: _mean_se([r[k] for r in rows]) for k in ("I", "J", "b", "bbar")}


def run_ground_state(cfg, out, report) -> dict:
    seeds = cfg.seed_values()
    tab = alpha_estimate(seeds, sorted(int(n) for n in cfg.n_list), cfg.K_per_unit, cfg.d)
    write_csv(out / "ground_state.v1.csv", ("n", "K_per_unit", "mean_A_over_n", "se"), tab.rows)
    summary = {"alpha_hat": tab.alpha_hat, "alpha_se": tab.alpha_se,
               "stabilization": tab.stabilization}
    scal = []
    for r in cfg.r_grid:
        n = r * cfg.T
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            log.warning("skipping scaling test at r=%g: r*T is not a positive integer", r)
            continue
        res = ground_state_scaling(seeds, cfg.T, r, cfg.K_per_unit * int(round(cfg.T)), cfg.d)
        scal.append({"r": r, "T": cfg.T, "ks_stat": res["ks_stat"], "ks_pvalue": res["ks_pvalue"],
                     "mean_A": float(np.mean(res["A_T_r"])),
                     "mean_scaled": float(np.mean(res["scaled_A"]))})
    write_csv(out / "ground_state_scaling.v1.csv",
              ("r", "T", "ks_stat", "ks_pvalue", "mean_A", "mean_scaled"), scal)
    if scal:
        p = min(s["ks_pvalue"] for s in scal)
        pmin = cfg.tol("jump_law_p", 1e-3)
        report.add(C.CheckRecord("ground_state_scaling", "Brownian scaling of the ground state",
                                 p, pmin, p > pmin, False))
    summary["scaling"] = scal
    return summary


def run_ldp(cfg, out, report) -> dict:
    seeds = cfg.seed_values()
    tab = rate_tables(cfg.beta_grid, cfg.r_grid, cfg.kappa, cfg.T, cfg.M, seeds, cfg.d)
    write_csv(out / "rate_tables.v1.csv", tab.CSV_COLUMNS, tab.rows())
    rep = ldp_check(seeds, cfg.kappa, cfg.beta, cfg.T, cfg.r_grid, cfg.M, cfg.d, cfg.master_seed)
    rows = [{"n": n, "r": r, "empirical_rate": e, "predicted_rate": p, "censored": c}
            for n, r, e, p, c in zip(rep.n, rep.r, rep.empirical_rate, rep.predicted_rate,
                                     rep.censored)]
    write_csv(out / "ldp.v1.csv", ("n", "r", "empirical_rate", "predicted_rate", "censored"), rows)
    return {"psi": list(tab.psi), "rmax": tab.rmax.tolist(), "ldp_max_gap": rep.max_gap,
            "ldp_psi": rep.psi}


def identity_suite(cfg: ExperimentConfig, out: Path | None = None,
                   report: C.CheckReport | None = None) -> C.CheckReport:
    """Run every identity check; sizes scale with ``cfg.scale``."""
    report = report or C.CheckReport()
    solves = C.SolveLog()
    m, s = cfg.master_seed, cfg.scaled
    add = report.add
    add(C.check_oracle_equivalence(C.seed_list(derive_seed(m, 1), s(50)),
                                   tol=cfg.tol("oracle", 1e-10), log=solves))
    for d, T, dt in ((1, cfg.T, cfg.dt), (2, 2.0, 0.02)):
        add(C.check_sandwich(C.seed_list(derive_seed(m, 2 + d), s(100)), d=d, kappa=cfg.kappa,
                             T=T, dt=dt, tol=cfg.tol("sandwich", 1e-12), log=solves))
    add(C.check_pathwise_scaling(s(1000, 10), master_seed=m,
                                 tol=cfg.tol("pathwise_scaling", 1e-9)))
    add(C.check_dp(C.seed_list(derive_seed(m, 5), s(100)), tol=cfg.tol("dp", 1e-10)))

    betas = sorted(cfg.beta_grid)
    seeds = cfg.seed_values(s(cfg.n_seeds))
    conc = seeds if cfg.seeds is not None else cfg.seed_values(max(s(cfg.concentration_seeds),
                                                                   len(seeds)))
    fine = C.desk_ensembles(conc, betas, cfg.kappa, cfg.T, cfg.dt, log=solves, threads=cfg.threads)
    coarse = C.desk_ensembles(seeds, betas, cfg.kappa, cfg.T, 2 * cfg.dt, log=solves,
                              threads=cfg.threads)
    rows = []
    for b in betas:
        head = fine[b].head(len(seeds))
        for rec in C.ito_checks(head, coarse[b], cfg.tol("ito_relative", 0.02)):
            add(rec)
        add(C.ibp_check(head, cfg.tol("ibp_relative", 0.05)))
        add(C.annealed_check(head))
        add(C.concentration_check(fine[b]))
        rows += head.rows() + coarse[b].rows()
    add(C.check_annealed_gamma(betas, cfg.r_grid, T=cfg.T, M=s(1000, 50),
                               seeds=C.seed_list(derive_seed(m, 6), s(50)), master_seed=m))
    add(C.check_jump_law(s(100_000, 1000), kappa=cfg.kappa, master_seed=m,
                         p_min=cfg.tol("jump_law_p", 1e-3)))
    add(C.check_gamma_scaling(C.seed_list(derive_seed(m, 7), s(50)), cfg.a_grid,
                              M=s(2000, 50), master_seed=m))
    ratios = sorted(cfg.ratio_grid)
    t0 = time.perf_counter()
    curve = C.summarize_curve(C.overlap_curve_data(C.seed_list(derive_seed(m, 8), s(100)),
                                                   ratios, T=10.0, dt=cfg.dt, log=solves,
                                                   threads=cfg.threads), ratios)
    rec = add(C.trend_check(curve))
    rec.runtime = time.perf_counter() - t0
    add(C.check_cross_method(C.seed_list(derive_seed(m, 9), s(3, 1)), M=s(20_000, 200),
                             master_seed=m, log=solves))
    add(C.check_consistency(solves, cfg.tol("consistency", 1e-8)))
    if out is not None:
        write_csv(out / "identity_seeds.v1.csv", C.DeskEnsemble.CSV_COLUMNS, rows)
    return report


def run_check(cfg, out, report) -> dict:
    identity_suite(cfg, out, report)
    for rec in report.records:
        log.info(rec.line())
    return {"checks": len(report.records)}


RUNNERS = {"env": run_env, "free-energy": run_free_energy, "overlap-curve": run_overlap_curve,
           "localization": run_localization, "ground-state": run_ground_state, "ldp": run_ldp,
           "check": run_check}


def run(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = C.CheckReport()
    t0 = time.perf_counter()
    summary = RUNNERS[cfg.kind](cfg, out, report)
    write_csv(out / "check_report.v1.csv", C.CheckRecord.CSV_COLUMNS,
              [r.row() for r in report.records])
    code = report.exit_code(cfg.strict)
    doc = {"schema_version": SCHEMA_VERSION, "package_version": __version__, "kind": cfg.kind,
           "config": dataclasses.asdict(cfg), "summary": summary,
           "check_report": report.to_dict(), "exit_code": code,
           "runtime_s": time.perf_counter() - t0,
           "timestamp": datetime.now(timezone.utc).isoformat()}
    (out / "summary.json").write_text(json.dumps(_plain(doc), indent=2, default=str) + "\n")
    for rec in report.failures(cfg.strict):
        log.error(rec.line())
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors share exit code 1 with config errors; 2 means a failed check
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="polymerlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="JSON or TOML experiment file")
    ap.add_argument("--seeds", type=int, help="number of environments (derived from --master-seed)")
    ap.add_argument("--master-seed", type=int, help="unsigned 64-bit master seed")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--strict", action="store_true", help="statistical checks also gate the exit code")
    ap.add_argument("--threads", type=int, help="seed-level worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> ExperimentConfig:
    data = load_config_file(args.config) if args.config else {}
    source = args.config or "<command line>"
    if data.get("kind", args.kind) != args.kind:
        raise ConfigError(f"{source}: field 'kind' is {data['kind']!r} but the command is {args.kind!r}")
    data["kind"] = args.kind
    if args.seeds is not None:
        data["n_seeds"] = args.seeds
        data.pop("seeds", None)
    for flag, key in (("master_seed", "master_seed"), ("out", "out"), ("threads", "threads")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    if args.strict:
        data["strict"] = True
    return ExperimentConfig.from_mapping(data, source)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FieldError, SnapshotError, OSError, ls.KernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
