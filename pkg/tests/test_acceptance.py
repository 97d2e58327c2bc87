"""Acceptance suite: one test per criterion at the stated sizes and tolerances.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary ends with a
PASS/FAIL line per criterion.  Criterion 4 runs last and audits every lattice
solve performed by the others.
"""
import time

import pytest

from polymerlab import checks as C
from polymerlab import lattice_solver as ls
from polymerlab.environment import BrownianField

BETAS = [0.5, 1.0]
KAPPA, T, DT = 1.0, 5.0, 0.01


@pytest.fixture(scope="module")
def solves():
    return C.SolveLog()


@pytest.fixture(scope="module")
def desk(solves):
    """500 environments at dt=0.01 and the first 200 again at dt=0.02, both betas."""
    t0 = time.perf_counter()
    fine = C.desk_ensembles(C.seed_list(5, 500), BETAS, KAPPA, T, DT, log=solves)
    coarse = C.desk_ensembles(C.seed_list(5, 200), BETAS, KAPPA, T, 2 * DT, log=solves)
    return fine, coarse, time.perf_counter() - t0


def _note(record_property, *recs):
    for r in recs:
        record_property("detail", f"{r.name} {r.discrepancy:.3g} vs {r.tolerance:.3g} "
                                  f"({r.runtime:.1f}s)")


@pytest.mark.criterion(1, "oracle equivalence")
def test_oracle_equivalence(solves, record_property):
    rec = C.check_oracle_equivalence(C.seed_list(1, 50), T=1.2, dt=0.2, R=2, tol=1e-10, log=solves)
    _note(record_property, rec)
    assert rec.details["K"] <= 6
    assert rec.passed, rec.line()
    assert rec.runtime < 10


@pytest.mark.criterion(2, "sandwich bounds")
@pytest.mark.parametrize("d,T_,dt", [(1, 5.0, 0.01), (2, 2.0, 0.02)])
def test_sandwich(d, T_, dt, solves, record_property):
    rec = C.check_sandwich(C.seed_list(2 + d, 100), d=d, T=T_, dt=dt, tol=1e-12, log=solves)
    _note(record_property, rec)
    assert rec.passed, rec.line()
    assert rec.runtime < 120


@pytest.mark.criterion(3, "pathwise scaling")
def test_pathwise_scaling(record_property):
    rec = C.check_pathwise_scaling(n_pairs=1000, master_seed=0, tol=1e-9)
    _note(record_property, rec)
    assert rec.passed, rec.line()
    assert rec.runtime < 30


@pytest.mark.criterion(5, "Ito identity")
def test_ito_identity(desk, record_property):
    fine, coarse, elapsed = desk
    recs = C.ito_checks(fine[1.0].head(200), coarse[1.0], rel_tol=0.02)
    _note(record_property, *recs)
    record_property("detail", f"raw relative {recs[1].details['raw_relative']:.3g}")
    for r in recs:
        assert r.passed, r.line()
    assert elapsed < 300


@pytest.mark.criterion(6, "IBP identity")
def test_ibp_identity(desk, record_property):
    fine, _, _ = desk
    recs = [C.ibp_check(fine[b].head(200), rel_tol=0.05) for b in BETAS]
    _note(record_property, *recs)
    for r in recs:
        record_property("detail", f"{r.name} raw relative {r.details['raw_relative']:.3g}")
        assert r.passed, r.line()


@pytest.mark.criterion(7, "annealed bounds")
def test_annealed_bounds(desk, record_property):
    fine, _, _ = desk
    recs = [C.annealed_check(fine[b].head(200)) for b in BETAS]
    recs.append(C.check_annealed_gamma(BETAS, [0.5, 1.0, 2.0], T=T, M=1000,
                                       seeds=C.seed_list(6, 50)))
    _note(record_property, *recs)
    for r in recs:
        assert r.passed, r.line()


@pytest.mark.criterion(8, "concentration")
def test_concentration(desk, record_property):
    fine, _, _ = desk
    recs = [C.concentration_check(fine[b]) for b in BETAS]
    _note(record_property, *recs)
    for r in recs:
        assert r.details["seeds"] == 500
        assert r.passed, r.line()


@pytest.mark.criterion(9, "jump law")
def test_jump_law(record_property):
    rec = C.check_jump_law(n_free=100_000, kappa=KAPPA, p_min=1e-3)
    _note(record_property, rec)
    assert rec.passed, rec.line()


@pytest.mark.criterion(10, "DP ground state")
def test_dp(record_property):
    rec = C.check_dp(C.seed_list(4, 100), K=4, n_max=2, tol=1e-10)
    _note(record_property, rec)
    assert rec.passed, rec.line()


@pytest.mark.criterion(11, "Gamma scaling")
def test_gamma_scaling(record_property):
    rec = C.check_gamma_scaling(C.seed_list(7, 50), a_grid=(0.25, 4.0))
    _note(record_property, rec)
    assert rec.passed, rec.line()


@pytest.mark.criterion(12, "localization trend")
def test_localization_trend(solves, record_property):
    ratios = (1, 4, 16, 64)
    rows = C.overlap_curve_data(C.seed_list(8, 100), ratios, beta=1.0, T=10.0, dt=0.01, log=solves)
    rec = C.trend_check(C.summarize_curve(rows, ratios))
    _note(record_property, rec)
    assert rec.passed, rec.line()


@pytest.mark.criterion(13, "cross-method consistency")
def test_cross_method(solves, record_property):
    rec = C.check_cross_method(C.seed_list(9, 3), kappa=1.0, beta=1.0, T=3.0, log=solves)
    _note(record_property, rec)
    assert rec.passed, rec.line()


@pytest.mark.criterion(4, "consistency identity")
def test_consistency_every_solve(solves, record_property):
    if solves.count == 0:  # selected on its own
        p = ls.SolverParams(KAPPA, 1.0, T, DT)
        for s in C.seed_list(10, 5):
            solves.record(ls.solve(BrownianField(s, horizon=T), p))
    rec = C.check_consistency(solves, tol=1e-8)
    record_property("detail", f"worst {rec.discrepancy:.3g} over {solves.count} solves")
    assert rec.passed, rec.line()
