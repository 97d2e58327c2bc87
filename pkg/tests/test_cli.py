import csv
import json

import pytest

from polymerlab import checks as C
from polymerlab.cli import ConfigError, ExperimentConfig, load_config_file, main


def run_cli(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config validation ---------------------------------------------------------------

@pytest.mark.parametrize("data,field", [
    ({"kind": "env", "bogus": 1}, "bogus"),
    ({"kind": "env", "seeds": [3, 3]}, "seeds"),
    ({"kind": "env", "beta_grid": []}, "beta_grid"),
    ({"kind": "env", "tolerances": {"sandwich": -1.0}}, "tolerances.sandwich"),
    ({"kind": "env", "tolerances": {"nope": 1.0}}, "tolerances.nope"),
    ({"kind": "env", "T": 1.0, "dt": 0.3}, "dt"),
    ({"kind": "env", "kappa": 0}, "kappa"),
    ({"kind": "nothing"}, "kind"),
    ({"d": 1}, "kind"),
])
def test_invalid_config_names_field(data, field):
    with pytest.raises(ConfigError, match=field):
        ExperimentConfig.from_mapping(data)


def test_kind_defaults_and_overrides():
    cfg = ExperimentConfig.from_mapping({"kind": "overlap-curve", "n_seeds": 3})
    assert cfg.T == 10.0 and cfg.n_seeds == 3
    assert cfg.seed_values() == C.seed_list(0, 3)
    assert ExperimentConfig.from_mapping({"kind": "env", "seeds": [4, 1]}).seed_values() == [4, 1]


def test_json_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"kind": "env",\n  "T": }\n')
    with pytest.raises(ConfigError, match="line 2"):
        load_config_file(str(p))
    assert run_cli("env", "--config", p, "--out", tmp_path / "o") == 1


def test_toml_config(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('kind = "env"\nT = 0.5\ndt = 0.125\nR = 1\nseeds = [9]\n'
                 '[tolerances]\nsandwich = 1e-10\n')
    out = tmp_path / "o"
    assert run_cli("env", "--config", p, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["tolerances"] == {"sandwich": 1e-10}
    assert summary["summary"]["master_seed"] == 9


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"kind": "ldp"}))
    assert run_cli("env", "--config", p) == 1
    assert run_cli("env", "--config", tmp_path / "missing.json") == 1
    assert "config error" in capsys.readouterr().err


# -- runs ---------------------------------------------------------------------------

def test_env_roundtrip_and_replay(tmp_path):
    first = tmp_path / "a"
    assert run_cli("env", "--master-seed", 3, "--out", first) == 0
    rows = read_csv(first / "check_report.v1.csv")
    assert rows[0]["name"] == "snapshot_audit" and rows[0]["passed"] == "True"
    cfg = tmp_path / "replay.json"
    cfg.write_text(json.dumps({"kind": "env", "snapshot": str(first / "env_snapshot.v1.json")}))
    second = tmp_path / "b"
    assert run_cli("env", "--config", cfg, "--out", second) == 0
    assert (first / "env_samples.v1.csv").read_bytes() == (second / "env_samples.v1.csv").read_bytes()


def test_missing_snapshot_exit_1(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "env", "snapshot": str(tmp_path / "none.json")}))
    assert run_cli("env", "--config", cfg, "--out", tmp_path / "o") == 1


def test_csv_is_deterministic(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "free-energy", "T": 2.0, "dt": 0.02, "M": 200,
                               "n_seeds": 3}))
    for name, threads in (("a", 1), ("b", 2)):
        assert run_cli("free-energy", "--config", cfg, "--out", tmp_path / name,
                       "--threads", threads) == 0
    for f in ("free_energy.v1.csv", "check_report.v1.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = read_csv(tmp_path / "a" / "free_energy.v1.csv")
    assert len(rows) == 3 and all(float(r["logZ_mc_se"]) > 0 for r in rows)


def test_statistical_failure_gates_only_when_strict(tmp_path):
    cfg = tmp_path / "c.json"
    # a p-value threshold of 0.999 makes the scaling KS test fail
    cfg.write_text(json.dumps({"kind": "ground-state", "T": 1.0, "n_seeds": 20, "n_list": [1, 2],
                               "K_per_unit": 4, "r_grid": [2.0],
                               "tolerances": {"jump_law_p": 0.999}}))
    assert run_cli("ground-state", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run_cli("ground-state", "--config", cfg, "--out", tmp_path / "b", "--strict") == 2
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    rec = summary["check_report"]["records"][0]
    assert summary["exit_code"] == 2 and not rec["passed"] and rec["discrepancy"] < 0.999


def test_hard_failure_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "localization", "T": 2.0, "dt": 0.02, "n_seeds": 2,
                               "tolerances": {"consistency": 1e-300}}))
    assert run_cli("localization", "--config", cfg, "--out", tmp_path / "o") == 2
    assert (tmp_path / "o" / "localization.v1.csv").exists()


def test_overlap_curve_outputs(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "overlap-curve", "T": 2.0, "dt": 0.02, "n_seeds": 4,
                               "ratio_grid": [1, 16]}))
    assert run_cli("overlap-curve", "--config", cfg, "--out", tmp_path / "o") == 0
    curve = read_csv(tmp_path / "o" / "overlap_curve.v1.csv")
    assert [float(c["ratio"]) for c in curve] == [1.0, 16.0]
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["summary"]["asymptotic_only"] is True


def test_ldp_outputs(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "ldp", "T": 2.0, "n_seeds": 3, "M": 100,
                               "beta_grid": [0.5], "r_grid": [0.5, 1.0, 2.0]}))
    assert run_cli("ldp", "--config", cfg, "--out", tmp_path / "o") == 0
    assert len(read_csv(tmp_path / "o" / "rate_tables.v1.csv")) == 3


@pytest.mark.filterwarnings("ignore::polymerlab.path_sampler.DegenerateEnsembleWarning")
def test_check_kind_small_scale(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "check", "scale": 0.05}))
    assert run_cli("check", "--config", cfg, "--out", tmp_path / "o") == 0
    names = {r["name"] for r in read_csv(tmp_path / "o" / "check_report.v1.csv")}
    for n in ("oracle_equivalence", "sandwich_d1", "sandwich_d2", "pathwise_scaling",
              "consistency", "dp_ground_state", "ito_relative_b1", "ibp_b1", "jump_law",
              "gamma_scaling", "localization_trend", "cross_method", "concentration_b1",
              "annealed_gamma"):
        assert n in names
    assert (tmp_path / "o" / "identity_seeds.v1.csv").exists()
