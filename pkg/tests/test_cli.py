import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from attelig.cli import main
from attelig.data import assign_folds, load_csv
from attelig.cli import parse_nuisance, parse_rule, parse_schema
from attelig.estimators import dr_att_one_step
from attelig.nuisance import crossfit

REPO = Path(__file__).resolve().parent.parent


def run_cli(*argv):
    return main(list(argv))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh)


@pytest.fixture
def demo_config(tmp_path):
    cfg = load_config(REPO / "demos" / "estimate_config.yaml")
    cfg["data"]["csv"] = str(REPO / "demos" / "demo_data.csv")
    cfg["output"]["dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path, cfg


class TestEstimate:
    def test_smoke_emits_four_reports(self, demo_config, capsys):
        path, cfg = demo_config
        assert run_cli("estimate", "--config", str(path)) == 0
        out = Path(cfg["output"]["dir"])
        names = {p.name for p in out.glob("*.json")}
        assert names == {
            "estimate_CC.json", "estimate_IWOR.json",
            "estimate_IF.json", "estimate_EIF.json",
        }
        assert (out / "estimates.txt").exists()
        payload = json.loads((out / "estimate_EIF.json").read_text())
        assert payload["estimator"] == "EIF"
        assert payload["ci_lo"] <= payload["theta_hat"] <= payload["ci_hi"]
        assert payload["config_echo"]["crossfit"]["seed"] == 7

    def test_byte_identical_reruns(self, demo_config):
        path, cfg = demo_config
        out = Path(cfg["output"]["dir"])
        assert run_cli("estimate", "--config", str(path)) == 0
        first = {p.name: p.read_bytes() for p in out.glob("*.json")}
        shutil.rmtree(out)
        assert run_cli("estimate", "--config", str(path)) == 0
        second = {p.name: p.read_bytes() for p in out.glob("*.json")}
        assert first == second

    def test_all_complete_eif_matches_bundled_dr_att_reference(self, tmp_path):
        cfg = load_config(REPO / "demos" / "estimate_complete_config.yaml")
        cfg["data"]["csv"] = str(REPO / "demos" / "demo_data_complete.csv")
        cfg["output"]["dir"] = str(tmp_path / "out")
        cfg["estimators"] = ["IF", "EIF"]
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        assert run_cli("estimate", "--config", str(path)) == 0

        # independent reduction reference: recompute the same out-of-fold
        # mu0/u and plug them into the stand-alone one-step DR-ATT
        schema = parse_schema(cfg["data"]["schema"])
        rule = parse_rule(cfg["data"]["rule"])
        dataset = load_csv(cfg["data"]["csv"], schema)
        spec = parse_nuisance(cfg["nuisance"])
        folds = assign_folds(dataset.n, cfg["crossfit"]["k"], cfg["crossfit"]["seed"])
        nuis = crossfit(dataset, rule, spec, folds, seed=cfg["crossfit"]["seed"])
        reference = dr_att_one_step(
            dataset.column("y"), dataset.column("a"), nuis.mu0, nuis.u
        )
        bundled = json.loads(
            (REPO / "demos" / "dr_att_reference.json").read_text()
        )["dr_att_one_step"]
        assert reference == pytest.approx(bundled, abs=1e-12)
        for name in ("EIF", "IF"):
            payload = json.loads(
                (tmp_path / "out" / f"estimate_{name}.json").read_text()
            )
            assert payload["theta_hat"] == pytest.approx(reference, abs=1e-12)

    def test_missing_nuisance_spec_names_the_nuisance(self, demo_config, capsys):
        path, cfg = demo_config
        cfg["nuisance"]["learners"]["xi"] = None
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        assert run_cli("estimate", "--config", str(path)) == 2
        assert "xi" in capsys.readouterr().err

    def test_missing_csv_is_data_error(self, demo_config):
        path, cfg = demo_config
        cfg["data"]["csv"] = str(Path(cfg["output"]["dir"]) / "nope.csv")
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        assert run_cli("estimate", "--config", str(path)) == 3

    def test_malformed_rule_is_config_error(self, demo_config):
        path, cfg = demo_config
        cfg["data"]["rule"] = {"covariate": "a1c", "op": "between", "value": 5.7}
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        assert run_cli("estimate", "--config", str(path)) == 2


class TestSimulate:
    def make_config(self, tmp_path, **overrides):
        cfg = {
            "dgp": {"n": 500, "seed": 99, "oracle_n": 1_000_000},
            "replications": 2,
            "estimators": [
                {"name": "cc", "kind": "CC"},
                {"name": "iwor", "kind": "IWOR"},
            ],
            "nuisance": {
                "learners": {
                    "default_binary": {"kind": "logistic"},
                    "default_regression": {"kind": "ols"},
                }
            },
            "output": {"dir": str(tmp_path / "sim_out")},
            "workers": 1,
        }
        cfg.update(overrides)
        path = tmp_path / "sim.yaml"
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        return path, cfg

    def test_smoke_and_determinism(self, tmp_path):
        path, cfg = self.make_config(tmp_path)
        assert run_cli("simulate", "--config", str(path)) == 0
        out = Path(cfg["output"]["dir"])
        payload = json.loads((out / "simulation.json").read_text())
        assert "theta_true" in payload and "oracle_n" in payload
        assert set(payload["estimators"]) == {"cc", "iwor"}
        first = (out / "simulation.json").read_bytes()
        shutil.rmtree(out)
        assert run_cli("simulate", "--config", str(path)) == 0
        assert (out / "simulation.json").read_bytes() == first

    def test_invalid_gamma_shape_is_config_error(self, tmp_path, capsys):
        path, _ = self.make_config(
            tmp_path, dgp={"n": 500, "seed": 1, "alpha_shape": -2.0}
        )
        assert run_cli("simulate", "--config", str(path)) == 2

    def test_unknown_estimator_kind_is_config_error(self, tmp_path):
        path, _ = self.make_config(
            tmp_path, estimators=[{"name": "x", "kind": "MAGIC"}]
        )
        assert run_cli("simulate", "--config", str(path)) == 2


class TestOracleCheck:
    def test_shipped_fixtures_pass(self, capsys):
        assert run_cli("oracle-check") == 0
        out = capsys.readouterr().out
        assert "identification equality" in out
        assert "expected-failure ok" in out

    def test_corrupted_fixture_is_data_error(self, tmp_path):
        src = json.loads(
            (REPO / "src" / "attelig" / "fixtures" / "d1.json").read_text()
        )
        for row in src["atoms"]:
            row["prob"] *= 0.9
        bad_dir = tmp_path / "fixtures"
        bad_dir.mkdir()
        (bad_dir / "bad.json").write_text(json.dumps(src))
        assert run_cli("oracle-check", "--fixtures", str(bad_dir)) == 3

    def test_empty_fixture_dir_is_data_error(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run_cli("oracle-check", "--fixtures", str(empty)) == 3


def test_missing_config_file_is_config_error():
    assert run_cli("estimate", "--config", "/nonexistent/cfg.yaml") == 2


def test_json_outputs_validate_against_bundled_schemas(tmp_path, demo_config):
    jsonschema = pytest.importorskip("jsonschema")
    path, cfg = demo_config
    assert run_cli("estimate", "--config", str(path)) == 0
    est_schema = json.loads((REPO / "docs" / "estimate_report.schema.json").read_text())
    for out in Path(cfg["output"]["dir"]).glob("estimate_*.json"):
        jsonschema.validate(json.loads(out.read_text()), est_schema)

    sim_cfg = {
        "dgp": {"n": 500, "seed": 3, "oracle_n": 1_000_000},
        "replications": 2,
        "estimators": [{"name": "cc", "kind": "CC"}],
        "nuisance": {"learners": {"default_binary": {"kind": "logistic"},
                                  "default_regression": {"kind": "ols"}}},
        "output": {"dir": str(tmp_path / "sim")},
        "workers": 1,
    }
    sim_path = tmp_path / "sim.yaml"
    sim_path.write_text(yaml.safe_dump(sim_cfg), encoding="utf-8")
    assert run_cli("simulate", "--config", str(sim_path)) == 0
    sim_schema = json.loads(
        (REPO / "docs" / "simulation_summary.schema.json").read_text()
    )
    jsonschema.validate(
        json.loads((tmp_path / "sim" / "simulation.json").read_text()), sim_schema
    )
