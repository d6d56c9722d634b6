import json

import pytest

from app.cli import main, summary_path
from app.models.pydantic_models import PolynomialTerm, StructureDefinition
from app.services.experiment_service import ExperimentService


def read_records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def write_config(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def shear(project=True):
    return StructureDefinition(
        description="diagonal shear",
        a_terms=[PolynomialTerm(exponents=(1, 0, 0, 0), matrix=((1.0, 0.0), (0.0, -1.0)), coefficient=0.5)],
        project=project,
    ).model_dump(mode="json")


def test_completeness_run(tmp_path):
    out = tmp_path / "completeness.jsonl"
    assert main(["completeness", "--out", str(out)]) == 0
    records = read_records(out)
    assert len(records) == 3
    assert all(r["status"] == "ok" for r in records)
    assert [r["inputs"]["delta"] for r in records] == [1e-3, 1e-6, 1e-9]
    lengths = [r["outputs"]["length"] for r in records]
    assert lengths == sorted(lengths)

    summary = json.loads(summary_path(out).read_text())
    assert summary["exit_code"] == 0
    assert summary["record_count"] == 3
    assert summary["series"]["delta"] == [1e-3, 1e-6, 1e-9]


def test_runs_are_byte_identical(tmp_path):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["completeness", "--out", str(first)]) == 0
    assert main(["completeness", "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert summary_path(first).read_bytes() == summary_path(second).read_bytes()


def test_validate_reports_projection(tmp_path):
    config = write_config(tmp_path, {"structure": shear()})
    out = tmp_path / "validate.jsonl"
    assert main(["validate", "--config", str(config), "--out", str(out)]) == 0
    (record,) = read_records(out)
    assert record["outputs"]["accepted"] is True
    assert record["outputs"]["projected"] is True
    assert record["mu_bound"] > 0


def test_validate_needs_a_structure(tmp_path):
    out = tmp_path / "validate.jsonl"
    assert main(["validate", "--out", str(out)]) == 2
    (record,) = read_records(out)
    assert record["status"] == "failed"
    assert record["outputs"]["error"] == "SchemaError"
    summary = json.loads(summary_path(out).read_text())
    assert summary["status"] == "failed"
    assert summary["exit_code"] == 2


def test_rejected_structure_exits_with_schema_code(tmp_path):
    config = write_config(tmp_path, {"structure": shear(project=False)})
    out = tmp_path / "rejected.jsonl"
    assert main(["validate", "--config", str(config), "--out", str(out)]) == 2
    (record,) = read_records(out)
    assert record["outputs"]["error"] == "StructureRejectedError"


@pytest.mark.parametrize(
    "payload",
    [
        {"unknown_field": 1},
        {"seed": -1},
        {"points": [{"point": [[1.5, 0.0], [0.0, 0.0]]}]},
    ],
)
def test_malformed_config_exits_with_schema_code(tmp_path, payload):
    config = write_config(tmp_path, payload)
    out = tmp_path / "bad.jsonl"
    assert main(["metric", "--config", str(config), "--out", str(out)]) == 2
    summary = json.loads(summary_path(out).read_text())
    assert summary["diagnostics"]["error"] == "SchemaError"


def test_missing_config_file(tmp_path):
    out = tmp_path / "missing.jsonl"
    assert main(["completeness", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2


def test_sampling_commands_need_a_seed(tmp_path):
    out = tmp_path / "scan.jsonl"
    assert main(["schwarz-scan", "--out", str(out)]) == 2


def test_seed_override_reaches_the_records(tmp_path):
    config = write_config(tmp_path, {"n_samples": 4})
    out = tmp_path / "scan.jsonl"
    code = main(["schwarz-scan", "--config", str(config), "--seed", "5", "--resolution", "16", "--out", str(out)])
    assert code == 0
    records = read_records(out)
    assert len(records) == 4
    assert all(r["seed"] == 5 and r["resolution"] == 16 for r in records)


def test_operators_selftest(tmp_path):
    out = tmp_path / "ops.jsonl"
    assert main(["operators-selftest", "--resolution", "32", "--out", str(out)]) == 0
    records = read_records(out)
    names = [r["inputs"]["check"] for r in records]
    assert "cg_one_is_zbar" in names
    assert "cz_z_is_zbar" in names
    exact = {r["inputs"]["check"]: r["outputs"] for r in records}
    assert exact["cg_one_is_zbar"]["passed"]
    assert exact["cz_one_is_zero"]["passed"]


@pytest.mark.parametrize("flag,value", [("--seed", "-1"), ("--epsilon", "-0.5")])
def test_invalid_overrides_exit_with_schema_code(tmp_path, flag, value):
    out = tmp_path / "run.jsonl"
    assert main(["gauge-scan", "--seed", "1", flag, value, "--out", str(out)]) == 2
    (record,) = read_records(out)
    assert record["outputs"]["error"] == "SchemaError"


def test_solve_disk_run(tmp_path):
    config = write_config(
        tmp_path,
        {"structure": shear(), "epsilon": 0.05, "disk": {"u": [[0.1, 0.0], [0.4, 0.0]], "v": [[0.0, 0.0], [0.3, 0.0]]}},
    )
    out = tmp_path / "solve.jsonl"
    assert main(["solve-disk", "--config", str(config), "--resolution", "16", "--out", str(out)]) == 0
    (record,) = read_records(out)
    assert record["epsilon"] == pytest.approx(0.05)
    assert 0 < record["mu_bound"] < 0.2
    assert record["outputs"]["residual_u"] <= 1e-6
    assert record["outputs"]["contraction"] > 0
    assert record["outputs"]["deviation"] <= 0.05
    assert record["outputs"]["localized_residual"] >= 0


def test_out_of_regime_record_carries_the_structure(tmp_path):
    config = write_config(tmp_path, {"structure": shear(), "solver": {"mu_bound_limit": 1e-3}})
    out = tmp_path / "solve.jsonl"
    code = main(["solve-disk", "--config", str(config), "--epsilon", "0.9", "--resolution", "16", "--out", str(out)])
    assert code == 3
    (record,) = read_records(out)
    assert record["status"] == "failed"
    assert record["outputs"]["error"] == "OutOfRegimeError"
    assert record["epsilon"] == pytest.approx(0.9)
    assert record["resolution"] == 16
    assert record["mu_bound"] == pytest.approx(record["outputs"]["diagnostics"]["mu_bound"])
    assert record["mu_bound"] > 1e-3


def test_metric_run(tmp_path):
    config = write_config(tmp_path, {"points": [{"point": [[0.3, 0.0], [0.0, 0.0]]}]})
    out = tmp_path / "metric.jsonl"
    assert main(["metric", "--config", str(config), "--resolution", "16", "--out", str(out)]) == 0
    (record,) = read_records(out)
    assert record["status"] == "ok"
    assert record["outputs"]["lower_bound"] > 0


def test_linking_run(tmp_path):
    out = tmp_path / "linking.jsonl"
    assert main(["linking", "--resolution", "16", "--out", str(out)]) == 0
    records = read_records(out)
    assert len(records) == 3
    assert all(r["outputs"]["all_equal"] for r in records)


def test_gauge_scan_run(tmp_path):
    config = write_config(tmp_path, {"n_samples": 8, "seed": 2})
    out = tmp_path / "gauge.jsonl"
    assert main(["gauge-scan", "--config", str(config), "--resolution", "16", "--out", str(out)]) == 0
    records = read_records(out)
    assert len(records) == 8
    assert all(r["status"] == "ok" and r["seed"] == 2 for r in records)


def test_unexpected_errors_exit_with_numerical_code(tmp_path, monkeypatch):
    def broken(self, command, config):
        raise RuntimeError("boom")

    monkeypatch.setattr(ExperimentService, "run", broken)
    out = tmp_path / "broken.jsonl"
    assert main(["completeness", "--out", str(out)]) == 4
    (record,) = read_records(out)
    assert record["outputs"]["error"] == "NumericalFailureError"
    assert "RuntimeError" in record["outputs"]["message"]
    assert record["epsilon"] == pytest.approx(1.0)
