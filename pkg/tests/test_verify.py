import json
import math
import os

import numpy as np
import pytest

import main
from core.config import EXPERIMENTS, ExperimentConfig, GridSpec
from core.experiments import EXPERIMENT_REGISTRY, ExperimentContext, Outcome, anchor_for, coverage_check
from core.file_system import FileSystem
from core.orchestrator import Orchestrator
from core.report import (CSV_COLUMNS, CheckRecord, VerificationReport, read_report_csv, report_from_json,
                         report_to_csv, report_to_json)
from core.state import OperationLedger, RunState, traced
from core.suites import a_suite, f_suite
from sio.errors import ConfigError, InvalidArgumentError, OutputPathError

SMALL = GridSpec((-2.0, -2.0), (2.0, 2.0), (17, 17))


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_default_config_is_valid():
    config = ExperimentConfig()
    assert config.experiment == "all" and config.kernel == "CZ2"
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig.from_dict({"colour": "blue"})
    with pytest.raises(ConfigError, match="spacing"):
        ExperimentConfig.from_dict({"grid": {"spacing": 0.1}})


@pytest.mark.parametrize("data", [
    {"experiment": "nope"},
    {"p": 1.0},
    {"eps_multipliers": [1.0, 4.0]},
    {"max_degree": 1},
    {"radius_ratio": 1.0},
    {"kernel": "RIESZ3"},
    {"weight": "cubic"},
    {"exponents": [1.0, 1.0, 1.0]},
    {"p": "two"},
])
def test_config_validation(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_config_load(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"experiment": "weights", "exponents": [1, 2], "kernel": "MIX12", "seed": 7}))
    config = ExperimentConfig.load(str(good))
    assert config.exponents == (1.0, 2.0) and config.seed == 7

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        ExperimentConfig.load(str(bad))
    listed = tmp_path / "list.json"
    listed.write_text("[]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(listed))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(tmp_path / "missing.json"))


def test_shipped_configs_load():
    root = os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs")
    for name in sorted(os.listdir(root)):
        ExperimentConfig.load(os.path.join(root, name))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _report():
    records = [
        CheckRecord("a", "weights", "anchor, with comma", {"c": math.inf, "d": 1.5}, [1.0, math.nan], True, 0.25,
                    "ok"),
        CheckRecord("b", "weights", "second", {}, [], False, 0.0, 'quoted "detail"'),
    ]
    return VerificationReport({"experiment": "weights"}, records, {"python": "3"}, {"uninvoked": []})


def test_report_json_roundtrip_keeps_non_finite_values():
    report = _report()
    text = report_to_json(report)
    data = json.loads(text)
    assert data["passed"] is False
    assert data["records"][0]["constants"]["c"] == "inf"
    back = report_from_json(text)
    assert math.isinf(back.records[0].constants["c"])
    assert math.isnan(back.records[0].ratios[1])
    assert [r.check_id for r in back.failed()] == ["b"]


def test_report_csv_roundtrip():
    report = _report()
    rows = read_report_csv(report_to_csv(report))
    assert [r.check_id for r in rows] == ["a", "b"]
    assert rows[0].anchor == "anchor, with comma" and rows[1].detail == 'quoted "detail"'
    assert math.isinf(rows[0].constants["c"]) and rows[0].passed and not rows[1].passed
    with pytest.raises(ValueError):
        read_report_csv("x,y\n1,2\n")


def test_empty_report_csv_is_header_only():
    text = report_to_csv(VerificationReport({}))
    assert text.splitlines() == [",".join(CSV_COLUMNS)]
    assert read_report_csv(text) == []


# ---------------------------------------------------------------------------
# File system and state
# ---------------------------------------------------------------------------

def test_file_system_stays_in_root(tmp_path):
    fs = FileSystem(str(tmp_path / "reports"))
    for path in ("../escape.json", "/etc/passwd", "../reports_evil/x.json"):
        with pytest.raises(OutputPathError):
            fs.write_file(path, "x")
    written = fs.write_file("sub/r.json", "{}")
    assert fs.read_file("sub/r.json") == "{}"
    assert fs.list_dir("sub") == ["r.json"]
    again = fs.unique_path("sub/r.json")
    assert again != written and again.endswith(".json")
    with pytest.raises(FileNotFoundError):
        fs.read_file("nothing.json")


def test_traced_marks_operations():
    @traced("test.op")
    def op(x):
        return x + 1

    assert "test.op" in OperationLedger.uninvoked()
    assert op(1) == 2
    assert "test.op" in OperationLedger.invoked()
    OperationLedger._registered.discard("test.op")


def test_run_state_tallies_checks():
    RunState.begin_run(["weights", "hormander"])
    for i in range(8):
        RunState.start_check("weights", f"check-{i}")
        RunState.finish_check("weights", f"check-{i}", passed=i != 3, runtime_s=0.5, errored=i == 3)
    RunState.start_check("hormander", "integral-tail")
    snap = RunState.get_snapshot()
    assert snap["phase"] == "experiments"
    assert snap["experiment"] == "hormander" and snap["check"] == "integral-tail"
    assert snap["experiments"]["weights"] == {"checks": 8, "passed": 7, "failed": 1, "errors": 1, "runtime_s": 4.0}
    assert snap["experiments"]["hormander"]["checks"] == 0
    assert snap["totals"]["failed"] == 1
    assert snap["recent"][-1] == "PASS weights/check-7" and len(snap["recent"]) == 5
    assert RunState.tally("weights").passed == 7
    RunState.reset()
    assert RunState.get_snapshot()["experiments"] == {}


# ---------------------------------------------------------------------------
# Suites and experiments
# ---------------------------------------------------------------------------

def test_suites(small_grid, aniso2):
    fs = f_suite(small_grid, aniso2, seed=3)
    assert len(fs) == 12 and len({name for name, _ in fs}) == 12
    again = f_suite(small_grid, aniso2, seed=3)
    assert all((a.values == b.values).all() for (_, a), (_, b) in zip(fs, again))
    assert [name for name, _ in a_suite(small_grid, aniso2)] == ["const", "sin(x1)", "clamp(x1)", "log(rho)"]


def test_registry_covers_every_experiment():
    assert tuple(EXPERIMENT_REGISTRY) == EXPERIMENTS


def test_check_records_library_errors():
    ctx = ExperimentContext(ExperimentConfig(grid=SMALL))

    def boom():
        raise InvalidArgumentError("bad radius")

    record = ctx.check("weights", "boom", "errors become failures", boom)
    assert not record.passed and "bad radius" in record.detail
    ok = ctx.check("weights", "fine", "passes", lambda: Outcome(True, {"c": 1}))
    assert ok.passed and ctx.records == [record, ok]


def test_check_records_unexpected_errors():
    ctx = ExperimentContext(ExperimentConfig(grid=SMALL))

    def shape_bug():
        return np.dot(np.ones(3), np.ones(4))

    record = ctx.check("metric-axioms", "polar-jacobian[a=1,2]", "sphere integral", shape_bug)
    assert not record.passed
    assert record.detail.startswith("sphere integral: ValueError")
    assert RunState.tally("metric-axioms").errors == 1


def test_check_anchor_labels():
    assert anchor_for("hormander", "integral-uniformity[a=1,2]") == "hormander:integral"
    assert anchor_for("weights", "power_log(alpha/2)") == "weight:doubling-and-integral"
    assert anchor_for("weights", "power(alpha)") == "weight:doubling-and-integral"
    assert anchor_for("series-reconstruction", "constant-transform[H(1,2)=CZ2]") == "operator:harmonic-series"
    assert anchor_for("weights", "custom") == "weights:custom"
    ctx = ExperimentContext(ExperimentConfig(grid=SMALL))
    record = ctx.check("weights", "sigma-variant", "integral condition with t^(sigma alpha + 1)",
                       lambda: Outcome(True, detail="sigma=0.5"))
    assert record.anchor == "weight:sigma-integral"
    assert record.detail == "integral condition with t^(sigma alpha + 1): sigma=0.5"
    assert ctx.check("weights", "x", "claim", lambda: Outcome(True), anchor="custom:label").anchor == "custom:label"


def test_unexpected_error_still_writes_the_report(tmp_path, monkeypatch):
    def broken(ctx):
        ctx.check("weights", "power(alpha/2)", "power weights", lambda: 1 / 0)
        ctx.check("weights", "configured[const]", "the configured weight", lambda: Outcome(True))

    monkeypatch.setitem(EXPERIMENT_REGISTRY, "weights", ("broken weights", broken))
    report, path = Orchestrator(str(tmp_path)).run(ExperimentConfig(experiment="weights", grid=SMALL))
    assert os.path.exists(path)
    assert [r.passed for r in report.records] == [False, True]
    assert "ZeroDivisionError" in report.records[0].detail
    code = main.main(["run", "--experiment", "weights", "--output-dir", str(tmp_path)])
    assert code == main.EXIT_FAILED


def test_eps_ladder_is_trimmed_to_the_box():
    ctx = ExperimentContext(ExperimentConfig(grid=SMALL, eps_multipliers=(2.0, 4.0, 16.0)))
    assert ctx.eps_ladder(ctx.grid, ctx.profile) == [0.5, 1.0]


def test_coverage_check_lists_missing_operations():
    ctx = ExperimentContext(ExperimentConfig(grid=SMALL))
    coverage_check(ctx)
    record = ctx.records[-1]
    assert not record.passed and "metric.rho" in record.detail


def test_weights_experiment_passes(tmp_path):
    config = ExperimentConfig(experiment="weights", grid=SMALL, output="weights.json")
    report, path = Orchestrator(str(tmp_path)).run(config)
    assert report.passed and len(report.records) >= 4
    assert os.path.exists(path) and os.path.exists(path[:-len(".json")] + ".csv")
    data = json.loads(open(path, encoding="utf-8").read())
    assert data["config"]["experiment"] == "weights"
    assert "spaces.check_weight" in data["coverage"]["invoked"]
    again, second = Orchestrator(str(tmp_path)).run(config)
    assert second != path
    assert [(r.check_id, r.passed, r.constants) for r in again.records] == \
        [(r.check_id, r.passed, r.constants) for r in report.records]


def test_metric_axioms_pass(tmp_path):
    config = ExperimentConfig(experiment="metric-axioms", grid=SMALL)
    report, _ = Orchestrator(str(tmp_path)).run(config)
    # isotropic plus the (1, 2) companion profile
    assert len(report.records) == 10
    assert report.passed, [r.detail for r in report.failed()]


@pytest.mark.slow
def test_full_run_covers_every_operation(tmp_path):
    report, _ = Orchestrator(str(tmp_path)).run(ExperimentConfig(output="all.json"))
    assert report.coverage["uninvoked"] == []
    assert report.passed, [f"{r.experiment}/{r.check_id}: {r.detail}" for r in report.failed()]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_slugify():
    assert main.slugify("CZ2 on the fine grid!") == "cz2_on_the_fine_grid"
    assert main.slugify("  --  ") == ""


def test_cli_list_experiments(capsys):
    assert main.main(["list-experiments"]) == main.EXIT_OK
    out = capsys.readouterr().out
    assert all(name in out for name in EXPERIMENTS)


def test_cli_validate_kernel(capsys):
    code = main.main(["validate-kernel", "--name", "CZ2", "--seed", "1"])
    data = json.loads(capsys.readouterr().out)
    assert data["kernel"] == "CZ2" and data["max_order_checked"] >= 1
    assert code == (main.EXIT_OK if data["passed"] else main.EXIT_FAILED)


def test_cli_run_with_name(tmp_path, capsys):
    code = main.main(["run", "--experiment", "weights", "--name", "Weights: first pass",
                      "--output-dir", str(tmp_path)])
    assert code == main.EXIT_OK
    assert (tmp_path / "weights_first_pass.json").exists()
    assert "passed" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kernel": "NOPE"}))
    assert main.main(["run", "--config", str(bad), "--output-dir", str(tmp_path)]) == main.EXIT_ERROR
    assert main.main(["run", "--name", "!!!", "--output-dir", str(tmp_path)]) == main.EXIT_ERROR
    assert main.main(["run", "--name", "x" * 201, "--output-dir", str(tmp_path)]) == main.EXIT_ERROR
    assert "Error" in capsys.readouterr().out
