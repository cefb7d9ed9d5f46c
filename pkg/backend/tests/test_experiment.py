import json
import os
from types import SimpleNamespace

import pandas as pd
import pytest
import yaml

import cli
from conftest import SMALL
from services.experiment import ExperimentSpec, parse_ablation, run_experiment, run_filename, summarize
from utils.config import METHODS
from utils.errors import ConfigError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


def test_parse_ablation():
    assert parse_ablation("capacity=6,8,10") == ("capacity", (6, 8, 10))
    with pytest.raises(ConfigError):
        parse_ablation("capacity")
    with pytest.raises(ConfigError):
        parse_ablation("capacity=a,b")


def test_spec_rejects_unknown_axis_and_method(config_file):
    with pytest.raises(ConfigError):
        ExperimentSpec(config_file, ablation=("rounds", (1, 2)))
    with pytest.raises(ConfigError):
        ExperimentSpec(config_file, methods=("fedprox",))


def test_two_methods_three_seeds(config_file, tmp_path):
    out = tmp_path / "out"
    result = run_experiment(ExperimentSpec(config_file, seeds=(0, 1, 2), methods=("dualgfl", "fedavghed"),
                                           output_dir=str(out)))
    csvs = sorted(f for f in os.listdir(out) if f.startswith("run_") and f.endswith(".csv"))
    assert len(csvs) == 6
    assert (out / "summary.csv").exists()
    assert (out / (run_filename("fedavghed", 2) + ".json")).exists()

    summary = pd.read_csv(out / "summary.csv")
    assert list(summary["method"]) == ["dualgfl", "fedavghed"]
    assert list(summary["n_seeds"]) == [3, 3]
    for method in ("dualgfl", "fedavghed"):
        finals = [pd.read_csv(out / f"{run_filename(method, s)}.csv").iloc[-1] for s in (0, 1, 2)]
        row = summary[summary["method"] == method].iloc[0]
        for column in ("cum_total_score", "cum_avg_client_utility", "test_accuracy"):
            assert row[column] == pytest.approx(sum(f[column] for f in finals) / 3, rel=1e-9, abs=1e-12)
    assert len(result.run_files) == 6
    assert summary["accuracy_gap"].max() == 0.0
    expected_gap = summary["test_accuracy"] - summary["test_accuracy"].max()
    assert summary["accuracy_gap"].tolist() == pytest.approx(expected_gap.tolist(), abs=1e-12)


def test_reruns_are_byte_identical(config_file, tmp_path):
    for name in ("a", "b"):
        run_experiment(ExperimentSpec(config_file, seeds=(3,), methods=("dualgflstat",),
                                      output_dir=str(tmp_path / name)))
    for name in ("run_dualgflstat_seed3.csv", "run_dualgflstat_seed3.json", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sidecar_records_config(config_file, tmp_path):
    run_experiment(ExperimentSpec(config_file, seeds=(5,), methods=("fedavghed",), output_dir=str(tmp_path)))
    sidecar = json.loads((tmp_path / "run_fedavghed_seed5.json").read_text())
    assert sidecar["seed"] == 5 and sidecar["method"] == "fedavghed"
    assert sidecar["config"]["n_clients"] == SMALL["n_clients"]


def test_fedavg_cohort_matches_dualgfl_participation(config_file, tmp_path):
    result = run_experiment(ExperimentSpec(config_file, seeds=(0,), methods=("dualgfl", "fedavg"),
                                           output_dir=str(tmp_path)))
    reference = result.logs[("dualgfl", 0, None)]
    expected = max(1, round(reference.mean_winning_clients()))
    sidecar = json.loads((tmp_path / "run_fedavg_seed0.json").read_text())
    assert sidecar["config"]["cohort_size"] == expected
    assert all(r.n_winning_clients == expected for r in result.logs[("fedavg", 0, None)].records)


def test_capacity_ablation(config_file, tmp_path):
    result = run_experiment(ExperimentSpec(config_file, seeds=(0, 1), methods=("dualgfl",),
                                           output_dir=str(tmp_path), ablation=("capacity", (4, 6))))
    assert (tmp_path / "run_dualgfl_seed1_capacity6.csv").exists()
    table = pd.read_csv(tmp_path / "ablation_capacity.csv")
    assert list(table["capacity"]) == [4, 6]
    assert "total_score_normalized" in table.columns
    assert (table["total_score_normalized"].abs() <= 1.0 + 1e-12).all()
    assert list(result.summary["n_seeds"]) == [2, 2]


def test_report_is_rendered(config_file, tmp_path):
    run_experiment(ExperimentSpec(config_file, seeds=(0,), methods=("dualgfl",), output_dir=str(tmp_path),
                                  report=True))
    assert (tmp_path / "summary.pdf").read_bytes().startswith(b"%PDF")


def test_cli_success(config_file, tmp_path):
    code = cli.main(["--config", config_file, "--seed", "0", "--method", "fedavgauc", "--rounds", "2",
                     "--out", str(tmp_path)])
    assert code == 0
    assert len(pd.read_csv(tmp_path / "run_fedavgauc_seed0.csv")) == 2


def test_cli_config_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**SMALL, "winners_per_round": 9}))
    assert cli.main(["--config", str(bad), "--out", str(tmp_path / "out")]) == 1


def test_cli_runtime_error(config_file, tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    assert cli.main(["--config", config_file, "--out", str(blocker)]) == 2


def test_cli_unknown_method_is_a_config_error(config_file, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["--config", config_file, "--method", "fedprox", "--out", str(out)]) == 1
    assert not out.exists()


def test_summary_reports_accuracy_gap_per_capacity():
    def finished(accuracy):
        return SimpleNamespace(final=lambda: {"cum_total_score": 1.0, "test_accuracy": accuracy})

    logs = {("dualgfl", 0, 6): finished(0.80), ("fedavg", 0, 6): finished(0.85),
            ("dualgfl", 0, 8): finished(0.90), ("fedavg", 0, 8): finished(0.84)}
    summary = summarize(logs, by_capacity=True).set_index(["method", "capacity"])["accuracy_gap"]
    assert summary[("dualgfl", 6)] == pytest.approx(-0.05)
    assert summary[("fedavg", 6)] == 0.0
    assert summary[("dualgfl", 8)] == 0.0
    assert summary[("fedavg", 8)] == pytest.approx(-0.06)


@pytest.mark.slow
def test_benchmark_method_ordering(tmp_path):
    result = run_experiment(ExperimentSpec(None, seeds=tuple(range(5)), methods=METHODS, output_dir=str(tmp_path)))
    summary = result.summary.set_index("method")
    assert (summary["n_seeds"] == 5).all()
    total = summary["cum_total_score"]
    assert total["dualgfl"] > total["dualgflstat"] > total["fedavghed"]
    utility = summary["cum_avg_client_utility"]
    for method in ("dualgflstat", "fedavghed", "fedavg", "fedavgauc"):
        assert utility["dualgfl"] > utility[method], method


@pytest.mark.slow
def test_capacity_ablation_direction(tmp_path):
    result = run_experiment(ExperimentSpec(None, seeds=tuple(range(5)), methods=("dualgfl",),
                                           output_dir=str(tmp_path), ablation=("capacity", (6, 8, 10, 15))))
    table = result.ablation
    assert list(table["capacity"]) == [6, 8, 10, 15]
    coalition = list(table["avg_coalition_quality"])
    client = list(table["avg_client_quality"])
    assert all(a <= b for a, b in zip(coalition, coalition[1:])), coalition
    assert all(a >= b for a, b in zip(client, client[1:])), client
