"""Experiment runner: (method, seed, ablation value) sweeps, per-run CSV and JSON
sidecars, the per-method summary table and the capacity ablation table."""

import json
import os
from dataclasses import dataclass, field

import pandas as pd

from services.fedsim import MetricsLog, run_simulation
from services.report import generate_summary_report
from utils.config import METHODS, SimConfig, config_from_mapping, load_config
from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

ABLATION_AXES = ("capacity",)
ABLATION_METRICS = ("total_score", "avg_client_quality", "avg_coalition_quality", "avg_client_utility")
COHORT_METHODS = ("fedavg", "fedavgauc")


@dataclass(frozen=True)
class ExperimentSpec:
    config_path: str | None
    seeds: tuple[int, ...] = ()
    methods: tuple[str, ...] = ()
    output_dir: str = "output"
    rounds: int | None = None
    capacity: int | None = None
    ablation: tuple[str, tuple[int, ...]] | None = None
    report: bool = False

    def __post_init__(self):
        for method in self.methods:
            if method not in METHODS:
                raise ConfigError("method", f"{method!r} is not one of {', '.join(METHODS)}")
        if self.ablation is not None:
            axis, values = self.ablation
            if axis not in ABLATION_AXES:
                raise ConfigError("ablation", f"cannot sweep {axis!r}; supported: {', '.join(ABLATION_AXES)}")
            if not values or any(v <= 0 for v in values):
                raise ConfigError("ablation", "sweep values must be positive")


@dataclass
class ExperimentResult:
    run_files: list[str] = field(default_factory=list)
    summary: pd.DataFrame | None = None
    ablation: pd.DataFrame | None = None
    logs: dict[tuple[str, int, int | None], MetricsLog] = field(default_factory=dict)


def parse_ablation(text: str) -> tuple[str, tuple[int, ...]]:
    """'capacity=6,8,10,15' -> ('capacity', (6, 8, 10, 15))"""
    axis, sep, values = text.partition("=")
    if not sep:
        raise ConfigError("ablation", f"expected <axis>=<v1>,<v2>,..., got {text!r}")
    try:
        parsed = tuple(int(v) for v in values.split(",") if v.strip())
    except ValueError:
        raise ConfigError("ablation", f"sweep values must be integers, got {values!r}") from None
    return axis.strip(), parsed


def run_filename(method: str, seed: int, capacity: int | None = None) -> str:
    suffix = f"_capacity{capacity}" if capacity is not None else ""
    return f"run_{method}_seed{seed}{suffix}"


def base_config(spec: ExperimentSpec) -> SimConfig:
    config = load_config(spec.config_path) if spec.config_path else config_from_mapping({})
    overrides = {}
    if spec.rounds is not None:
        overrides["rounds"] = spec.rounds
    if spec.capacity is not None:
        overrides["capacity"] = spec.capacity
    return config.replace(**overrides) if overrides else config


def _ensure_writable(path: str):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")


def _write_run(log: MetricsLog, config: SimConfig, output_dir: str, capacity: int | None) -> str:
    stem = os.path.join(output_dir, run_filename(log.method, log.seed, capacity))
    log.to_frame().to_csv(stem + ".csv", index=False)
    with open(stem + ".json", "w") as f:
        json.dump({"seed": config.seed, "method": config.method, "config": config.to_dict()}, f,
                  indent=2, sort_keys=True)
    return stem + ".csv"


def _runs_for(config: SimConfig, methods: tuple[str, ...]) -> dict[str, tuple[MetricsLog, SimConfig]]:
    """Run every method for one (seed, ablation value); cohort baselines follow the DualGFL run."""
    logs: dict[str, tuple[MetricsLog, SimConfig]] = {}
    cohort = config.cohort_size
    if cohort is None and any(m in COHORT_METHODS for m in methods):
        reference_config = config.replace(method="dualgfl")
        reference = run_simulation(reference_config)
        if "dualgfl" in methods:
            logs["dualgfl"] = (reference, reference_config)
        cohort = max(1, round(reference.mean_winning_clients()))
        logger.info("seed %d: matched fedavg cohort to %d clients", config.seed, cohort)
    for method in methods:
        if method in logs:
            continue
        run_config = config.replace(method=method)
        if method in COHORT_METHODS:
            run_config = run_config.replace(cohort_size=cohort)
        logs[method] = (run_simulation(run_config), run_config)
    return {m: logs[m] for m in methods}


def summarize(logs: dict[tuple[str, int, int | None], MetricsLog], by_capacity: bool = False) -> pd.DataFrame:
    rows = []
    for (method, seed, capacity), log in logs.items():
        row = {"method": method, "seed": seed, **log.final()}
        if by_capacity:
            row["capacity"] = capacity
        rows.append(row)
    frame = pd.DataFrame(rows)
    keys = ["method", "capacity"] if by_capacity else ["method"]
    grouped = frame.groupby(keys, sort=False)
    summary = grouped.mean(numeric_only=True).drop(columns="seed").reset_index()
    summary.insert(len(keys), "n_seeds", grouped.size().values)
    # gap to the most accurate method at the same capacity; 0 for the best one
    best = (summary.groupby("capacity")["test_accuracy"].transform("max") if by_capacity
            else summary["test_accuracy"].max())
    summary["accuracy_gap"] = summary["test_accuracy"] - best
    for _, row in summary[summary["accuracy_gap"] < 0].iterrows():
        logger.info("%s trails the most accurate method by %.4f test accuracy", row["method"], -row["accuracy_gap"])
    return summary


def ablation_table(summary: pd.DataFrame) -> pd.DataFrame:
    """Seed-mean final metrics per capacity, raw and divided by the per-method max magnitude."""
    rows = []
    for method, block in summary.groupby("method", sort=False):
        block = block.sort_values("capacity")
        out = pd.DataFrame({"method": method, "capacity": block["capacity"].values})
        for metric in ABLATION_METRICS:
            values = block[f"cum_{metric}"].values
            scale = abs(values).max()
            out[metric] = values
            out[f"{metric}_normalized"] = values / scale if scale > 0 else 0.0 * values
        rows.append(out)
        peak = int(block["cum_total_score"].values.argmax())
        interior = 0 < peak < len(block) - 1
        logger.info("%s: total score peaks at capacity %s (%s)", method, block["capacity"].values[peak],
                    "interior" if interior else "boundary")
    return pd.concat(rows, ignore_index=True)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    base = base_config(spec)
    seeds = spec.seeds or (base.seed,)
    methods = spec.methods or (base.method,)
    capacities = spec.ablation[1] if spec.ablation else (None,)
    _ensure_writable(spec.output_dir)

    result = ExperimentResult()
    for capacity in capacities:
        for seed in seeds:
            overrides = {"seed": seed} if capacity is None else {"seed": seed, "capacity": capacity}
            config = base.replace(**overrides)
            for method, (log, run_config) in _runs_for(config, methods).items():
                result.run_files.append(_write_run(log, run_config, spec.output_dir, capacity))
                result.logs[(method, seed, capacity)] = log

    by_capacity = spec.ablation is not None
    result.summary = summarize(result.logs, by_capacity=by_capacity)
    result.summary.to_csv(os.path.join(spec.output_dir, "summary.csv"), index=False)
    if by_capacity:
        result.ablation = ablation_table(result.summary)
        result.ablation.to_csv(os.path.join(spec.output_dir, "ablation_capacity.csv"), index=False)
    if spec.report:
        generate_summary_report(result.summary, os.path.join(spec.output_dir, "summary.pdf"), seeds,
                                result.ablation)
    logger.info("Wrote %d run files to %s", len(result.run_files), spec.output_dir)
    return result
