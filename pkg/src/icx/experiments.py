"""Experiment runners: benchmark batched effect curves, compare Shapley
retraining routes on an error-per-token basis, and evaluate data-value-based
context selection. Each runner is deterministic given (config, seeds), up to
wall-clock fields, and emits flat records for plotting."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .cost import CostLedger, token_cost
from .dataset import Dataset, ObservationSubset, restrict_observations
from .effects import (
    GridStrategy,
    ale,
    batched_vs_naive_token_costs,
    grid_for_feature,
    ice,
    naive_pd,
    pd,
)
from .importance import loco, sage
from .io import (
    attribution_json,
    attribution_rows,
    curve_json,
    curve_rows,
    data_value_rows,
    ensure_dir,
    importance_rows,
    load_csv,
    selection_json,
    selection_mask_rows,
    write_csv,
    write_json,
)
from .predictor import Predictor, ReferencePredictor
from .risk import RiskKind, auc_score
from .rng import substream
from .shapley import (
    RetrainMode,
    exact_shapley_matrix,
    kernel_shap,
    shap_error_metric,
)
from .synth import SynthSpec, split_rows, synth_generate, take_rows
from .valuation import (
    data_shapley_context,
    default_size_min,
    loo,
    sensitivity_data_values,
    sensitivity_feature_effects,
)

_STREAM_SKETCH = 200
_STREAM_SPLIT = 201


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


@dataclass(frozen=True)
class BackendConfig:
    """Which predictor backend runners should instantiate."""

    kind: str = "reference"
    bandwidth: float = 1.0
    command: tuple[str, ...] | None = None

    def make(self, ledger: CostLedger | None = None) -> Predictor:
        if self.kind == "reference":
            return ReferencePredictor(bandwidth=self.bandwidth, ledger=ledger)
        if self.kind == "external":
            if not self.command:
                raise ConfigError("external backend needs a command")
            from .wire import ExternalPredictor

            return ExternalPredictor(self.command, ledger=ledger)
        raise ConfigError(f"unknown backend {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Shared configuration surface for all runners; runners validate the
    subset of fields they use."""

    experiment: str = "explain"
    seeds: tuple[int, ...] = (0,)
    backend: BackendConfig = field(default_factory=BackendConfig)
    risk: RiskKind = RiskKind.LOG_LOSS
    out_dir: str = "icx-out"
    fmt: str = "csv"
    # dataset source: CSV file, or a synthetic task
    csv_path: str | None = None
    label_column: str | None = None
    task: str = "gaussian_clusters"
    n: int = 320
    p: int = 6
    noise_rate: float = 0.0
    # method parameters
    feature_index: int = 0
    grid_sizes: tuple[int, ...] = (4, 16, 64)
    grid_size: int = 8
    repetitions: int = 5
    m_grid: tuple[int, ...] = (7, 10, 14, 20, 28, 40, 62)
    l_grid: tuple[int, ...] = (1, 2, 4, 8)
    shap_m: int = 64
    n_train: int = 256
    n_inf: int = 128
    n_sub: int = 32
    size_min: int | None = None
    n_val: int = 64
    n_test: int = 128
    methods: tuple[str, ...] = ("ice", "pd", "ale", "shap", "loco", "sage", "loo")

    def validate_counts(self) -> None:
        counts = {
            "n": self.n, "p": self.p, "grid_size": self.grid_size,
            "repetitions": self.repetitions, "n_train": self.n_train,
            "n_inf": self.n_inf, "n_sub": self.n_sub, "n_val": self.n_val,
            "n_test": self.n_test, "shap_m": self.shap_m,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")


@dataclass(frozen=True)
class ResultRecord:
    """One emitted measurement: experiment id, seed, config echo, metrics."""

    experiment: str
    seed: int
    config: dict
    metrics: dict


def _source_dataset(config: ExperimentConfig, seed: int, n: int | None = None) -> Dataset:
    if config.csv_path is not None:
        if not config.label_column:
            raise ConfigError("CSV ingestion needs a label column")
        return load_csv(config.csv_path, config.label_column)
    spec = SynthSpec(
        n=n if n is not None else config.n,
        p=config.p,
        task=config.task,
        noise_rate=config.noise_rate,
        seed=seed,
    )
    return synth_generate(spec)


# -- batched vs naive effect-curve benchmark -----------------------------------


def _median_time_ms(fn, repetitions: int) -> tuple[float, list[float], object]:
    samples = []
    result = None
    for _ in range(repetitions):
        start = time.perf_counter_ns()
        result = fn()
        samples.append((time.perf_counter_ns() - start) / 1e6)
    return statistics.median(samples), samples, result


def run_pd_runtime(config: ExperimentConfig) -> list[ResultRecord]:
    """Wall-clock and ledger comparison of one-call vs per-grid-point PD.

    Splits each dataset 80/20 into context and inference rows, then times
    both implementations over the grid-size sweep (monotonic clock, median
    of ``repetitions``, raw samples kept). Output equivalence within 1e-12
    is asserted on every configuration.
    """
    config.validate_counts()
    records = []
    for seed in config.seeds:
        data = _source_dataset(config, seed)
        n_train = int(round(data.n_rows * 0.8))
        train_idx, inf_idx = split_rows(data.n_rows, (n_train, data.n_rows - n_train), seed)
        train = take_rows(data, train_idx)
        inference = take_rows(data, inf_idx).features
        for G in config.grid_sizes:
            grid = grid_for_feature(train, config.feature_index, G, GridStrategy.QUANTILE)
            ledger_batched = CostLedger()
            predictor = config.backend.make(ledger_batched)
            median_b, samples_b, curve_b = _median_time_ms(
                lambda: pd(predictor, train, inference, grid), config.repetitions
            )
            ledger_naive = CostLedger()
            predictor_naive = config.backend.make(ledger_naive)
            median_n, samples_n, curve_n = _median_time_ms(
                lambda: naive_pd(predictor_naive, train, inference, grid), config.repetitions
            )
            gap = float(np.max(np.abs(curve_b.values - curve_n.values)))
            if gap > 1e-12:
                raise RuntimeError(f"batched/naive PD disagree by {gap}")
            batched_cost, naive_cost = batched_vs_naive_token_costs(
                train.n_rows, inference.shape[0], grid.size
            )
            base = {
                "n": data.n_rows, "p": data.n_features, "n_train": train.n_rows,
                "n_inf": inference.shape[0], "grid_size": grid.size,
                "feature_index": config.feature_index,
            }
            records.append(ResultRecord(
                "pd_runtime", seed, dict(base, variant="batched"),
                {
                    "median_runtime_ms": median_b, "runtime_samples_ms": samples_b,
                    "token_connections": ledger_batched.token_connections // config.repetitions,
                    "evaluation_calls": ledger_batched.evaluation_calls // config.repetitions,
                    "token_connections_model": batched_cost,
                    "max_abs_diff": gap,
                },
            ))
            records.append(ResultRecord(
                "pd_runtime", seed, dict(base, variant="naive"),
                {
                    "median_runtime_ms": median_n, "runtime_samples_ms": samples_n,
                    "token_connections": ledger_naive.token_connections // config.repetitions,
                    "evaluation_calls": ledger_naive.evaluation_calls // config.repetitions,
                    "token_connections_model": naive_cost,
                    "max_abs_diff": gap,
                },
            ))
    return records


def _emit_json_mirror(path_csv: str, header: list[str], rows: list[list]) -> None:
    payload = [dict(zip(header, row)) for row in rows]
    write_json(path_csv[:-4] + ".json", payload)


def emit_pd_runtime(records: list[ResultRecord], out_dir: str, fmt: str = "csv") -> str:
    ensure_dir(out_dir)
    header = ["experiment", "seed", "n", "p", "n_train", "n_inf", "grid_size", "variant",
              "token_connections", "token_connections_model", "evaluation_calls",
              "max_abs_diff", "median_runtime_ms", "runtime_samples_ms"]
    rows = []
    for rec in sorted(records, key=lambda r: (r.seed, r.config["grid_size"], r.config["variant"])):
        rows.append([
            rec.experiment, rec.seed, rec.config["n"], rec.config["p"], rec.config["n_train"],
            rec.config["n_inf"], rec.config["grid_size"], rec.config["variant"],
            rec.metrics["token_connections"], rec.metrics["token_connections_model"],
            rec.metrics["evaluation_calls"], rec.metrics["max_abs_diff"],
            rec.metrics["median_runtime_ms"],
            ";".join(repr(s) for s in rec.metrics["runtime_samples_ms"]),
        ])
    path = f"{out_dir}/pd_runtime.csv"
    write_csv(path, header, rows)
    if fmt == "json":
        _emit_json_mirror(path, header, rows)
    return path


# -- error vs token budget for the two Shapley routes ---------------------------


def run_shap_error(config: ExperimentConfig) -> list[ResultRecord]:
    """Approximation error of both retraining routes against exact Shapley.

    Per seed: draw the task, compute the exact attribution matrix once, then
    sweep ``m_grid`` for exact retraining and ``m_grid x l_grid`` for
    approximate retraining, recording the error metric and the token budget
    of each configuration.
    """
    config.validate_counts()
    records = []
    for seed in config.seeds:
        data = _source_dataset(config, seed, n=config.n_train + config.n_inf)
        train_idx, inf_idx = split_rows(data.n_rows, (config.n_train, config.n_inf), seed)
        train = take_rows(data, train_idx)
        X = take_rows(data, inf_idx).features
        truth = exact_shapley_matrix(config.backend.make(), train, X)
        base = {"n_train": train.n_rows, "n_inf": X.shape[0], "p": train.n_features}
        run_index = 0
        for M in config.m_grid:
            result = kernel_shap(
                config.backend.make(), train, X, M, RetrainMode.exact(),
                rng_seed=seed * 100000 + run_index,
            )
            run_index += 1
            records.append(ResultRecord(
                "shap_error", seed, dict(base, mode="exact", M=M, L=-1),
                {
                    "token_budget": result.token_budget,
                    "token_connections": result.token_connections,
                    "evaluation_calls": result.evaluation_calls,
                    "error": shap_error_metric(result, truth),
                    "m_effective": result.m_coalitions,
                },
            ))
        for M in config.m_grid:
            for L in config.l_grid:
                result = kernel_shap(
                    config.backend.make(), train, X, M, RetrainMode.approximate(L),
                    rng_seed=seed * 100000 + run_index,
                )
                run_index += 1
                records.append(ResultRecord(
                    "shap_error", seed, dict(base, mode="approx", M=M, L=L),
                    {
                        "token_budget": result.token_budget,
                        "token_connections": result.token_connections,
                        "evaluation_calls": result.evaluation_calls,
                        "error": shap_error_metric(result, truth),
                        "m_effective": result.m_coalitions,
                    },
                ))
    return records


def summarize_shap_error(records: list[ResultRecord]) -> list[dict]:
    """Mean/sd error per (mode, M, L) configuration across seeds."""
    groups: dict[tuple, list[ResultRecord]] = {}
    for rec in records:
        key = (rec.config["mode"], rec.config["M"], rec.config["L"])
        groups.setdefault(key, []).append(rec)
    summary = []
    for (mode, M, L) in sorted(groups):
        bucket = groups[(mode, M, L)]
        errors = [r.metrics["error"] for r in bucket]
        summary.append({
            "mode": mode, "M": M, "L": L,
            "token_budget": bucket[0].metrics["token_budget"],
            "token_connections": bucket[0].metrics["token_connections"],
            "mean_error": float(np.mean(errors)),
            "sd_error": float(np.std(errors, ddof=1)) if len(errors) > 1 else 0.0,
            "runs": len(errors),
        })
    return summary


def budget_dominance(summary: list[dict]) -> dict:
    """Share of exact-route budgets that beat all cheaper approximate configs.

    For each exact configuration, compare its mean error (and sd) against
    every approximate configuration whose token budget is at most as large;
    an exact configuration with no cheaper approximate rival counts as a win.
    """
    exact = [s for s in summary if s["mode"] == "exact"]
    approx = [s for s in summary if s["mode"] == "approx"]
    error_wins = 0
    sd_wins = 0
    for entry in exact:
        rivals = [a for a in approx if a["token_budget"] <= entry["token_budget"]]
        if all(entry["mean_error"] <= a["mean_error"] for a in rivals):
            error_wins += 1
        if all(entry["sd_error"] <= a["sd_error"] for a in rivals):
            sd_wins += 1
    total = len(exact)
    return {
        "budgets": total,
        "error_dominance_share": error_wins / total if total else float("nan"),
        "sd_dominance_share": sd_wins / total if total else float("nan"),
    }


def emit_shap_error(records: list[ResultRecord], out_dir: str, fmt: str = "csv") -> tuple[str, str]:
    ensure_dir(out_dir)
    header = ["experiment", "seed", "p", "n_train", "n_inf", "mode", "M", "L",
              "m_effective", "token_budget", "token_connections", "evaluation_calls", "error"]
    rows = []
    for rec in sorted(records, key=lambda r: (r.seed, r.config["mode"], r.config["M"], r.config["L"])):
        rows.append([
            rec.experiment, rec.seed, rec.config["p"], rec.config["n_train"], rec.config["n_inf"],
            rec.config["mode"], rec.config["M"], rec.config["L"], rec.metrics["m_effective"],
            rec.metrics["token_budget"], rec.metrics["token_connections"],
            rec.metrics["evaluation_calls"], rec.metrics["error"],
        ])
    records_path = f"{out_dir}/shap_error.csv"
    write_csv(records_path, header, rows)
    summary = summarize_shap_error(records)
    summary_header = ["mode", "M", "L", "token_budget", "token_connections",
                      "mean_error", "sd_error", "runs"]
    summary_rows = [[s[k] for k in summary_header] for s in summary]
    summary_path = f"{out_dir}/shap_error_summary.csv"
    write_csv(summary_path, summary_header, summary_rows)
    if fmt == "json":
        _emit_json_mirror(records_path, header, rows)
        _emit_json_mirror(summary_path, summary_header, summary_rows)
    return records_path, summary_path


# -- context optimization vs random sketching -----------------------------------


def run_context_opt(config: ExperimentConfig) -> list[ResultRecord]:
    """Data-value-selected context versus a random sketch of equal size.

    Per seed: draw train/validation/test splits, select ``n_sub`` rows via
    the observation surrogate, draw a uniform sketch of the same size, and
    compare test ROC AUC of both contexts (paired rows).
    """
    config.validate_counts()
    if config.n_train <= config.n_sub:
        raise ConfigError("n_train must exceed n_sub")
    size_min = config.size_min if config.size_min is not None else default_size_min(config.n_sub)
    M = 3 * config.n_train
    records = []
    for seed in config.seeds:
        total = config.n_train + config.n_val + config.n_test
        data = _source_dataset(config, seed, n=total)
        train_idx, val_idx, test_idx = split_rows(
            data.n_rows, (config.n_train, config.n_val, config.n_test), seed
        )
        train = take_rows(data, train_idx)
        validation = take_rows(data, val_idx)
        test = take_rows(data, test_idx)

        ledger_opt = CostLedger()
        selection = data_shapley_context(
            config.backend.make(ledger_opt), train, validation,
            M=M, n_sub=config.n_sub, size_min=size_min, kind=config.risk, rng_seed=seed,
        )
        optimized = restrict_observations(train, selection.selected)
        sketch_rows = substream(seed, _STREAM_SKETCH).choice(
            train.n_rows, size=config.n_sub, replace=False
        )
        sketch = restrict_observations(
            train, ObservationSubset.from_indices(train.n_rows, sketch_rows)
        )

        scorer = config.backend.make()
        auc_opt = auc_score(scorer.predict(optimized, test.features).probabilities, test.labels)
        auc_rand = auc_score(scorer.predict(sketch, test.features).probabilities, test.labels)
        base = {
            "n_train": config.n_train, "n_sub": config.n_sub, "size_min": size_min,
            "n_val": config.n_val, "n_test": config.n_test, "M": M, "p": data.n_features,
        }
        records.append(ResultRecord(
            "context_opt", seed, dict(base, method="data_shapley"),
            {
                "test_roc_auc": auc_opt,
                "token_connections": ledger_opt.token_connections,
                "evaluation_calls": ledger_opt.evaluation_calls,
            },
        ))
        sketch_tokens = token_cost(config.n_sub, 0)  # context assembly only; no valuation calls
        records.append(ResultRecord(
            "context_opt", seed, dict(base, method="random"),
            {
                "test_roc_auc": auc_rand,
                "token_connections": sketch_tokens,
                "evaluation_calls": 0,
            },
        ))
    return records


def emit_context_opt(records: list[ResultRecord], out_dir: str, fmt: str = "csv") -> str:
    ensure_dir(out_dir)
    header = ["experiment", "seed", "p", "n_train", "n_sub", "size_min", "n_val", "n_test",
              "M", "method", "test_roc_auc", "token_connections", "evaluation_calls"]
    rows = []
    for rec in sorted(records, key=lambda r: (r.seed, r.config["method"])):
        rows.append([
            rec.experiment, rec.seed, rec.config["p"], rec.config["n_train"], rec.config["n_sub"],
            rec.config["size_min"], rec.config["n_val"], rec.config["n_test"], rec.config["M"],
            rec.config["method"], rec.metrics["test_roc_auc"],
            rec.metrics["token_connections"], rec.metrics["evaluation_calls"],
        ])
    path = f"{out_dir}/context_opt.csv"
    write_csv(path, header, rows)
    if fmt == "json":
        _emit_json_mirror(path, header, rows)
    return path


# -- one-stop explanation emission ----------------------------------------------


_KNOWN_METHODS = ("ice", "pd", "ale", "shap", "loco", "sage", "loo", "data_shapley", "sensitivity")


def run_explain(config: ExperimentConfig) -> dict:
    """Produce every requested explanation for one dataset into ``out_dir``.

    Emits CSV and JSON per method plus a manifest listing each file with its
    method, seed, and ledger totals. Reruns with the same config and seed are
    byte-identical.
    """
    config.validate_counts()
    unknown = [m for m in config.methods if m not in _KNOWN_METHODS]
    if unknown:
        raise ConfigError(f"unknown method name(s): {unknown}; known: {list(_KNOWN_METHODS)}")
    if "sensitivity" in config.methods and config.backend.kind != "reference":
        raise ConfigError("conflicting flags: sensitivity needs the reference backend")
    seed = config.seeds[0]
    data = _source_dataset(config, seed)
    n_train = int(round(data.n_rows * 0.7))
    train_idx, inf_idx = split_rows(data.n_rows, (n_train, data.n_rows - n_train), seed)
    train = take_rows(data, train_idx)
    inference = take_rows(data, inf_idx)
    names = list(train.column_names)
    out = ensure_dir(config.out_dir)
    manifest_entries = []

    def fresh() -> tuple[Predictor, CostLedger]:
        ledger = CostLedger()
        return config.backend.make(ledger), ledger

    def register(path: str, method: str, ledger: CostLedger) -> None:
        manifest_entries.append({
            "path": path.split("/")[-1],
            "method": method,
            "seed": seed,
            "token_connections": ledger.token_connections,
            "evaluation_calls": ledger.evaluation_calls,
        })

    for method in ("ice", "pd", "ale"):
        if method not in config.methods:
            continue
        fn = {"ice": ice, "pd": pd, "ale": ale}[method]
        for j in range(train.n_features):
            try:
                grid = grid_for_feature(train, j, config.grid_size, GridStrategy.QUANTILE)
            except Exception:
                continue  # constant columns cannot support a grid
            predictor, ledger = fresh()
            curve = fn(predictor, train, inference.features, grid)
            header, rows = curve_rows(curve)
            path = f"{out}/{method}_{names[j]}.csv"
            write_csv(path, header, rows)
            write_json(f"{out}/{method}_{names[j]}.json", curve_json(curve))
            register(path, method, ledger)

    if "shap" in config.methods:
        predictor, ledger = fresh()
        M = min(2 ** train.n_features - 2, config.shap_m)
        result = kernel_shap(predictor, train, inference.features, max(M, train.n_features + 1),
                             RetrainMode.exact(), rng_seed=seed)
        header, rows = attribution_rows(result, names)
        path = f"{out}/shap.csv"
        write_csv(path, header, rows)
        write_json(f"{out}/shap.json", attribution_json(result))
        register(path, "shap", ledger)

    if "loco" in config.methods:
        predictor, ledger = fresh()
        report = loco(predictor, train, inference, config.risk)
        header, rows = importance_rows(report, names)
        path = f"{out}/loco.csv"
        write_csv(path, header, rows)
        register(path, "loco", ledger)

    if "sage" in config.methods:
        predictor, ledger = fresh()
        M = min(2 ** train.n_features - 2, config.shap_m)
        report = sage(predictor, train, inference, max(M, train.n_features + 1),
                      config.risk, rng_seed=seed)
        header, rows = importance_rows(report, names)
        path = f"{out}/sage.csv"
        write_csv(path, header, rows)
        register(path, "sage", ledger)

    if "loo" in config.methods:
        predictor, ledger = fresh()
        report = loo(predictor, train, inference, config.risk)
        header, rows = data_value_rows(report)
        path = f"{out}/loo.csv"
        write_csv(path, header, rows)
        register(path, "loo", ledger)

    if "data_shapley" in config.methods:
        if not config.n_sub < train.n_rows:
            raise ConfigError("data_shapley needs n_sub < the train split size")
        predictor, ledger = fresh()
        size_min = config.size_min if config.size_min is not None else default_size_min(config.n_sub)
        selection = data_shapley_context(
            predictor, train, inference, M=max(3 * train.n_rows, train.n_rows),
            n_sub=config.n_sub, size_min=size_min, kind=config.risk, rng_seed=seed,
        )
        header, rows = selection_mask_rows(selection)
        path = f"{out}/data_shapley.csv"
        write_csv(path, header, rows)
        write_json(f"{out}/data_shapley.json", selection_json(selection))
        register(path, "data_shapley", ledger)

    if "sensitivity" in config.methods:
        predictor, ledger = fresh()
        report = sensitivity_data_values(predictor, train, inference, config.risk)
        header, rows = data_value_rows(report)
        path = f"{out}/sensitivity_data.csv"
        write_csv(path, header, rows)
        register(path, "sensitivity", ledger)
        effects_matrix = sensitivity_feature_effects(predictor, train, inference.features)
        header = ["feature"] + [f"obs_{i}" for i in range(effects_matrix.shape[1])]
        rows = [[names[j]] + list(effects_matrix[j]) for j in range(effects_matrix.shape[0])]
        path = f"{out}/sensitivity_features.csv"
        write_csv(path, header, rows)
        register(path, "sensitivity", ledger)

    manifest = {
        "experiment": "explain",
        "seed": seed,
        "backend": config.backend.kind,
        "risk": config.risk.value,
        "methods": list(config.methods),
        "n_train": train.n_rows,
        "n_inference": inference.n_rows,
        "files": manifest_entries,
    }
    write_json(f"{out}/manifest.json", manifest)
    return manifest
