"""Command-line front end.

Verbs: ``explain``, ``bench-pd``, ``bench-shap``, ``bench-context``,
``synth``. A TOML config file may pre-set any option; command-line flags
override file values. Exit codes: 0 success, 2 configuration error,
3 backend/transport error.
"""

from __future__ import annotations

import argparse
import dataclasses
import shlex
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .experiments import (
    BackendConfig,
    ConfigError,
    ExperimentConfig,
    emit_context_opt,
    emit_pd_runtime,
    emit_shap_error,
    run_context_opt,
    run_explain,
    run_pd_runtime,
    run_shap_error,
)
from .io import ensure_dir, write_csv
from .risk import RiskKind
from .synth import SynthSpec, synth_generate
from .wire import BackendError

_CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"backend", "risk"}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file; flags override its values")
    parser.add_argument("--backend", choices=["reference", "external"])
    parser.add_argument("--external-cmd", help="backend command line (shell-split)")
    parser.add_argument("--bandwidth", type=float)
    parser.add_argument("--seed", type=int, action="append", help="repeatable")
    parser.add_argument("--seeds", help="comma-separated seed list")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--risk", choices=[k.value for k in RiskKind])
    parser.add_argument("--format", dest="fmt", choices=["csv", "json"])
    parser.add_argument("--csv", dest="csv_path", help="dataset CSV path")
    parser.add_argument("--label-col", dest="label_column")
    parser.add_argument("--task", choices=["gaussian_clusters", "xor", "noisy_linear"])
    parser.add_argument("--n", type=int)
    parser.add_argument("--p", type=int)
    parser.add_argument("--noise-rate", dest="noise_rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icx", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    explain = sub.add_parser("explain", help="emit every requested explanation for a dataset")
    _add_common(explain)
    explain.add_argument("--methods", help="comma list: ice,pd,ale,shap,loco,sage,loo,data_shapley,sensitivity")
    explain.add_argument("--grid-size", dest="grid_size", type=int)
    explain.add_argument("--shap-m", dest="shap_m", type=int)
    explain.add_argument("--n-sub", dest="n_sub", type=int)
    explain.add_argument("--size-min", dest="size_min", type=int)

    bench_pd = sub.add_parser("bench-pd", help="batched vs per-grid-point curve benchmark")
    _add_common(bench_pd)
    bench_pd.add_argument("--grid-sizes", help="comma list of grid sizes")
    bench_pd.add_argument("--repetitions", type=int)
    bench_pd.add_argument("--feature-index", dest="feature_index", type=int)

    bench_shap = sub.add_parser("bench-shap", help="error vs token budget for both retraining routes")
    _add_common(bench_shap)
    bench_shap.add_argument("--m-grid", help="comma list of coalition counts")
    bench_shap.add_argument("--l-grid", help="comma list of imputation counts")
    bench_shap.add_argument("--n-train", dest="n_train", type=int)
    bench_shap.add_argument("--n-inf", dest="n_inf", type=int)

    bench_context = sub.add_parser("bench-context", help="optimized context vs random sketching")
    _add_common(bench_context)
    bench_context.add_argument("--n-train", dest="n_train", type=int)
    bench_context.add_argument("--n-sub", dest="n_sub", type=int)
    bench_context.add_argument("--size-min", dest="size_min", type=int)
    bench_context.add_argument("--n-val", dest="n_val", type=int)
    bench_context.add_argument("--n-test", dest="n_test", type=int)

    synth = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    _add_common(synth)
    synth.add_argument("--out", required=True, help="output CSV path")
    return parser


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    return raw


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        raw = _load_config_file(args.config)
        for key, value in raw.items():
            values[key] = value
    for key, value in vars(args).items():
        if value is None or key in ("verb", "config", "out", "external_cmd", "seed", "seeds",
                                    "backend", "bandwidth", "risk", "methods",
                                    "grid_sizes", "m_grid", "l_grid"):
            continue
        values[key] = value

    seeds = None
    if getattr(args, "seeds", None):
        seeds = _parse_int_list(args.seeds)
    if getattr(args, "seed", None):
        seeds = tuple(args.seed)
    if seeds is not None:
        values["seeds"] = seeds
    elif "seeds" in values:
        values["seeds"] = tuple(int(s) for s in values["seeds"])

    for key in ("grid_sizes", "m_grid", "l_grid"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _parse_int_list(flag)
        elif key in values:
            values[key] = tuple(int(v) for v in values[key])
    methods = getattr(args, "methods", None)
    if methods is not None:
        values["methods"] = tuple(part.strip() for part in methods.split(",") if part.strip())
    elif "methods" in values:
        values["methods"] = tuple(values["methods"])

    backend_kind = getattr(args, "backend", None) or values.pop("backend", "reference")
    bandwidth = getattr(args, "bandwidth", None)
    if bandwidth is None:
        bandwidth = float(values.pop("bandwidth", 1.0))
    command = None
    external_cmd = getattr(args, "external_cmd", None) or values.pop("external_cmd", None)
    if external_cmd:
        command = tuple(shlex.split(external_cmd)) if isinstance(external_cmd, str) else tuple(external_cmd)
    if backend_kind == "external" and not command:
        raise ConfigError("--backend external requires --external-cmd")
    values["backend"] = BackendConfig(kind=backend_kind, bandwidth=bandwidth, command=command)

    risk = getattr(args, "risk", None) or values.pop("risk", None)
    if risk is not None:
        values["risk"] = RiskKind.parse(risk)

    unknown = set(values) - _CONFIG_KEYS - {"backend", "risk"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _run_synth(args: argparse.Namespace, config: ExperimentConfig) -> None:
    spec = SynthSpec(n=config.n, p=config.p, task=config.task,
                     noise_rate=config.noise_rate, seed=config.seeds[0])
    data = synth_generate(spec)
    header = list(data.column_names) + ["label"]
    rows = [list(data.features[i]) + [int(data.labels[i])] for i in range(data.n_rows)]
    write_csv(args.out, header, rows)
    print(f"wrote {data.n_rows} rows to {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _merge_config(args)
        if args.verb == "explain":
            manifest = run_explain(config)
            print(f"wrote {len(manifest['files'])} outputs to {config.out_dir}")
        elif args.verb == "bench-pd":
            records = run_pd_runtime(dataclasses.replace(config, experiment="pd_runtime"))
            path = emit_pd_runtime(records, ensure_dir(config.out_dir), config.fmt)
            print(f"wrote {path}")
        elif args.verb == "bench-shap":
            records = run_shap_error(dataclasses.replace(config, experiment="shap_error"))
            records_path, summary_path = emit_shap_error(records, ensure_dir(config.out_dir), config.fmt)
            print(f"wrote {records_path} and {summary_path}")
        elif args.verb == "bench-context":
            records = run_context_opt(dataclasses.replace(config, experiment="context_opt"))
            path = emit_context_opt(records, ensure_dir(config.out_dir), config.fmt)
            print(f"wrote {path}")
        elif args.verb == "synth":
            _run_synth(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
