import json
import math
import os
import sys

import numpy as np
import pytest

from icx.cli import main as cli_main
from icx.experiments import (
    BackendConfig,
    ConfigError,
    ExperimentConfig,
    budget_dominance,
    emit_context_opt,
    emit_pd_runtime,
    emit_shap_error,
    run_context_opt,
    run_explain,
    run_pd_runtime,
    run_shap_error,
    summarize_shap_error,
)

TINY_SHAP = dict(task="gaussian_clusters", p=3, n_train=24, n_inf=8,
                 m_grid=(4, 6), l_grid=(1, 2), seeds=(0, 1))


def _read(path):
    with open(path, "rb") as handle:
        return handle.read()


def _strip_wallclock(csv_bytes):
    """Drop columns whose header ends in _ms (wall-clock fields)."""
    lines = csv_bytes.decode().splitlines()
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header) if not name.endswith("_ms")]
    out = []
    for line in lines:
        cells = line.split(",")
        out.append(",".join(cells[i] for i in keep))
    return "\n".join(out)


class TestPdRuntime:
    def test_records_and_equivalence(self, tmp_path):
        config = ExperimentConfig(task="gaussian_clusters", n=60, p=3, seeds=(0,),
                                  grid_sizes=(3, 5), repetitions=2)
        records = run_pd_runtime(config)
        assert len(records) == 2 * 2  # two grids, two variants
        for rec in records:
            assert rec.metrics["max_abs_diff"] <= 1e-12
        batched = [r for r in records if r.config["variant"] == "batched"]
        naive = [r for r in records if r.config["variant"] == "naive"]
        for b, n in zip(batched, naive):
            assert b.metrics["token_connections"] < n.metrics["token_connections"]
            assert b.metrics["token_connections"] == b.metrics["token_connections_model"]
            assert n.metrics["token_connections"] == n.metrics["token_connections_model"]
        path = emit_pd_runtime(records, str(tmp_path))
        header = _read(path).decode().splitlines()[0]
        assert header.startswith("experiment,seed,n,p,n_train,n_inf,grid_size,variant")

    def test_determinism_excluding_wallclock(self, tmp_path):
        config = ExperimentConfig(task="xor", n=40, p=2, seeds=(1,), grid_sizes=(4,), repetitions=2)
        a = emit_pd_runtime(run_pd_runtime(config), str(tmp_path / "a"))
        b = emit_pd_runtime(run_pd_runtime(config), str(tmp_path / "b"))
        assert _strip_wallclock(_read(a)) == _strip_wallclock(_read(b))


class TestShapError:
    def test_record_count_per_seed(self, tmp_path):
        config = ExperimentConfig(**TINY_SHAP)
        records = run_shap_error(config)
        per_seed = len(config.m_grid) + len(config.m_grid) * len(config.l_grid)
        assert len(records) == per_seed * len(config.seeds)
        summary = summarize_shap_error(records)
        assert len(summary) == per_seed
        for entry in summary:
            assert entry["runs"] == 2
        records_path, summary_path = emit_shap_error(records, str(tmp_path))
        assert os.path.exists(records_path) and os.path.exists(summary_path)

    def test_exhaustive_exact_config_has_zero_error(self):
        config = ExperimentConfig(task="gaussian_clusters", p=3, n_train=24, n_inf=8,
                                  m_grid=(6,), l_grid=(1,), seeds=(0,))
        records = run_shap_error(config)
        exact = [r for r in records if r.config["mode"] == "exact"][0]
        assert exact.metrics["error"] < 1e-8  # 2^3 - 2 = 6: full enumeration

    def test_budget_dominance_stat_shape(self):
        records = run_shap_error(ExperimentConfig(**TINY_SHAP))
        stats = budget_dominance(summarize_shap_error(records))
        assert stats["budgets"] == 2
        assert 0.0 <= stats["error_dominance_share"] <= 1.0

    def test_determinism(self, tmp_path):
        config = ExperimentConfig(**TINY_SHAP)
        a, a_sum = emit_shap_error(run_shap_error(config), str(tmp_path / "a"))
        b, b_sum = emit_shap_error(run_shap_error(config), str(tmp_path / "b"))
        assert _read(a) == _read(b)
        assert _read(a_sum) == _read(b_sum)


class TestContextOpt:
    CONFIG = dict(task="noisy_linear", p=3, noise_rate=0.1, n_train=40, n_sub=12,
                  n_val=24, n_test=32, seeds=(0, 1))

    def test_paired_rows_per_seed(self, tmp_path):
        records = run_context_opt(ExperimentConfig(**self.CONFIG))
        assert len(records) == 4
        for seed in (0, 1):
            methods = sorted(r.config["method"] for r in records if r.seed == seed)
            assert methods == ["data_shapley", "random"]
        path = emit_context_opt(records, str(tmp_path))
        assert _read(path).decode().count("\n") == 5  # header + 4 rows

    def test_valuation_ledger_attached_to_selected_rows(self):
        records = run_context_opt(ExperimentConfig(**self.CONFIG))
        opt = [r for r in records if r.config["method"] == "data_shapley"][0]
        assert opt.metrics["evaluation_calls"] == 3 * 40

    def test_determinism(self, tmp_path):
        config = ExperimentConfig(**self.CONFIG)
        a = emit_context_opt(run_context_opt(config), str(tmp_path / "a"))
        b = emit_context_opt(run_context_opt(config), str(tmp_path / "b"))
        assert _read(a) == _read(b)

    def test_n_sub_bound(self):
        with pytest.raises(ConfigError):
            run_context_opt(ExperimentConfig(**{**self.CONFIG, "n_train": 10}))


class TestExplain:
    def test_manifest_lists_every_file(self, tmp_path):
        config = ExperimentConfig(task="gaussian_clusters", n=40, p=2, seeds=(3,),
                                  out_dir=str(tmp_path / "out"), grid_size=4,
                                  methods=("pd", "shap", "loco", "loo"))
        manifest = run_explain(config)
        assert {e["method"] for e in manifest["files"]} == {"pd", "shap", "loco", "loo"}
        for entry in manifest["files"]:
            assert os.path.exists(os.path.join(config.out_dir, entry["path"]))
            assert entry["token_connections"] > 0
        with open(os.path.join(config.out_dir, "manifest.json")) as handle:
            on_disk = json.load(handle)
        assert on_disk["seed"] == 3

    def test_rerun_byte_identical(self, tmp_path):
        paths = []
        for tag in ("a", "b"):
            out = str(tmp_path / tag)
            config = ExperimentConfig(task="xor", n=32, p=2, seeds=(5,), out_dir=out,
                                      grid_size=3, methods=("ice", "pd", "ale", "sage", "sensitivity"))
            run_explain(config)
            paths.append(out)
        for name in sorted(os.listdir(paths[0])):
            assert _read(os.path.join(paths[0], name)) == _read(os.path.join(paths[1], name)), name

    def test_unknown_method_rejected(self, tmp_path):
        config = ExperimentConfig(methods=("pd", "astrology"), out_dir=str(tmp_path))
        with pytest.raises(ConfigError, match="unknown method"):
            run_explain(config)

    def test_sensitivity_needs_reference_backend(self, tmp_path):
        config = ExperimentConfig(
            methods=("sensitivity",), out_dir=str(tmp_path),
            backend=BackendConfig(kind="external", command=("true",)),
        )
        with pytest.raises(ConfigError, match="conflicting flags"):
            run_explain(config)

    def test_explain_through_mock_bridge_backend(self, tmp_path):
        mock = os.path.join(os.path.dirname(__file__), "mock_backend.py")
        out = str(tmp_path / "bridge")
        config = ExperimentConfig(
            task="gaussian_clusters", n=32, p=2, seeds=(1,), out_dir=out, grid_size=3,
            methods=("pd", "loco"),
            backend=BackendConfig(kind="external", command=(sys.executable, mock, "kernel")),
        )
        manifest = run_explain(config)
        reference_out = str(tmp_path / "ref")
        run_explain(ExperimentConfig(
            task="gaussian_clusters", n=32, p=2, seeds=(1,), out_dir=reference_out,
            grid_size=3, methods=("pd", "loco"),
        ))
        for entry in manifest["files"]:
            assert _read(os.path.join(out, entry["path"])) == _read(
                os.path.join(reference_out, entry["path"])
            ), entry["path"]


class TestCli:
    def test_synth_verb(self, tmp_path, capsys):
        out = tmp_path / "data.csv"
        code = cli_main(["synth", "--task", "xor", "--n", "24", "--p", "2",
                         "--seed", "3", "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert "24 rows" in capsys.readouterr().out

    def test_explain_verb_end_to_end(self, tmp_path):
        out_dir = tmp_path / "explained"
        code = cli_main(["explain", "--task", "gaussian_clusters", "--n", "32", "--p", "2",
                         "--seed", "2", "--out-dir", str(out_dir), "--methods", "pd,loco",
                         "--grid-size", "3"])
        assert code == 0
        assert (out_dir / "manifest.json").exists()

    def test_config_file_with_flag_override(self, tmp_path):
        config_file = tmp_path / "run.toml"
        config_file.write_text(
            'task = "gaussian_clusters"\nn = 32\np = 2\nseeds = [4]\n'
            f'out_dir = "{tmp_path}/from-file"\nmethods = ["pd"]\ngrid_size = 3\n'
        )
        override_dir = tmp_path / "override"
        code = cli_main(["explain", "--config", str(config_file), "--out-dir", str(override_dir)])
        assert code == 0
        assert (override_dir / "manifest.json").exists()
        assert not (tmp_path / "from-file").exists()

    def test_bad_config_exits_2(self, tmp_path):
        assert cli_main(["explain", "--methods", "nope", "--out-dir", str(tmp_path)]) == 2
        assert cli_main(["bench-pd", "--config", str(tmp_path / "missing.toml")]) == 2
        assert cli_main(["explain", "--backend", "external", "--out-dir", str(tmp_path)]) == 2

    def test_backend_failure_exits_3(self, tmp_path):
        code = cli_main(["explain", "--backend", "external",
                         "--external-cmd", "/bin/false",
                         "--out-dir", str(tmp_path), "--methods", "pd"])
        assert code == 3

    def test_bench_pd_verb(self, tmp_path):
        out_dir = tmp_path / "bench"
        code = cli_main(["bench-pd", "--task", "xor", "--n", "40", "--p", "2", "--seed", "1",
                         "--grid-sizes", "3,4", "--repetitions", "2", "--out-dir", str(out_dir)])
        assert code == 0
        assert (out_dir / "pd_runtime.csv").exists()

    def test_json_format_emits_mirror(self, tmp_path):
        out_dir = tmp_path / "bench"
        code = cli_main(["bench-pd", "--task", "xor", "--n", "40", "--p", "2", "--seed", "1",
                         "--grid-sizes", "3", "--repetitions", "2", "--format", "json",
                         "--out-dir", str(out_dir)])
        assert code == 0
        with open(out_dir / "pd_runtime.json") as handle:
            payload = json.load(handle)
        assert payload[0]["experiment"] == "pd_runtime"
        assert {rec["variant"] for rec in payload} == {"batched", "naive"}

    def test_bench_shap_verb(self, tmp_path):
        out_dir = tmp_path / "bench"
        code = cli_main(["bench-shap", "--task", "gaussian_clusters", "--p", "3",
                         "--n-train", "24", "--n-inf", "8", "--m-grid", "4,6",
                         "--l-grid", "1", "--seed", "0", "--out-dir", str(out_dir)])
        assert code == 0
        assert (out_dir / "shap_error_summary.csv").exists()

    def test_bench_context_verb(self, tmp_path):
        out_dir = tmp_path / "bench"
        code = cli_main(["bench-context", "--task", "noisy_linear", "--p", "3",
                         "--noise-rate", "0.1", "--n-train", "40", "--n-sub", "12",
                         "--n-val", "24", "--n-test", "32", "--seed", "0",
                         "--out-dir", str(out_dir)])
        assert code == 0
        assert (out_dir / "context_opt.csv").exists()

    def test_unknown_config_key_rejected(self, tmp_path):
        config_file = tmp_path / "bad.toml"
        config_file.write_text("astrology = true\n")
        assert cli_main(["explain", "--config", str(config_file)]) == 2
