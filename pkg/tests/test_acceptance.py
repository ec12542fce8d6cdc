"""Acceptance suite: one test per release criterion, at stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion. Everything runs on the reference backend; no external process is
required.
"""

import math
import os
import time

import numpy as np
import pytest

from icx import (
    Dataset,
    ReferencePredictor,
    RetrainMode,
    exact_shapley_bruteforce,
    kernel_shap,
    reference_gradient_wrt_train,
    token_cost,
)
from icx.cli import main as cli_main
from icx.experiments import (
    ExperimentConfig,
    budget_dominance,
    run_pd_runtime,
    run_shap_error,
    summarize_shap_error,
)
from icx.importance import loco
from icx.risk import RiskKind
from icx.rng import substream
from icx.synth import SynthSpec, split_rows, synth_generate, take_rows
from icx.valuation import sensitivity_feature_effects

from conftest import random_dataset
from test_predictor import _fd_gradient


def _report(line: str) -> None:
    print(f"\n[PASS] {line}")


def test_oracle_equivalence_exact_kernel_shap_vs_bruteforce():
    """Full-enumeration exact-retraining Kernel SHAP equals brute force,
    p in 2..8, n_train=64, n_inf=8, within 1e-8; under one minute."""
    start = time.monotonic()
    worst = 0.0
    for p in range(2, 9):
        train = random_dataset(1000 + p, 64, p)
        queries = random_dataset(2000 + p, 8, p).features
        # M no smaller than p+1 (sampling contract); still the exhaustive
        # regime since M >= 2^p - 2 in every case here
        result = kernel_shap(ReferencePredictor(), train, queries, M=max(2 ** p - 2, p + 1),
                             mode=RetrainMode.exact(), rng_seed=p)
        truth = np.stack(
            [exact_shapley_bruteforce(ReferencePredictor(), train, queries[i]) for i in range(8)],
            axis=1,
        )
        gap = float(np.max(np.abs(result.phi - truth)))
        worst = max(worst, gap)
        assert gap < 1e-8, f"p={p}: max attribution deviation {gap}"
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 1 minute"
    _report(f"oracle equivalence p=2..8 (worst deviation {worst:.2e}, {elapsed:.1f}s)")


@pytest.mark.slow
def test_error_vs_budget_exact_mode_dominates():
    """At p=6, n_train=256, n_inf=128 over 25 seeds, exact retraining beats
    every approximate configuration at equal-or-smaller token budget on
    >= 80% of the budget grid, with smaller dispersion on >= 70%."""
    start = time.monotonic()
    config = ExperimentConfig(
        task="gaussian_clusters", p=6, n_train=256, n_inf=128, seeds=tuple(range(25)),
    )
    records = run_shap_error(config)
    stats = budget_dominance(summarize_shap_error(records))
    elapsed = time.monotonic() - start
    assert stats["error_dominance_share"] >= 0.80, stats
    assert stats["sd_dominance_share"] >= 0.70, stats
    assert elapsed < 900.0, f"runtime {elapsed:.1f}s exceeds 15 minutes"
    _report(
        "error-vs-budget dominance: error share "
        f"{stats['error_dominance_share']:.2f}, sd share {stats['sd_dominance_share']:.2f} "
        f"({elapsed:.0f}s, 25 seeds)"
    )


@pytest.mark.slow
def test_batched_pd_correctness_and_efficiency():
    """Batched and per-grid-point PD agree within 1e-12; the ledger ratio is
    exactly [(C(n,2)+n*m)*G] / [C(n,2)+n*m*G]; batched is faster in wall
    clock for G >= 16 at n=1000."""
    config = ExperimentConfig(
        task="gaussian_clusters", n=1000, p=10, seeds=(0,), grid_sizes=(16, 64), repetitions=5,
    )
    records = run_pd_runtime(config)
    for G in (16, 64):
        batched = next(r for r in records if r.config["grid_size"] == G and r.config["variant"] == "batched")
        naive = next(r for r in records if r.config["grid_size"] == G and r.config["variant"] == "naive")
        assert batched.metrics["max_abs_diff"] <= 1e-12
        n, m = batched.config["n_train"], batched.config["n_inf"]
        expected_naive = (math.comb(n, 2) + n * m) * G
        expected_batched = math.comb(n, 2) + n * m * G
        assert naive.metrics["token_connections"] == expected_naive
        assert batched.metrics["token_connections"] == expected_batched
        assert batched.metrics["median_runtime_ms"] < naive.metrics["median_runtime_ms"], (
            f"G={G}: batched {batched.metrics['median_runtime_ms']:.1f}ms, "
            f"naive {naive.metrics['median_runtime_ms']:.1f}ms"
        )
    speedups = {
        G: (
            next(r for r in records if r.config["grid_size"] == G and r.config["variant"] == "naive").metrics["median_runtime_ms"]
            / next(r for r in records if r.config["grid_size"] == G and r.config["variant"] == "batched").metrics["median_runtime_ms"]
        )
        for G in (16, 64)
    }
    _report(
        "batched PD: equivalent within 1e-12, exact integer ledger ratio, "
        f"wall-clock speedups {speedups[16]:.1f}x (G=16), {speedups[64]:.1f}x (G=64)"
    )


def test_approx_route_never_cheaper_at_equal_m():
    """For n_train = n_inf and L = 2, the approximate route's token count is
    at least the exact route's at every M; exact integer comparison."""
    n = 32
    train = random_dataset(42, n, 4)
    queries = random_dataset(43, n, 4).features
    for M in (6, 10, 14, 20):
        exact_predictor = ReferencePredictor()
        kernel_shap(exact_predictor, train, queries, M, RetrainMode.exact(), rng_seed=M)
        approx_predictor = ReferencePredictor()
        kernel_shap(approx_predictor, train, queries, M, RetrainMode.approximate(2), rng_seed=M)
        exact_tokens = exact_predictor.ledger.token_connections
        approx_tokens = approx_predictor.ledger.token_connections
        assert isinstance(exact_tokens, int) and isinstance(approx_tokens, int)
        assert approx_tokens >= exact_tokens, f"M={M}: {approx_tokens} < {exact_tokens}"
        # single-pass budget formulas obey the same ordering
        assert token_cost(n, n * M * 2) >= M * token_cost(n, n)
    _report("approximate-retraining tokens >= exact-retraining tokens at L=2, n_train=n_inf")


def test_loco_constant_column_and_call_count():
    """LOCO of a zero-variance feature is exactly 0 and LOCO spends exactly
    p + 1 predictor calls."""
    rng = substream(7, 31337)
    p = 5
    features = rng.normal(size=(48, p))
    features[:, 2] = 0.0
    labels = (rng.random(48) < 0.5).astype(float)
    labels[:2] = [0.0, 1.0]
    labels[32:34] = [0.0, 1.0]
    train = Dataset.from_arrays(features[:32], labels[:32])
    inference = Dataset.from_arrays(features[32:], labels[32:])
    predictor = ReferencePredictor()
    report = loco(predictor, train, inference, RiskKind.LOG_LOSS)
    assert report.scores[2] == 0.0
    assert predictor.ledger.evaluation_calls == p + 1
    assert predictor.ledger.token_connections == (p + 1) * token_cost(32, 16)
    _report("LOCO: constant column scored exactly 0, call count p+1")


def test_gradient_checks_100_instances():
    """Analytic sensitivity gradients (data and feature variants) match
    central finite differences (step 1e-5) within relative 1e-4 on 100
    random instances."""
    bandwidth = 1.5
    checked = 0
    for seed in range(50):
        train = random_dataset(3000 + seed, 8, 3)
        inference = random_dataset(4000 + seed, 5, 3)
        j = seed % train.n_rows
        kind = RiskKind.LOG_LOSS if seed % 2 == 0 else RiskKind.BRIER
        analytic = reference_gradient_wrt_train(train, inference, kind, j, bandwidth)
        numeric = _fd_gradient(train, inference, kind, j, bandwidth)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-10)
        checked += 1
    step = 1e-5
    for seed in range(50):
        train = random_dataset(5000 + seed, 8, 3)
        queries = random_dataset(6000 + seed, 3, 3).features
        predictor = ReferencePredictor(bandwidth=bandwidth)
        matrix = sensitivity_feature_effects(predictor, train, queries)
        i, j = seed % queries.shape[0], seed % queries.shape[1]
        plus = queries.copy()
        plus[i, j] += step
        minus = queries.copy()
        minus[i, j] -= step
        numeric = (
            ReferencePredictor(bandwidth=bandwidth).predict(train, plus).probabilities[i]
            - ReferencePredictor(bandwidth=bandwidth).predict(train, minus).probabilities[i]
        ) / (2 * step)
        assert matrix[j, i] == pytest.approx(abs(numeric), rel=1e-4, abs=1e-10)
        checked += 1
    assert checked == 100
    _report("gradient checks: 100 random instances within relative 1e-4 of finite differences")


@pytest.mark.slow
def test_context_optimization_beats_random_sketching():
    """On the noisy_linear task (n_train=96, n_sub=32, n_val=64, test=128,
    10% label noise, M=3*n_train), the selected context beats a random
    sketch on test ROC AUC in at least 4 of 5 seeds, in under 5 minutes.

    The absolute uplifts reported for the real pretrained model on public
    datasets are bridge-only parity targets, not reproducible with the
    reference backend (see README).
    """
    start = time.monotonic()
    config = ExperimentConfig(
        task="noisy_linear", p=6, noise_rate=0.10,
        n_train=96, n_sub=32, n_val=64, n_test=128, seeds=tuple(range(5)),
    )
    from icx.experiments import run_context_opt

    records = run_context_opt(config)
    wins = 0
    for seed in range(5):
        optimized = next(r for r in records if r.seed == seed and r.config["method"] == "data_shapley")
        random_sketch = next(r for r in records if r.seed == seed and r.config["method"] == "random")
        wins += optimized.metrics["test_roc_auc"] >= random_sketch.metrics["test_roc_auc"]
    elapsed = time.monotonic() - start
    assert wins >= 4, f"optimized context won only {wins}/5 seeds"
    assert elapsed < 300.0, f"runtime {elapsed:.1f}s exceeds 5 minutes"
    _report(f"context optimization beats random sketching in {wins}/5 seeds ({elapsed:.0f}s)")


def _strip_wallclock(path):
    with open(path, "rb") as handle:
        text = handle.read().decode()
    lines = text.splitlines()
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header) if not name.endswith("_ms")]
    return "\n".join(",".join(line.split(",")[i] for i in keep) for line in lines)


def test_cli_runner_determinism(tmp_path):
    """Every CLI runner emits byte-identical CSV output across two runs with
    the same config and seeds, excluding wall-clock fields."""
    runs = {
        "bench-pd": ["bench-pd", "--task", "xor", "--n", "40", "--p", "2", "--seed", "1",
                     "--grid-sizes", "3,4", "--repetitions", "2"],
        "bench-shap": ["bench-shap", "--task", "gaussian_clusters", "--p", "3",
                       "--n-train", "24", "--n-inf", "8", "--m-grid", "4,6",
                       "--l-grid", "1,2", "--seed", "0"],
        "bench-context": ["bench-context", "--task", "noisy_linear", "--p", "3",
                          "--noise-rate", "0.1", "--n-train", "40", "--n-sub", "12",
                          "--n-val", "24", "--n-test", "32", "--seed", "0"],
        "explain": ["explain", "--task", "gaussian_clusters", "--n", "32", "--p", "2",
                    "--seed", "2", "--methods", "pd,loco,loo", "--grid-size", "3"],
        "synth": ["synth", "--task", "xor", "--n", "24", "--p", "2", "--seed", "3"],
    }
    for verb, argv in runs.items():
        outputs = []
        for tag in ("a", "b"):
            out_dir = tmp_path / verb / tag
            full = list(argv)
            if verb == "synth":
                os.makedirs(out_dir, exist_ok=True)
                full += ["--out", str(out_dir / "data.csv")]
            else:
                full += ["--out-dir", str(out_dir)]
            assert cli_main(full) == 0
            listing = sorted(
                name for name in os.listdir(out_dir) if name.endswith((".csv", ".json"))
            )
            outputs.append((out_dir, listing))
        (dir_a, names_a), (dir_b, names_b) = outputs
        assert names_a == names_b
        for name in names_a:
            a, b = os.path.join(dir_a, name), os.path.join(dir_b, name)
            assert _strip_wallclock(a) == _strip_wallclock(b), f"{verb}/{name} differs"
    _report("CLI determinism: all five verbs byte-identical across reruns (wall-clock fields excluded)")
