"""Synthetic binary classification tasks for benchmarks and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ContractViolation, Dataset, standardize_columns
from .rng import substream

_STREAM_SYNTH = 100

#: Per-coordinate class-mean separation for gaussian_clusters, scaled by
#: 1/sqrt(p) so overall separation stays constant as p grows.
_CLUSTER_SEPARATION = 3.0


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic dataset; fully determined by its fields."""

    n: int
    p: int
    task: str
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 4 or self.p < 1:
            raise ContractViolation("need n >= 4 and p >= 1")
        if self.task not in ("gaussian_clusters", "xor", "noisy_linear"):
            raise ContractViolation(f"unknown task {self.task!r}")
        if self.task == "xor" and self.p < 2:
            raise ContractViolation("xor needs p >= 2")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ContractViolation("noise_rate must be in [0, 0.5)")
        if self.seed < 0:
            raise ContractViolation("seed must be non-negative")


def synth_generate(spec: SynthSpec) -> Dataset:
    """Generate the dataset described by ``spec``; deterministic given seed.

    Features are z-scored at generation time (ingestion-time
    standardization), and labels are flipped independently with probability
    ``noise_rate``.
    """
    rng = substream(spec.seed, _STREAM_SYNTH)
    if spec.task == "gaussian_clusters":
        labels = rng.integers(0, 2, size=spec.n).astype(np.float64)
        offset = _CLUSTER_SEPARATION / np.sqrt(spec.p)
        means = np.where(labels[:, None] == 1.0, offset / 2.0, -offset / 2.0)
        features = rng.normal(size=(spec.n, spec.p)) + means
    elif spec.task == "xor":
        features = rng.normal(size=(spec.n, spec.p))
        labels = ((features[:, 0] > 0) ^ (features[:, 1] > 0)).astype(np.float64)
    else:  # noisy_linear
        features = rng.normal(size=(spec.n, spec.p))
        direction = rng.normal(size=spec.p)
        direction /= np.linalg.norm(direction)
        labels = (features @ direction > 0).astype(np.float64)
    if spec.noise_rate > 0.0:
        flips = rng.random(spec.n) < spec.noise_rate
        labels = np.where(flips, 1.0 - labels, labels)
    return Dataset.from_arrays(standardize_columns(features), labels)


def split_rows(n: int, sizes: tuple[int, ...], seed: int) -> tuple[np.ndarray, ...]:
    """Disjoint random row-index groups of the given sizes."""
    if sum(sizes) > n:
        raise ContractViolation(f"cannot split {n} rows into groups of {sizes}")
    order = substream(seed, _STREAM_SYNTH + 1).permutation(n)
    out = []
    start = 0
    for size in sizes:
        out.append(np.sort(order[start : start + size]))
        start += size
    return tuple(out)


def take_rows(data: Dataset, indices: np.ndarray) -> Dataset:
    """Dataset restricted to the given row indices."""
    return Dataset(
        features=data.features[indices, :],
        labels=data.labels[indices],
        column_names=data.column_names,
    )
