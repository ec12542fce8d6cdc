"""Feature-effect curves computed in a single forward pass.

ICE, PD, and ALE all evaluate the model on grid-perturbed copies of the
inference rows. Because an in-context model pays the quadratic context cost
on every call, all perturbed rows are assembled into one large inference
array and submitted in a single call; a per-grid-point loop would pay the
context cost once per grid value. One token-cost term of
``C(n, 2) + n * G * n_inf`` replaces ``G`` terms of ``C(n, 2) + n * n_inf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cost import token_cost
from .dataset import ContractViolation, Dataset
from .predictor import Predictor

#: Largest inference array submitted as one call; bigger workloads are split
#: into the fewest possible calls of at most this many rows.
DEFAULT_MAX_BATCH_ROWS = 2 ** 16


class DegenerateGridError(ValueError):
    """The column cannot support a grid of at least two points."""


class GridStrategy(Enum):
    UNIQUE_VALUES = "unique_values"
    QUANTILE = "quantile"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid for one feature column."""

    feature_index: int
    points: np.ndarray
    strategy: GridStrategy

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).copy()
        if points.ndim != 1 or points.shape[0] < 2:
            raise DegenerateGridError("degenerate grid: need at least 2 points")
        if not np.all(np.diff(points) > 0):
            raise ContractViolation("grid points must be strictly increasing")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class EffectCurve:
    """Result of ice/pd/ale: grid plus curve values.

    ``values`` is (G, n_inf) for ICE and (G,) for PD/ALE. ``diagnostics``
    carries method extras (ALE bin counts, empty bins).
    """

    grid: GridSpec
    values: np.ndarray
    kind: str
    diagnostics: dict = field(default_factory=dict)


def build_grid(column, G: int, strategy: GridStrategy) -> GridSpec:
    """Build a grid over the observed column values.

    ``unique_values`` ignores ``G`` and uses the sorted distinct values;
    ``quantile`` takes ``G`` empirical quantiles, collapsing duplicates;
    ``uniform`` spaces ``G`` points over [min, max]. A constant column (or
    a column whose quantiles collapse to fewer than two points) cannot
    support a grid and raises :class:`DegenerateGridError`.
    """
    column = np.asarray(column, dtype=np.float64)
    if column.ndim != 1 or column.size == 0:
        raise ContractViolation("grid column must be a non-empty vector")
    if strategy is not GridStrategy.UNIQUE_VALUES and G < 2:
        raise ContractViolation("G must be >= 2")
    if strategy is GridStrategy.UNIQUE_VALUES:
        points = np.unique(column)
    elif strategy is GridStrategy.QUANTILE:
        points = np.unique(np.quantile(column, np.linspace(0.0, 1.0, G)))
    elif strategy is GridStrategy.UNIFORM:
        lo, hi = float(column.min()), float(column.max())
        if lo == hi:
            raise DegenerateGridError("degenerate grid: constant column")
        points = np.linspace(lo, hi, G)
    else:
        raise ContractViolation(f"unknown grid strategy {strategy!r}")
    if points.shape[0] < 2:
        raise DegenerateGridError("degenerate grid: fewer than 2 distinct points")
    return GridSpec(feature_index=-1, points=points, strategy=strategy)


def grid_for_feature(data_or_column, feature_index: int, G: int, strategy: GridStrategy) -> GridSpec:
    """Grid for one column of a dataset (or raw matrix)."""
    features = getattr(data_or_column, "features", data_or_column)
    spec = build_grid(np.asarray(features)[:, feature_index], G, strategy)
    return GridSpec(feature_index=feature_index, points=spec.points, strategy=strategy)


def _predict_chunked(predictor: Predictor, train: Dataset, rows: np.ndarray,
                     max_batch_rows: int) -> np.ndarray:
    """Submit rows in the fewest calls of at most ``max_batch_rows`` each."""
    total = rows.shape[0]
    if total <= max_batch_rows:
        return predictor.predict(train, rows).probabilities
    n_chunks = -(-total // max_batch_rows)
    parts = [predictor.predict(train, chunk).probabilities
             for chunk in np.array_split(rows, n_chunks)]
    return np.concatenate(parts)


def ice(predictor: Predictor, train: Dataset, inference_features, grid: GridSpec,
        max_batch_rows: int = DEFAULT_MAX_BATCH_ROWS) -> EffectCurve:
    """Individual conditional expectation curves, one per inference row.

    The (G * n_inf, p) array of grid-perturbed rows is built by overwriting
    the target column with each grid value and submitted in one call.
    """
    X = np.asarray(inference_features, dtype=np.float64)
    if not 0 <= grid.feature_index < train.n_features:
        raise ContractViolation(f"feature index {grid.feature_index} out of range")
    G, m = grid.size, X.shape[0]
    stacked = np.tile(X, (G, 1))
    stacked[:, grid.feature_index] = np.repeat(grid.points, m)
    probs = _predict_chunked(predictor, train, stacked, max_batch_rows)
    return EffectCurve(grid=grid, values=probs.reshape(G, m), kind="ice")


def pd(predictor: Predictor, train: Dataset, inference_features, grid: GridSpec,
       max_batch_rows: int = DEFAULT_MAX_BATCH_ROWS) -> EffectCurve:
    """Partial dependence: ICE averaged over inference rows, one call total."""
    ice_curve = ice(predictor, train, inference_features, grid, max_batch_rows)
    return EffectCurve(grid=grid, values=ice_curve.values.mean(axis=1), kind="pd")


def ale(predictor: Predictor, train: Dataset, inference_features, grid: GridSpec,
        max_batch_rows: int = DEFAULT_MAX_BATCH_ROWS) -> EffectCurve:
    """First-order accumulated local effects over the grid intervals.

    Each inference row is assigned to the grid interval containing its value
    of the target feature (membership comes from the inference set, where the
    method is applied). Within interval ``(z[k-1], z[k]]`` the local effect is
    the average of ``f(row with column set to z[k]) - f(row ... z[k-1])``;
    empty intervals contribute zero and are reported in the diagnostics.
    Accumulated sums are centered so that the count-weighted mean over the
    curve is zero. Both edge evaluations for every row go out in one call.
    """
    X = np.asarray(inference_features, dtype=np.float64)
    if not 0 <= grid.feature_index < train.n_features:
        raise ContractViolation(f"feature index {grid.feature_index} out of range")
    if X.shape[0] == 0:
        raise ContractViolation("ALE needs at least one inference row")
    G, m = grid.size, X.shape[0]
    col = X[:, grid.feature_index]
    # interval k covers (points[k-1], points[k]]; values outside the grid clamp
    # to the first/last interval
    interval = np.clip(np.searchsorted(grid.points, col, side="left"), 1, G - 1)

    lower = X.copy()
    lower[:, grid.feature_index] = grid.points[interval - 1]
    upper = X.copy()
    upper[:, grid.feature_index] = grid.points[interval]
    probs = _predict_chunked(predictor, train, np.vstack([lower, upper]), max_batch_rows)
    deltas = probs[m:] - probs[:m]

    counts = np.bincount(interval, minlength=G)
    sums = np.bincount(interval, weights=deltas, minlength=G)
    local = np.divide(sums, counts, out=np.zeros(G), where=counts > 0)
    accumulated = np.cumsum(local)  # accumulated[0] is 0: no row maps to interval 0
    weighted_mean = float(np.dot(counts, accumulated)) / m
    values = accumulated - weighted_mean
    empty = [int(k) for k in range(1, G) if counts[k] == 0]
    return EffectCurve(
        grid=grid,
        values=values,
        kind="ale",
        diagnostics={"bin_counts": counts, "empty_bins": empty},
    )


def naive_ice(predictor: Predictor, train: Dataset, inference_features, grid: GridSpec) -> EffectCurve:
    """Per-grid-point loop baseline: one predictor call per grid value.

    Produces the same curve as :func:`ice` but pays the context cost ``G``
    times; kept as the comparison baseline for the efficiency benchmarks.
    """
    X = np.asarray(inference_features, dtype=np.float64)
    rows = []
    for value in grid.points:
        perturbed = X.copy()
        perturbed[:, grid.feature_index] = value
        rows.append(predictor.predict(train, perturbed).probabilities)
    return EffectCurve(grid=grid, values=np.vstack(rows), kind="ice")


def naive_pd(predictor: Predictor, train: Dataset, inference_features, grid: GridSpec) -> EffectCurve:
    curve = naive_ice(predictor, train, inference_features, grid)
    return EffectCurve(grid=grid, values=curve.values.mean(axis=1), kind="pd")


def batched_vs_naive_token_costs(n_train: int, n_inf: int, G: int) -> tuple[int, int]:
    """(batched, naive) token costs of a G-point curve, as exact integers."""
    return token_cost(n_train, G * n_inf), G * token_cost(n_train, n_inf)
