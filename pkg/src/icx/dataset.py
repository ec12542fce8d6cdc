"""Tabular dataset container and row/column restriction utilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ContractViolation(ValueError):
    """Inputs violate an operation's contract."""


class EmptyContextError(ValueError):
    """A prediction was requested with an empty training context."""


def _frozen_array(values, dtype=np.float64, ndim: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ContractViolation(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with binary labels.

    ``features`` is an (n, p) float matrix, standardized at ingestion time;
    ``labels`` holds one {0, 1} entry per row. Instances are immutable and
    safe to share across threads.
    """

    features: np.ndarray
    labels: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self) -> None:
        features = _frozen_array(self.features, ndim=2)
        labels = _frozen_array(self.labels, ndim=1)
        if features.shape[0] != labels.shape[0]:
            raise ContractViolation(
                f"feature rows ({features.shape[0]}) and labels ({labels.shape[0]}) differ"
            )
        if not np.all(np.isfinite(features)):
            raise ContractViolation("features contain NaN/Inf entries")
        if labels.size and not np.all((labels == 0.0) | (labels == 1.0)):
            raise ContractViolation("labels must be in {0, 1}")
        names = tuple(str(name) for name in self.column_names)
        if len(names) != features.shape[1]:
            raise ContractViolation(
                f"{len(names)} column names for {features.shape[1]} feature columns"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_arrays(cls, features, labels, column_names: Sequence[str] | None = None) -> "Dataset":
        features = np.asarray(features, dtype=np.float64)
        if column_names is None:
            column_names = [f"x{j}" for j in range(features.shape[1])]
        return cls(features=features, labels=np.asarray(labels, dtype=np.float64), column_names=tuple(column_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def base_rate(self) -> float:
        """Share of positive labels; the no-feature posterior."""
        if self.n_rows == 0:
            raise EmptyContextError("empty context has no base rate")
        return float(np.mean(self.labels))


def _validate_mask(mask, expected_len: int, what: str) -> np.ndarray:
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 1 or arr.shape[0] != expected_len:
        raise ContractViolation(f"{what} mask must have length {expected_len}, got shape {arr.shape}")
    out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FeatureSubset:
    """Bitmask selection over feature columns."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.mask, dtype=bool).copy()
        if arr.ndim != 1:
            raise ContractViolation("feature mask must be one-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "mask", arr)

    @classmethod
    def from_indices(cls, p: int, indices: Iterable[int]) -> "FeatureSubset":
        mask = np.zeros(p, dtype=bool)
        mask[list(indices)] = True
        return cls(mask)

    @classmethod
    def full(cls, p: int) -> "FeatureSubset":
        return cls(np.ones(p, dtype=bool))

    @classmethod
    def empty(cls, p: int) -> "FeatureSubset":
        return cls(np.zeros(p, dtype=bool))

    def complement(self) -> "FeatureSubset":
        return FeatureSubset(~self.mask)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))

    def key(self) -> int:
        """Integer encoding of the mask, for memoization."""
        return int(sum(1 << i for i in np.flatnonzero(self.mask)))

    def __len__(self) -> int:
        return self.mask.shape[0]


@dataclass(frozen=True)
class ObservationSubset:
    """Bitmask selection over training rows."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.mask, dtype=bool).copy()
        if arr.ndim != 1:
            raise ContractViolation("observation mask must be one-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "mask", arr)

    @classmethod
    def from_indices(cls, n: int, indices: Iterable[int]) -> "ObservationSubset":
        mask = np.zeros(n, dtype=bool)
        mask[list(indices)] = True
        return cls(mask)

    @classmethod
    def full(cls, n: int) -> "ObservationSubset":
        return cls(np.ones(n, dtype=bool))

    def complement(self) -> "ObservationSubset":
        return ObservationSubset(~self.mask)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))

    def __len__(self) -> int:
        return self.mask.shape[0]


def restrict_features(data: Dataset, subset: FeatureSubset) -> Dataset:
    """Project the dataset onto the masked-in columns; labels unchanged.

    An empty mask yields a valid zero-column dataset (the empty-coalition
    convention downstream).
    """
    mask = _validate_mask(subset.mask, data.n_features, "feature")
    names = tuple(name for name, keep in zip(data.column_names, mask) if keep)
    return Dataset(features=data.features[:, mask], labels=data.labels, column_names=names)


def restrict_observations(data: Dataset, subset: ObservationSubset) -> Dataset:
    """Keep only masked-in rows; the column set is unchanged."""
    mask = _validate_mask(subset.mask, data.n_rows, "observation")
    return Dataset(features=data.features[mask, :], labels=data.labels[mask], column_names=data.column_names)


def standardize_columns(features: np.ndarray) -> np.ndarray:
    """Z-score each column; zero-variance columns get a unit divisor."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (features - mean) / std
