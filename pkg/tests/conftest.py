import numpy as np
import pytest

from icx import Dataset, PredictionBatch, Predictor
from icx.rng import substream


class StubPredictor(Predictor):
    """Backend driven by an arbitrary row-wise function of the query matrix."""

    def __init__(self, fn, ledger=None):
        super().__init__(ledger)
        self.fn = fn

    def _predict(self, train, X):
        values = np.asarray(self.fn(train, X), dtype=np.float64)
        return PredictionBatch(np.clip(values, 0.0, 1.0))


def constant_stub(value: float) -> StubPredictor:
    return StubPredictor(lambda train, X: np.full(X.shape[0], value))


@pytest.fixture
def dataset_8x2() -> Dataset:
    features = np.array([
        [0.1, -0.4], [1.2, 0.3], [-0.7, 0.8], [0.5, 0.5],
        [-1.1, -0.9], [0.9, -1.3], [0.0, 1.5], [-0.3, 0.2],
    ])
    labels = np.array([0, 1, 1, 1, 0, 0, 1, 0], dtype=float)
    return Dataset.from_arrays(features, labels)


@pytest.fixture
def xor_dataset() -> Dataset:
    features = np.array([[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]])
    labels = np.array([0, 0, 1, 1], dtype=float)
    return Dataset.from_arrays(features, labels)


def random_dataset(seed: int, n: int, p: int) -> Dataset:
    rng = substream(seed, 999)
    features = rng.normal(size=(n, p))
    labels = (rng.random(n) < 0.5).astype(float)
    if labels.sum() == 0:
        labels[0] = 1.0
    elif labels.sum() == n:
        labels[0] = 0.0
    return Dataset.from_arrays(features, labels)
