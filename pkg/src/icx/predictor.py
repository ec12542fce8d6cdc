"""In-context predictor contract and the analytic reference backend.

An in-context predictor consumes a training set (the "context") and query
rows in one evaluation call and returns class-1 probabilities. There is no
fitted state: supplying a different context *is* retraining. Every call is
charged to a :class:`~icx.cost.CostLedger` under the pairwise token model,
which is what makes explanation strategies comparable on cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostLedger
from .dataset import ContractViolation, Dataset, EmptyContextError
from .risk import (
    NonDifferentiableRiskError,
    RiskKind,
    empirical_risk,
    risk_gradient_wrt_predictions,
)


@dataclass(frozen=True)
class PredictionBatch:
    """Class-1 probabilities, one per query row.

    ``context_risk`` is an optional diagnostic: the backend's in-context
    estimate of how well the supplied context predicts itself (None when the
    backend does not produce one, or the context has a single row).
    """

    probabilities: np.ndarray
    context_risk: float | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 1:
            raise ContractViolation(f"probabilities must be a vector, got shape {probs.shape}")
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ContractViolation("probabilities must lie in [0, 1]")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)

    def __len__(self) -> int:
        return self.probabilities.shape[0]


class Predictor:
    """Base contract: validate, charge the ledger, delegate to the backend."""

    supports_gradients = False

    def __init__(self, ledger: CostLedger | None = None) -> None:
        self.ledger = ledger if ledger is not None else CostLedger()

    def predict(self, train: Dataset, inference_features) -> PredictionBatch:
        """One forward pass: probabilities for each query row.

        Deterministic given identical inputs and backend configuration. An
        empty query set yields an empty batch, not an error; the call is
        still charged (the context is still processed).
        """
        X = self._validate_queries(train, inference_features)
        self.ledger.charge(train.n_rows, X.shape[0])
        return self._predict(train, X)

    @staticmethod
    def _validate_queries(train: Dataset, inference_features) -> np.ndarray:
        if train.n_rows == 0:
            raise EmptyContextError("empty context")
        X = np.asarray(inference_features, dtype=np.float64)
        if X.size == 0:
            X = X.reshape(0, train.n_features)
        if X.ndim != 2:
            raise ContractViolation(f"inference features must be a matrix, got shape {X.shape}")
        if X.shape[1] != train.n_features:
            raise ContractViolation(
                f"inference features have {X.shape[1]} columns, context has {train.n_features}"
            )
        return X

    def _predict(self, train: Dataset, X: np.ndarray) -> PredictionBatch:
        raise NotImplementedError


def _sorted_row_sum(a: np.ndarray) -> np.ndarray:
    # Summing in sorted order makes the result a function of the value
    # multiset only, so outputs are bit-identical under row permutations.
    return np.sort(a, axis=-1).sum(axis=-1)


def _squared_distances(queries: np.ndarray, context: np.ndarray) -> np.ndarray:
    # Column-wise accumulation: a coordinate equal in both operands adds an
    # exact 0.0, so dropping such a column leaves every distance bit-identical.
    out = np.zeros((queries.shape[0], context.shape[0]))
    for j in range(context.shape[1]):
        diff = queries[:, j][:, None] - context[:, j][None, :]
        out += diff * diff
    return out


class ReferencePredictor(Predictor):
    """Deterministic, differentiable stand-in for a pretrained in-context model.

    For a query ``q`` the backend softmax-weights the context rows by
    ``-||q - x_i||^2 / bandwidth^2`` and returns the weighted mean of their
    labels. It is parameter-free given the context, permutation-invariant
    over context rows, and analytically differentiable in both the context
    and the queries.

    Each call also re-processes the context itself, producing leave-one-out
    self-predictions and their log-loss (``context_risk``). A fixed-parameter
    in-context model pays this quadratic context cost on every forward pass,
    and the backend mirrors that execution profile so wall-clock comparisons
    between explanation strategies behave like the modeled token costs.
    """

    supports_gradients = True

    def __init__(self, bandwidth: float = 1.0, ledger: CostLedger | None = None,
                 block_rows: int = 2048) -> None:
        super().__init__(ledger)
        if not bandwidth > 0.0:
            raise ContractViolation("bandwidth must be positive")
        self.bandwidth = float(bandwidth)
        self.block_rows = int(block_rows)

    # -- forward pass -------------------------------------------------------

    def _predict(self, train: Dataset, X: np.ndarray) -> PredictionBatch:
        probs = self._probabilities(train.features, train.labels, X)
        return PredictionBatch(probs, context_risk=self._context_risk(train))

    def _probabilities(self, context: np.ndarray, labels: np.ndarray, queries: np.ndarray) -> np.ndarray:
        out = np.empty(queries.shape[0])
        inv_sq_bw = 1.0 / (self.bandwidth * self.bandwidth)
        for start in range(0, queries.shape[0], self.block_rows):
            block = queries[start : start + self.block_rows]
            scaled = _squared_distances(block, context)
            scaled *= -inv_sq_bw
            scaled -= scaled.max(axis=1, keepdims=True)
            t = np.exp(scaled)
            numer = _sorted_row_sum(t * labels[None, :])
            denom = _sorted_row_sum(t)
            out[start : start + block.shape[0]] = numer / denom
        if out.size == 0:
            return out
        return np.clip(out, 0.0, 1.0)

    def _context_risk(self, train: Dataset) -> float | None:
        if train.n_rows < 2:
            return None
        scaled = _squared_distances(train.features, train.features)
        scaled *= -1.0 / (self.bandwidth * self.bandwidth)
        np.fill_diagonal(scaled, -np.inf)
        scaled -= scaled.max(axis=1, keepdims=True)
        t = np.exp(scaled)
        loo = _sorted_row_sum(t * train.labels[None, :]) / _sorted_row_sum(t)
        return empirical_risk(np.clip(loo, 0.0, 1.0), train.labels, RiskKind.LOG_LOSS)

    def _weights(self, context: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """Softmax kernel weights, (n_queries, n_context). Gradient path only."""
        scaled = _squared_distances(queries, context)
        scaled *= -1.0 / (self.bandwidth * self.bandwidth)
        scaled -= scaled.max(axis=1, keepdims=True)
        t = np.exp(scaled)
        return t / t.sum(axis=1, keepdims=True)

    # -- analytic gradients --------------------------------------------------

    def gradient_wrt_train(self, train: Dataset, inference: Dataset, kind: RiskKind, j: int) -> np.ndarray:
        """Gradient of the empirical risk w.r.t. training row ``j``.

        The label coordinate is relaxed to a real for differentiation, so the
        result has dimension ``p + 1``: feature components first, then the
        label component. Only differentiable risks are supported.
        """
        if not kind.differentiable:
            raise NonDifferentiableRiskError("non-differentiable risk: one_minus_auc has no gradient")
        if not 0 <= j < train.n_rows:
            raise ContractViolation(f"training row {j} out of range")
        queries = inference.features
        weights = self._weights(train.features, queries)
        probs = weights @ train.labels
        drisk = risk_gradient_wrt_predictions(probs, inference.labels, kind)
        coef = drisk * weights[:, j] * (train.labels[j] - probs)
        scale = 2.0 / (self.bandwidth * self.bandwidth)
        grad_x = scale * (coef @ (queries - train.features[j][None, :]))
        grad_y = float(np.dot(drisk, weights[:, j]))
        return np.concatenate([grad_x, [grad_y]])

    def jacobian_wrt_queries(self, train: Dataset, inference_features) -> np.ndarray:
        """Signed d(probability)/d(query coordinate), shape (n_queries, p)."""
        queries = self._validate_queries(train, inference_features)
        weights = self._weights(train.features, queries)
        probs = weights @ train.labels
        contrib = weights * (train.labels[None, :] - probs[:, None])
        scale = 2.0 / (self.bandwidth * self.bandwidth)
        out = np.empty_like(queries)
        # per-column accumulation: a coordinate shared by context and query
        # contributes an exact zero
        for j in range(queries.shape[1]):
            diff = train.features[:, j][None, :] - queries[:, j][:, None]
            out[:, j] = scale * (contrib * diff).sum(axis=1)
        return out


def reference_predict(train: Dataset, inference_features, bandwidth: float = 1.0,
                      ledger: CostLedger | None = None) -> PredictionBatch:
    """Single softmax-kernel forward pass with an explicit bandwidth."""
    return ReferencePredictor(bandwidth=bandwidth, ledger=ledger).predict(train, inference_features)


def reference_gradient_wrt_train(train: Dataset, inference: Dataset, kind: RiskKind,
                                 j: int, bandwidth: float = 1.0) -> np.ndarray:
    """Risk gradient w.r.t. training row ``j`` for the reference backend."""
    return ReferencePredictor(bandwidth=bandwidth).gradient_wrt_train(train, inference, kind, j)
