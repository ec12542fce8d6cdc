"""Empirical risk functions over predicted class-1 probabilities."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .dataset import ContractViolation

LOG_LOSS_CLAMP = 1e-12


class DegenerateLabelsError(ValueError):
    """Labels contain a single class where both are required."""


class NonDifferentiableRiskError(ValueError):
    """The requested risk has no gradient."""


class RiskKind(Enum):
    LOG_LOSS = "log_loss"
    BRIER = "brier"
    ONE_MINUS_AUC = "one_minus_auc"

    @classmethod
    def parse(cls, name: str) -> "RiskKind":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(kind.value for kind in cls)
            raise ContractViolation(f"unknown risk kind {name!r}; expected one of: {valid}") from None

    @property
    def differentiable(self) -> bool:
        return self is not RiskKind.ONE_MINUS_AUC


def _as_probabilities(predictions) -> np.ndarray:
    probs = np.asarray(getattr(predictions, "probabilities", predictions), dtype=np.float64)
    return np.atleast_1d(probs)


def auc_score(scores, labels) -> float:
    """Area under the ROC curve via tie-averaged ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n_pos = int(np.sum(labels == 1.0))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("degenerate labels: both classes required for AUC")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank over the tie group
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[labels == 1.0]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def empirical_risk(predictions, labels, kind: RiskKind) -> float:
    """Average risk of the predictions against the labels.

    ``log_loss`` clamps probabilities to ``[1e-12, 1 - 1e-12]`` before taking
    logs; ``one_minus_auc`` requires both classes to be present.
    """
    probs = _as_probabilities(predictions)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if probs.shape[0] != labels.shape[0]:
        raise ContractViolation(
            f"{probs.shape[0]} predictions for {labels.shape[0]} labels"
        )
    if kind is RiskKind.LOG_LOSS:
        clamped = np.clip(probs, LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP)
        return float(np.mean(-(labels * np.log(clamped) + (1.0 - labels) * np.log1p(-clamped))))
    if kind is RiskKind.BRIER:
        return float(np.mean((probs - labels) ** 2))
    if kind is RiskKind.ONE_MINUS_AUC:
        return 1.0 - auc_score(probs, labels)
    raise ContractViolation(f"unknown risk kind {kind!r}")


def risk_gradient_wrt_predictions(predictions, labels, kind: RiskKind) -> np.ndarray:
    """d(risk)/d(probability) per prediction, for differentiable risks.

    Where log-loss clamping is active the derivative is zero (the clamped
    value no longer responds to the prediction).
    """
    if not kind.differentiable:
        raise NonDifferentiableRiskError("non-differentiable risk: one_minus_auc has no gradient")
    probs = _as_probabilities(predictions)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    m = probs.shape[0]
    if kind is RiskKind.LOG_LOSS:
        inside = (probs > LOG_LOSS_CLAMP) & (probs < 1.0 - LOG_LOSS_CLAMP)
        clamped = np.clip(probs, LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP)
        grad = (clamped - labels) / (clamped * (1.0 - clamped)) / m
        return np.where(inside, grad, 0.0)
    return 2.0 * (probs - labels) / m
