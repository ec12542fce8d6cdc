"""Global feature importance by actually refitting without features.

Refitting an in-context model on a reduced feature set is one forward pass,
so leave-one-covariate-out and Shapley-over-risk importances that are
intractable for conventionally trained deep models become routine here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ContractViolation, Dataset, FeatureSubset, restrict_features
from .predictor import Predictor
from .risk import RiskKind, empirical_risk
from .shapley import (
    sample_coalitions,
    shap_kernel_weight,
    solve_weighted_surrogate,
)


@dataclass(frozen=True)
class ImportanceReport:
    """Per-feature importance scores with the risk they were measured on."""

    scores: np.ndarray
    method: str
    risk_kind: RiskKind
    baseline_risk: float
    condition_number: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))


def loco(predictor: Predictor, train: Dataset, inference: Dataset, kind: RiskKind) -> ImportanceReport:
    """Leave-one-covariate-out: risk increase when a feature is dropped.

    The baseline risk uses all features; each score is the risk after
    removing that feature from both the context and the inference rows and
    refitting in-context (one call per feature, p + 1 calls total). Positive
    scores mean the feature carried information the rest did not.
    """
    p = train.n_features
    if p < 2:
        raise ContractViolation("LOCO needs at least two features")
    baseline = empirical_risk(
        predictor.predict(train, inference.features), inference.labels, kind
    )
    scores = np.empty(p)
    for j in range(p):
        keep = FeatureSubset.from_indices(p, [k for k in range(p) if k != j])
        reduced_train = restrict_features(train, keep)
        reduced_X = inference.features[:, keep.mask]
        risk_without = empirical_risk(
            predictor.predict(reduced_train, reduced_X), inference.labels, kind
        )
        scores[j] = risk_without - baseline
    return ImportanceReport(scores=scores, method="loco", risk_kind=kind, baseline_risk=baseline)


def sage(predictor: Predictor, train: Dataset, inference: Dataset, M: int,
         kind: RiskKind, rng_seed: int) -> ImportanceReport:
    """Shapley attribution of the empirical risk across features.

    The coalition game's value is the risk of exact-retrained predictions on
    the coalition's columns; the empty coalition predicts the context base
    rate. Scores use the risk-reduction sign convention (negated risk-game
    attributions), so features that lower risk score positive.
    """
    p = train.n_features
    subsets = sample_coalitions(p, M, rng_seed)
    exhaustive = M >= 2 ** p - 2
    design = np.stack([s.mask.astype(np.float64) for s in subsets])
    weights = (
        np.array([shap_kernel_weight(p, s.size) for s in subsets])
        if exhaustive
        else np.ones(len(subsets))
    )
    values = np.empty(len(subsets))
    for k, subset in enumerate(subsets):
        reduced_train = restrict_features(train, subset)
        reduced_X = inference.features[:, subset.mask]
        values[k] = empirical_risk(
            predictor.predict(reduced_train, reduced_X).probabilities, inference.labels, kind
        )
    v_full = empirical_risk(
        predictor.predict(train, inference.features), inference.labels, kind
    )
    base_prediction = np.full(inference.n_rows, train.base_rate)
    v_empty = empirical_risk(base_prediction, inference.labels, kind)
    surrogate = solve_weighted_surrogate(design, weights, values, v_empty, v_full)
    return ImportanceReport(
        scores=-surrogate.phi[:, 0],
        method="sage",
        risk_kind=kind,
        baseline_risk=v_full,
        condition_number=surrogate.condition_number,
    )
