"""Valuing training observations, and using those values to pick a context.

With an in-context model, removing or subsampling training rows just changes
the context of the next call, so leave-one-out and Shapley-style data values
are computed from genuine refits. The same machinery selects a reduced
context when a dataset exceeds the model's context limit: score training
rows by a linear surrogate of subset risk, keep the rows that help most.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ContractViolation, Dataset, ObservationSubset, restrict_observations
from .predictor import Predictor
from .risk import NonDifferentiableRiskError, RiskKind, empirical_risk
from .rng import substream

_STREAM_SUBSET_SIZES = 10
_STREAM_SUBSET_MEMBERS = 11


@dataclass(frozen=True)
class DataValueReport:
    """Per-training-row values; positive means the row helps predictions."""

    values: np.ndarray
    method: str
    risk_kind: RiskKind
    baseline_risk: float | None = None
    condition_number: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class ContextSelection:
    """Optimized context: the selected rows plus the surrogate evidence."""

    selected: ObservationSubset
    coefficients: np.ndarray
    config: dict

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=np.float64))


def loo(predictor: Predictor, train: Dataset, validation: Dataset, kind: RiskKind) -> DataValueReport:
    """Leave-one-out data values: risk change when one context row is removed.

    One call per training row plus the baseline (n_train + 1 calls).
    Positive values mean the row was helping.
    """
    n = train.n_rows
    if n < 2:
        raise ContractViolation("LOO needs at least two training rows")
    baseline = empirical_risk(
        predictor.predict(train, validation.features), validation.labels, kind
    )
    values = np.empty(n)
    for i in range(n):
        keep = ObservationSubset.from_indices(n, [k for k in range(n) if k != i])
        reduced = restrict_observations(train, keep)
        risk_without = empirical_risk(
            predictor.predict(reduced, validation.features), validation.labels, kind
        )
        values[i] = risk_without - baseline
    return DataValueReport(values=values, method="loo", risk_kind=kind, baseline_risk=baseline)


def sample_observation_subsets(n_train: int, M: int, n_sub: int, size_min: int,
                               rng_seed: int) -> list[ObservationSubset]:
    """M training subsets with sizes uniform on [size_min, n_sub]."""
    if not 0 < size_min < n_sub < n_train:
        raise ContractViolation("need 0 < size_min < n_sub < n_train")
    size_rng = substream(rng_seed, _STREAM_SUBSET_SIZES)
    sizes = size_rng.integers(size_min, n_sub + 1, size=M)
    subsets = []
    for k, size in enumerate(sizes):
        member_rng = substream(rng_seed, _STREAM_SUBSET_MEMBERS, k)
        subsets.append(
            ObservationSubset.from_indices(n_train, member_rng.choice(n_train, size=int(size), replace=False))
        )
    return subsets


def fit_observation_surrogate(membership: np.ndarray, risks: np.ndarray,
                              weights: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Regress subset risk on row-membership indicators, intercept included.

    There is no efficiency constraint: the boundary contexts (empty, full)
    are never evaluated in this game, so this is an ordinary (optionally
    weighted) least-squares fit. Returns (coefficients, condition_number);
    the intercept is dropped from the coefficients.
    """
    membership = np.asarray(membership, dtype=np.float64)
    risks = np.asarray(risks, dtype=np.float64)
    M, n = membership.shape
    if risks.shape != (M,):
        raise ContractViolation(f"{risks.shape} risks for {M} subsets")
    design = np.hstack([np.ones((M, 1)), membership])
    if weights is not None:
        sqrt_w = np.sqrt(np.asarray(weights, dtype=np.float64))
        design = sqrt_w[:, None] * design
        risks = sqrt_w * risks
    solution, _, _, singular = np.linalg.lstsq(design, risks, rcond=None)
    condition = float((singular[0] / singular[-1]) ** 2) if singular.size and singular[-1] > 0 else float("inf")
    return solution[1:], condition


def data_shapley_context(predictor: Predictor, train: Dataset, validation: Dataset,
                         M: int, n_sub: int, size_min: int, kind: RiskKind,
                         rng_seed: int) -> ContextSelection:
    """Pick an ``n_sub``-row context by Shapley-style valuation of rows.

    Evaluates the validation risk of ``M`` random training subsets (one call
    each), fits the membership surrogate, and selects the ``n_sub`` rows with
    the lowest coefficients (those contributing least to risk increase),
    breaking ties toward lower row indices. Identifying the surrogate needs
    ``M >= n_train``.
    """
    n = train.n_rows
    if M < n:
        raise ContractViolation(f"underdetermined surrogate: M={M} < n_train={n}")
    subsets = sample_observation_subsets(n, M, n_sub, size_min, rng_seed)
    membership = np.stack([s.mask.astype(np.float64) for s in subsets])
    risks = np.empty(M)
    for k, subset in enumerate(subsets):
        context = restrict_observations(train, subset)
        risks[k] = empirical_risk(
            predictor.predict(context, validation.features), validation.labels, kind
        )
    coefficients, condition = fit_observation_surrogate(membership, risks)
    # snap solver noise to zero so exchangeable rows tie and resolve by index
    coefficients[np.abs(coefficients) < 1e-10 * max(1.0, float(np.abs(coefficients).max()))] = 0.0
    order = np.lexsort((np.arange(n), coefficients))  # coefficient, then row index
    chosen = np.sort(order[:n_sub])
    return ContextSelection(
        selected=ObservationSubset.from_indices(n, chosen),
        coefficients=coefficients,
        config={
            "M": M,
            "n_sub": n_sub,
            "size_min": size_min,
            "n_val": validation.n_rows,
            "seed": rng_seed,
            "risk_kind": kind.value,
            "condition_number": condition,
        },
    )


def data_shapley_values(predictor: Predictor, train: Dataset, validation: Dataset,
                        M: int, n_sub: int, size_min: int, kind: RiskKind,
                        rng_seed: int) -> DataValueReport:
    """Surrogate coefficients as data values, risk-reduction orientation.

    Negated coefficients, so rows that lower risk score positive, matching
    the leave-one-out sign convention.
    """
    selection = data_shapley_context(predictor, train, validation, M, n_sub, size_min, kind, rng_seed)
    return DataValueReport(
        values=-selection.coefficients,
        method="data_shapley",
        risk_kind=kind,
        condition_number=float(selection.config["condition_number"]),
    )


def default_size_min(n_sub: int) -> int:
    """Desk-scale floor for subset sizes: max(8, n_sub // 4)."""
    return max(8, n_sub // 4)


def sensitivity_data_values(predictor: Predictor, train: Dataset, validation: Dataset,
                            kind: RiskKind) -> DataValueReport:
    """Gradient-norm data values: L2 norm of the risk gradient per context row.

    The gradient is taken jointly in the row's features and (relaxed) label,
    so each norm aggregates p + 1 partial derivatives. Requires a
    gradient-capable backend and a differentiable risk.
    """
    if not getattr(predictor, "supports_gradients", False):
        raise ContractViolation("sensitivity unsupported: backend provides no gradients")
    if not kind.differentiable:
        raise NonDifferentiableRiskError("non-differentiable risk: one_minus_auc has no gradient")
    values = np.empty(train.n_rows)
    for i in range(train.n_rows):
        grad = predictor.gradient_wrt_train(train, validation, kind, i)
        values[i] = float(np.linalg.norm(grad))
    return DataValueReport(values=values, method="sensitivity", risk_kind=kind)


def sensitivity_feature_effects(predictor: Predictor, train: Dataset, inference_features) -> np.ndarray:
    """|d prediction / d query coordinate| per (feature, query row); (p, n_inf)."""
    if not getattr(predictor, "supports_gradients", False):
        raise ContractViolation("sensitivity unsupported: backend provides no gradients")
    jacobian = predictor.jacobian_wrt_queries(train, inference_features)
    return np.abs(jacobian).T
