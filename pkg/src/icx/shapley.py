"""Shapley attribution via a weighted linear surrogate over coalitions.

Coalition values come from one of two routes. *Exact retraining* restricts
both the context and the query rows to the coalition's columns and runs one
forward pass; for an in-context model this evaluates the restricted model
exactly, because there are no parameters to refit. *Approximate retraining*
keeps the full-feature model and marginalizes absent columns by copying them
from ``L`` randomly chosen context rows, averaging the resulting hybrid
predictions. The surrogate solve, the brute-force oracle, and the error
metric used to compare the two routes live here as well.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .cost import token_cost
from .dataset import ContractViolation, Dataset, FeatureSubset, restrict_features
from .predictor import Predictor
from .rng import substream

_STREAM_COALITIONS = 0
_STREAM_IMPUTATION = 1

BRUTEFORCE_MAX_FEATURES = 20


class BoundaryCoalitionError(ValueError):
    """Empty/full coalitions are handled by constraints, not kernel weights."""


class InsufficientCoalitionDiversityError(ValueError):
    """Some feature columns never vary across the sampled coalitions."""

    def __init__(self, columns) -> None:
        self.columns = list(columns)
        super().__init__(
            "insufficient coalition diversity: columns "
            f"{self.columns} are constant across coalitions"
        )


@dataclass(frozen=True)
class RetrainMode:
    """Coalition evaluation route: exact (L = -1) or approximate with L >= 1."""

    L: int

    def __post_init__(self) -> None:
        if self.L != -1 and self.L < 1:
            raise ContractViolation("L must be -1 (exact) or a positive imputation count")

    @classmethod
    def exact(cls) -> "RetrainMode":
        return cls(L=-1)

    @classmethod
    def approximate(cls, L: int) -> "RetrainMode":
        if L < 1:
            raise ContractViolation("approximate retraining needs L >= 1")
        return cls(L=L)

    @property
    def is_exact(self) -> bool:
        return self.L == -1

    @property
    def label(self) -> str:
        return "exact_retrain" if self.is_exact else f"approx_retrain(L={self.L})"


@dataclass(frozen=True)
class CoalitionDesign:
    """Binary design matrix, solve weights, and evaluated coalition values.

    In the exhaustive regime the weights are the exact coalition kernel; in
    the sampled regime each drawn coalition carries unit weight, because the
    sampling distribution itself is proportional to the kernel mass.
    """

    design: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        design = np.asarray(self.design, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if design.ndim != 2 or weights.shape != (design.shape[0],):
            raise ContractViolation("design is (M, p) with one weight per row")
        sizes = design.sum(axis=1)
        if np.any(sizes == 0) or np.any(sizes == design.shape[1]):
            raise BoundaryCoalitionError("boundary coalition handled by constraint")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ContractViolation("weights must be finite and positive")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class AttributionResult:
    """Additive attribution: base value plus per-feature contributions.

    ``phi`` has shape (p, n_inf); ``base_value + phi.sum(axis=0)`` equals the
    full-model prediction for every inference column, enforced by the
    constrained solve. ``token_budget`` is the cost-model price of the
    configuration (single-pass lower bound for approximate retraining);
    ``token_connections``/``evaluation_calls`` are the ledger's actual
    per-call charges during the computation.
    """

    base_value: float
    phi: np.ndarray
    mode: RetrainMode | None
    m_coalitions: int
    condition_number: float
    ridged: bool = False
    token_budget: int | None = None
    token_connections: int | None = None
    evaluation_calls: int | None = None

    @property
    def n_features(self) -> int:
        return self.phi.shape[0]

    @property
    def n_inference(self) -> int:
        return self.phi.shape[1]


def shap_kernel_weight(p: int, s: int) -> float:
    """Coalition kernel weight for a size-``s`` coalition of ``p`` players."""
    if not 1 <= s <= p - 1:
        raise BoundaryCoalitionError("boundary coalition handled by constraint")
    return (p - 1) / (math.comb(p, s) * s * (p - s))


def coalition_size_distribution(p: int) -> np.ndarray:
    """Probability of each coalition size 1..p-1, proportional to kernel mass."""
    sizes = np.arange(1, p)
    mass = (p - 1) / (sizes * (p - sizes))
    return mass / mass.sum()


def enumerate_nonboundary_subsets(p: int) -> list[FeatureSubset]:
    """All 2^p - 2 non-boundary coalitions, sizes ascending, lexicographic."""
    subsets = []
    for s in range(1, p):
        for combo in itertools.combinations(range(p), s):
            subsets.append(FeatureSubset.from_indices(p, combo))
    return subsets


def sample_coalitions(p: int, M: int, rng_seed: int) -> list[FeatureSubset]:
    """Draw ``M`` non-boundary coalitions for the surrogate.

    Sizes are drawn proportionally to the kernel mass per size, then a
    uniform subset of that size; duplicates are permitted. When ``M`` covers
    the full non-boundary enumeration the exhaustive list is returned instead
    (deduplicated, deterministic order), which is what lets the surrogate
    reproduce exact Shapley values.

    The draw is conditioned on surrogate identifiability: if some column is
    in every sampled coalition or in none (possible at small ``M``), the
    whole batch is redrawn from the same stream, deterministically.
    """
    if p < 2:
        raise ContractViolation("coalition sampling needs p >= 2")
    if M < p + 1:
        raise ContractViolation(f"M={M} too small: need at least p+1={p + 1} coalitions")
    if M >= 2 ** p - 2:
        return enumerate_nonboundary_subsets(p)
    rng = substream(rng_seed, _STREAM_COALITIONS)
    size_probs = coalition_size_distribution(p)
    for _ in range(1000):
        sizes = rng.choice(np.arange(1, p), size=M, p=size_probs)
        subsets = [FeatureSubset.from_indices(p, rng.choice(p, size=int(s), replace=False)) for s in sizes]
        hits = np.sum([s.mask for s in subsets], axis=0)
        if np.all(hits > 0) and np.all(hits < M):
            return subsets
    raise ContractViolation(f"could not draw an identifiable design for p={p}, M={M}")


def value_exact_retrain(predictor: Predictor, train: Dataset, inference_features,
                        subset: FeatureSubset) -> np.ndarray:
    """Coalition value by restricting both context and queries to the subset."""
    X = np.asarray(inference_features, dtype=np.float64)
    restricted_train = restrict_features(train, subset)
    restricted_X = X[:, subset.mask]
    return predictor.predict(restricted_train, restricted_X).probabilities


def value_approx_retrain(predictor: Predictor, train: Dataset, inference_features,
                         subset: FeatureSubset, L: int, rng_seed) -> np.ndarray:
    """Coalition value by imputing absent columns from ``L`` context rows.

    Imputation rows are drawn without replacement; hybrids are evaluated with
    the full-feature model one imputation sample at a time (memory-friendly),
    so the ledger is charged per sample.
    """
    X = np.asarray(inference_features, dtype=np.float64)
    if not 1 <= L <= train.n_rows:
        raise ContractViolation(f"L={L} must be in [1, n_train={train.n_rows}]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else substream(int(rng_seed))
    absent = ~subset.mask
    picks = rng.choice(train.n_rows, size=L, replace=False)
    total = np.zeros(X.shape[0])
    for row_index in picks:
        hybrid = X.copy()
        hybrid[:, absent] = train.features[row_index, absent][None, :]
        total += predictor.predict(train, hybrid).probabilities
    return total / L


def solve_weighted_surrogate(design_matrix, weights, values, v_empty, v_full) -> AttributionResult:
    """Constrained weighted least squares for the coalition surrogate.

    The intercept is pinned to ``v_empty`` and the coefficients are forced to
    sum to ``v_full - v_empty`` by eliminating the last feature's coefficient,
    so the attribution is efficient by construction. Columns that never vary
    across coalitions are structurally unidentifiable and raise
    :class:`InsufficientCoalitionDiversityError`; a numerically rank-deficient
    system falls back to a tiny ridge (1e-10), flagged in the result.
    """
    design = np.asarray(design_matrix, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    M, p = design.shape
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != M:
        raise ContractViolation(f"{values.shape[0]} value rows for {M} coalitions")
    n_inf = values.shape[1]
    v_empty = np.broadcast_to(np.asarray(v_empty, dtype=np.float64), (n_inf,))
    v_full = np.broadcast_to(np.asarray(v_full, dtype=np.float64), (n_inf,))
    # after pinning the intercept and the coefficient sum, p - 1 free
    # coefficients remain, so p - 1 rows is the identifiability floor (the
    # p = 2 exhaustive design has exactly 2^p - 2 = 2 rows)
    if M < p - 1:
        raise ContractViolation(f"M={M} coalitions cannot identify {p - 1} free coefficients")

    sizes = design.sum(axis=1)
    if np.any(sizes == 0) or np.any(sizes == p):
        raise BoundaryCoalitionError("boundary coalition handled by constraint")
    column_hits = design.sum(axis=0)
    stuck = np.flatnonzero((column_hits == 0) | (column_hits == M))
    if stuck.size:
        raise InsufficientCoalitionDiversityError(stuck.tolist())

    span = v_full - v_empty
    reduced = design[:, :-1] - design[:, -1][:, None]
    target = values - v_empty[None, :] - design[:, -1][:, None] * span[None, :]
    sqrt_w = np.sqrt(weights)
    A = sqrt_w[:, None] * reduced
    rhs = sqrt_w[:, None] * target

    singular = np.linalg.svd(A, compute_uv=False)
    tol = singular.max() * max(A.shape) * np.finfo(np.float64).eps if singular.size else 0.0
    rank = int(np.sum(singular > tol))
    condition = float((singular[0] / singular[-1]) ** 2) if singular.size and singular[-1] > 0 else float("inf")
    ridged = False
    if rank < p - 1:
        gram = A.T @ A + 1e-10 * np.eye(p - 1)
        head = np.linalg.solve(gram, A.T @ rhs)
        ridged = True
    else:
        head = np.linalg.lstsq(A, rhs, rcond=None)[0]
    tail = span[None, :] - head.sum(axis=0, keepdims=True)
    phi = np.vstack([head, tail])

    base = float(v_empty[0]) if np.all(v_empty == v_empty[0]) else float(np.mean(v_empty))
    return AttributionResult(
        base_value=base,
        phi=phi,
        mode=None,
        m_coalitions=M,
        condition_number=condition,
        ridged=ridged,
    )


def exact_retrain_budget(n_train: int, n_inf: int, M: int) -> int:
    """Token price of M exact-retraining coalition evaluations."""
    return M * token_cost(n_train, n_inf)


def approx_retrain_budget(n_train: int, n_inf: int, M: int, L: int) -> int:
    """Single-forward-pass lower bound on the approximate-retraining price.

    All ``M * L * n_inf`` hybrid rows packed into one pass would cost
    ``C(n_train, 2) + n_train * n_inf * M * L``; the sequential implementation
    actually pays the context term once per sample, so this is a lower bound.
    """
    return token_cost(n_train, n_inf * M * L)


def kernel_shap(predictor: Predictor, train: Dataset, inference_features, M: int,
                mode: RetrainMode, rng_seed: int) -> AttributionResult:
    """Per-feature attributions of the model's predictions for each query row.

    Samples coalitions, evaluates them by the requested retraining route,
    and solves the constrained weighted surrogate. The empty-coalition value
    is the context's positive-class base rate (the no-feature posterior);
    the full-coalition value comes from one full-feature call.
    """
    X = np.asarray(inference_features, dtype=np.float64)
    p = train.n_features
    subsets = sample_coalitions(p, M, rng_seed)
    exhaustive = M >= 2 ** p - 2
    design = np.stack([s.mask.astype(np.float64) for s in subsets])
    if exhaustive:
        weights = np.array([shap_kernel_weight(p, s.size) for s in subsets])
    else:
        weights = np.ones(len(subsets))

    tokens_before, calls_before = predictor.ledger.snapshot()
    values = np.empty((len(subsets), X.shape[0]))
    for k, subset in enumerate(subsets):
        if mode.is_exact:
            values[k] = value_exact_retrain(predictor, train, X, subset)
        else:
            values[k] = value_approx_retrain(
                predictor, train, X, subset, mode.L, substream(rng_seed, _STREAM_IMPUTATION, k)
            )
    v_full = predictor.predict(train, X).probabilities
    v_empty = train.base_rate
    tokens_after, calls_after = predictor.ledger.snapshot()

    result = solve_weighted_surrogate(design, weights, values, v_empty, v_full)
    if mode.is_exact:
        budget = exact_retrain_budget(train.n_rows, X.shape[0], len(subsets))
    else:
        budget = approx_retrain_budget(train.n_rows, X.shape[0], len(subsets), mode.L)
    return replace(
        result,
        mode=mode,
        token_budget=budget,
        token_connections=tokens_after - tokens_before,
        evaluation_calls=calls_after - calls_before,
    )


def shapley_from_subset_values(values_by_mask: dict[int, np.ndarray], p: int) -> np.ndarray:
    """Shapley values from a complete table of subset values.

    ``values_by_mask`` maps each of the 2^p bitmask keys to a value vector;
    returns the (p, n) attribution matrix of the weighted average marginal
    contributions.
    """
    size_weight = [math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)]
    some_value = next(iter(values_by_mask.values()))
    phi = np.zeros((p, np.asarray(some_value).shape[0]))
    for mask in range(2 ** p):
        v_mask = np.asarray(values_by_mask[mask], dtype=np.float64)
        s = mask.bit_count()
        for j in range(p):
            if mask & (1 << j):
                continue
            gain = np.asarray(values_by_mask[mask | (1 << j)], dtype=np.float64) - v_mask
            phi[j] += size_weight[s] * gain
    return phi


def _subset_value_table(predictor: Predictor, train: Dataset, X: np.ndarray) -> dict[int, np.ndarray]:
    p = train.n_features
    table: dict[int, np.ndarray] = {0: np.full(X.shape[0], train.base_rate)}
    for mask in range(1, 2 ** p):
        indices = [j for j in range(p) if mask & (1 << j)]
        subset = FeatureSubset.from_indices(p, indices)
        table[mask] = value_exact_retrain(predictor, train, X, subset)
    return table


def exact_shapley_matrix(predictor: Predictor, train: Dataset, inference_features) -> np.ndarray:
    """Exact Shapley values for every query row at once, shape (p, n_inf).

    Evaluates each of the 2^p subsets once (memoized) over the whole query
    matrix; the empty coalition takes the base-rate convention.
    """
    p = train.n_features
    if p > BRUTEFORCE_MAX_FEATURES:
        raise ContractViolation(f"brute force limited to p <= {BRUTEFORCE_MAX_FEATURES}")
    X = np.asarray(inference_features, dtype=np.float64)
    return shapley_from_subset_values(_subset_value_table(predictor, train, X), p)


def exact_shapley_bruteforce(predictor: Predictor, train: Dataset, x_star) -> np.ndarray:
    """Exact Shapley values for a single query row, shape (p,)."""
    x = np.asarray(x_star, dtype=np.float64).reshape(1, -1)
    return exact_shapley_matrix(predictor, train, x)[:, 0]


def shap_error_metric(estimate, exact) -> float:
    """Mean (over query rows) total absolute attribution deviation."""
    est = estimate.phi if isinstance(estimate, AttributionResult) else np.asarray(estimate, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if est.ndim == 1:
        est = est[:, None]
    if exact.ndim == 1:
        exact = exact[:, None]
    if est.shape != exact.shape:
        raise ContractViolation(f"attribution shapes differ: {est.shape} vs {exact.shape}")
    return float(np.mean(np.sum(np.abs(est - exact), axis=0)))
