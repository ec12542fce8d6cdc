"""icx: interpretability for in-context learners.

For a model that consumes its training set at inference time, "retraining"
on a feature or observation subset is a single forward pass. This package
exploits that to compute feature effects (ICE/PD/ALE), exact-retraining
Kernel SHAP, LOCO and SAGE importance, and training-data valuation, with
every call priced under a pairwise token-connection cost model.
"""

from .cost import CostLedger, token_cost
from .dataset import (
    ContractViolation,
    Dataset,
    EmptyContextError,
    FeatureSubset,
    ObservationSubset,
    restrict_features,
    restrict_observations,
    standardize_columns,
)
from .effects import (
    DegenerateGridError,
    EffectCurve,
    GridSpec,
    GridStrategy,
    ale,
    build_grid,
    grid_for_feature,
    ice,
    naive_ice,
    naive_pd,
    pd,
)
from .importance import ImportanceReport, loco, sage
from .io import IngestError, load_csv
from .predictor import (
    PredictionBatch,
    Predictor,
    ReferencePredictor,
    reference_gradient_wrt_train,
    reference_predict,
)
from .risk import (
    DegenerateLabelsError,
    NonDifferentiableRiskError,
    RiskKind,
    auc_score,
    empirical_risk,
)
from .rng import substream
from .shapley import (
    AttributionResult,
    BoundaryCoalitionError,
    CoalitionDesign,
    InsufficientCoalitionDiversityError,
    RetrainMode,
    approx_retrain_budget,
    exact_retrain_budget,
    exact_shapley_bruteforce,
    exact_shapley_matrix,
    kernel_shap,
    sample_coalitions,
    shap_error_metric,
    shap_kernel_weight,
    shapley_from_subset_values,
    solve_weighted_surrogate,
    value_approx_retrain,
    value_exact_retrain,
)
from .synth import SynthSpec, split_rows, synth_generate, take_rows
from .valuation import (
    ContextSelection,
    DataValueReport,
    data_shapley_context,
    data_shapley_values,
    loo,
    sensitivity_data_values,
    sensitivity_feature_effects,
)
from .wire import BackendError, ExternalPredictor, RemoteError, TransportError

__version__ = "0.1.0"
