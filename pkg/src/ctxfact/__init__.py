"""Context-aware factorization engine.

Trains per-dimension feature matrices for a user-supplied linear
preference model (a sum of elementwise products over dimension feature
vectors) by alternating least squares with decomposed handling of
missing feedback, on implicit or explicit data.
"""

from .dataspace import (
    START_SENTINEL,
    ColumnSchema,
    Dataspace,
    Transaction,
    TransactionTable,
    Vocabulary,
    build_dataspace,
    derive_seasonality,
    derive_sequentiality,
    load_transactions,
    time_split,
    write_transactions,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    CtxfactError,
    ModelParseError,
    ModelValidationError,
    PersistenceError,
    RowError,
    SchemaError,
    SolverError,
)
from .estimator import FactorizationRecommender
from .independence import (
    avg_kl_divergence,
    context_divergence_table,
    estimate_distributions,
    kl_divergence,
)
from .mixing import (
    ComposedDimension,
    ComposedFactors,
    MixingMatrix,
    build_mixing_matrix,
    compose_entity_features,
    fit_property_features,
    load_assignments,
    session_assignments,
    train_extended,
)
from .preference import (
    Diagnostic,
    PreferenceModel,
    default_aliases,
    enumerate_models,
    model_complexity,
    parse_model,
    possible_interactions,
    render_model,
    validate_model,
)
from .ranking import (
    Query,
    RecallResult,
    evaluate_recall,
    predict,
    recall_at_n,
    recommend_topn,
    score_items,
)
from .solver import (
    FactorModel,
    TrainConfig,
    accumulate_observed_part,
    assemble_missing_part,
    compute_loss_naive,
    init_model,
    solve_column,
    split_model_terms,
    train,
)
from .store import load_model, save_model
from .weighting import WeightingScheme, weight_missing, weight_observed

__version__ = "0.1.0"

__all__ = [
    "START_SENTINEL",
    "ColumnSchema",
    "ComposedDimension",
    "ComposedFactors",
    "ConfigError",
    "ConsistencyError",
    "CtxfactError",
    "Dataspace",
    "Diagnostic",
    "FactorModel",
    "FactorizationRecommender",
    "MixingMatrix",
    "ModelParseError",
    "ModelValidationError",
    "PersistenceError",
    "PreferenceModel",
    "Query",
    "RecallResult",
    "RowError",
    "SchemaError",
    "SolverError",
    "Transaction",
    "TransactionTable",
    "TrainConfig",
    "Vocabulary",
    "WeightingScheme",
    "accumulate_observed_part",
    "assemble_missing_part",
    "avg_kl_divergence",
    "build_dataspace",
    "build_mixing_matrix",
    "compose_entity_features",
    "compute_loss_naive",
    "context_divergence_table",
    "default_aliases",
    "derive_seasonality",
    "derive_sequentiality",
    "enumerate_models",
    "estimate_distributions",
    "evaluate_recall",
    "fit_property_features",
    "init_model",
    "kl_divergence",
    "load_assignments",
    "load_model",
    "load_transactions",
    "model_complexity",
    "parse_model",
    "possible_interactions",
    "predict",
    "recall_at_n",
    "recommend_topn",
    "render_model",
    "save_model",
    "score_items",
    "session_assignments",
    "solve_column",
    "split_model_terms",
    "time_split",
    "train",
    "train_extended",
    "validate_model",
    "weight_missing",
    "weight_observed",
    "write_transactions",
]
