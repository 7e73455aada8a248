"""Patient-specific game-based instance transfer for UPDRS severity regression."""

from psgt.dataset import (
    Dataset,
    Record,
    SubjectSeries,
    TargetSplit,
    feature_matrix,
    load_dataset,
    make_synthetic_dataset,
    make_target_split,
)
from psgt.forest import CartForestRegressor, Forest, ForestConfig, fit_forest, predict
from psgt.metrics import MetricsReport, mae, rmse, vol
from psgt.shapley import (
    CoalitionFamily,
    Game,
    ShapleyVector,
    brute_force_shapley,
    build_family,
    exact_shapley,
    normalize_weights,
    simplified_shapley,
    squash,
)
from psgt.transfer import (
    PSGTRegressor,
    TransferConfig,
    allocate_counts,
    rank_subjects,
    run_psgt,
    run_rf,
    run_st,
    score_instances,
    select_instances,
    select_top_k,
    subject_shapley,
)

__version__ = "0.1.0"
