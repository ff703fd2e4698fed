"""Supervised convex clustering: fusion-penalized centroids guided by a GLM-type supervising variable."""
from .adaptive import AdaptiveResult, adaptive_fit, adjusted_weights, residualize_y
from .admm import (
    FitState,
    SCCProblem,
    SolveReport,
    SolverOptions,
    build_difference_matrix,
    objective,
    prox_group_lasso,
    scc_solve,
)
from .biclust import BiclustProblem, BiclustState, biclust_solve, doubly_solve, heatmap_order
from .exceptions import (
    ClippingWarning,
    ConfigError,
    ConnectivityWarning,
    DataError,
    DegenerateInputError,
    FamilyMismatchError,
    FuseclustError,
    NoSelectionError,
    TargetNotReachedError,
)
from .losses import (
    Family,
    eval_grad,
    eval_loss,
    family,
    inverse_link,
    link,
    loss_center,
    null_deviance,
    one_hot,
    surv,
)
from .selection import (
    ClusterAssignment,
    SolvePath,
    StabilityResult,
    adjusted_rand_index,
    extract_clusters,
    fit_n_clusters,
    lambda_bounds,
    solve_path,
    stability_select,
)
from .simulate import SimOutput, simulate
from .weights import WeightGraph, build_weights, column_weights, default_alpha, gower_distance, gower_matrix

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
