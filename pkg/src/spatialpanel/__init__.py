"""Spatial panel estimation with cluster-masked Durbin spillovers."""

from .dgp import (
    ClusterRecipe,
    DgpConfig,
    ParamSummary,
    RecoveryReport,
    SyntheticData,
    WeightRecipe,
    export_bundle,
    generate,
    load_config,
    replication_seed,
    run_recovery,
    structural_residuals,
    true_parameter_map,
)
from .effects import (
    EffectsRow,
    EffectsTable,
    ImpactMatrix,
    aggregate_impact_matrix,
    effects_dispersion,
    feedback_loop_share,
    impact_matrix,
    summary_measures,
)
from .errors import (
    AllVariablesTimeInvariantError,
    DataFormatError,
    DimensionMismatchError,
    DuplicateCoordinatesError,
    IndexOutOfRangeError,
    InadmissibleRhoError,
    NoCommonCoefficientsError,
    NonPositiveExponentError,
    NonPsdCovarianceError,
    RankDeficientError,
    RhoOnBoundaryError,
    RhoOutOfBoundsError,
    SelfNeighborError,
    SpatialPanelError,
    UnknownClusterError,
    UnknownVariableError,
)
from .estimator import (
    FAMILIES,
    SIGN_CONVENTION,
    DesignMatrix,
    FitResult,
    ModelSpec,
    build_design,
    concentrated_loglik,
    fit,
    fit_sac,
    fit_sem,
    log_det_factor,
)
from .inference import HausmanResult, chi2_upper_tail, hausman_test
from .panel import (
    OlsResult,
    RegionPanel,
    fe_estimate,
    load_panel_csv,
    pooled_ols,
    re_estimate,
    save_panel_csv,
    within_transform,
)
from .weights import (
    EARTH_RADIUS_KM,
    ClusterIndicator,
    Coordinate,
    WeightMatrix,
    build_contiguity,
    build_from_distances,
    build_inverse_distance,
    load_clusters,
    load_coordinates,
    load_distances,
    mask_by_cluster,
    row_normalize,
    save_weights_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AllVariablesTimeInvariantError",
    "ClusterIndicator",
    "ClusterRecipe",
    "Coordinate",
    "DataFormatError",
    "DesignMatrix",
    "DgpConfig",
    "DimensionMismatchError",
    "DuplicateCoordinatesError",
    "EARTH_RADIUS_KM",
    "EffectsRow",
    "EffectsTable",
    "FAMILIES",
    "FitResult",
    "HausmanResult",
    "ImpactMatrix",
    "IndexOutOfRangeError",
    "InadmissibleRhoError",
    "ModelSpec",
    "NoCommonCoefficientsError",
    "NonPositiveExponentError",
    "NonPsdCovarianceError",
    "OlsResult",
    "ParamSummary",
    "RankDeficientError",
    "RecoveryReport",
    "RegionPanel",
    "RhoOnBoundaryError",
    "RhoOutOfBoundsError",
    "SIGN_CONVENTION",
    "SelfNeighborError",
    "SpatialPanelError",
    "SyntheticData",
    "UnknownClusterError",
    "UnknownVariableError",
    "WeightMatrix",
    "WeightRecipe",
    "aggregate_impact_matrix",
    "build_contiguity",
    "build_design",
    "build_from_distances",
    "build_inverse_distance",
    "chi2_upper_tail",
    "concentrated_loglik",
    "effects_dispersion",
    "export_bundle",
    "fe_estimate",
    "feedback_loop_share",
    "fit",
    "fit_sac",
    "fit_sem",
    "generate",
    "hausman_test",
    "impact_matrix",
    "load_clusters",
    "load_config",
    "load_coordinates",
    "load_distances",
    "load_panel_csv",
    "log_det_factor",
    "mask_by_cluster",
    "pooled_ols",
    "re_estimate",
    "replication_seed",
    "row_normalize",
    "run_recovery",
    "save_panel_csv",
    "save_weights_csv",
    "structural_residuals",
    "summary_measures",
    "true_parameter_map",
    "within_transform",
]
