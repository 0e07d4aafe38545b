"""Bayesian log-contrast regression with spatially clustered coefficients.

Compositional covariates enter through log contrasts whose coefficients sum
to zero; locations share coefficients through a random partition whose prior
couples a mixture-of-finite-mixtures law with a graph neighbor-agreement
factor. Fitting is collapsed Gibbs; the smoothing weight is chosen by LPML;
a representative partition comes from the least-squares co-membership draw.
"""

from .composition import (
    CompositionalDataset,
    CompositionMatrix,
    HelmertProjection,
    LogContrastDesign,
    build_design,
    helmert_submatrix,
    inverse_projection,
    log_transform,
    recover_constrained,
)
from .errors import InputError, NumericalError, SchemaError
from .graph import SpatialGraph, mrf_log_weight
from .kernels import active_backend, available_backends, set_backend
from .mfm import (
    MfmHyper,
    VnTable,
    build_vn_table,
    partition_log_prior,
    urn_log_weights,
)
from .sampler import (
    ChainTrace,
    ClusterState,
    EtaPrior,
    FitConfig,
    NigHyper,
    default_config,
    run_chain,
    sample_labels,
    update_cluster_params,
    update_eta,
)
from .summary import (
    PosteriorSummary,
    dahl_select,
    estimation_metrics,
    lpml,
    membership_matrix,
    rand_index,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "ChainTrace",
    "ClusterState",
    "CompositionMatrix",
    "CompositionalDataset",
    "EtaPrior",
    "FitConfig",
    "HelmertProjection",
    "InputError",
    "LogContrastDesign",
    "MfmHyper",
    "NigHyper",
    "NumericalError",
    "PosteriorSummary",
    "SchemaError",
    "SpatialGraph",
    "VnTable",
    "active_backend",
    "available_backends",
    "build_design",
    "build_vn_table",
    "dahl_select",
    "default_config",
    "estimation_metrics",
    "helmert_submatrix",
    "inverse_projection",
    "log_transform",
    "lpml",
    "membership_matrix",
    "mrf_log_weight",
    "partition_log_prior",
    "rand_index",
    "recover_constrained",
    "run_chain",
    "sample_labels",
    "set_backend",
    "summarize",
    "update_cluster_params",
    "update_eta",
    "urn_log_weights",
]
