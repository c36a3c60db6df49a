"""Bayesian spatially varying change-point models for areal time series.

The package fits Tobit change-point models to gridded longitudinal data
(visual fields), with a dissimilarity-weighted multivariate CAR prior
linking site-level intercepts, slopes, variance parameters, and latent
change points. It also ships the non-spatial comparison models, model
diagnostics (DIC, MSPE, Geweke, progression metrics), and the simulation
study machinery behind the ``spcp`` command line tool.
"""


class SpcpError(Exception):
    """Base class for errors raised by this package."""


class DataError(SpcpError):
    """Invalid input data or configuration (CLI exit code 1)."""


class NumericError(SpcpError):
    """Numerical failure during sampling or post-processing (CLI exit code 2)."""


from .graph import (  # noqa: E402
    SpatialGraph,
    PrecisionMatrix,
    build_vf_graph,
    adjacency_weight,
    alpha_upper_bound,
    precision_matrix,
    standard_vf54_layout,
    synthetic_garway_heath_angles,
)
from .mcar import McarHyper, mcar_log_density, mcar_sample, conditional_moments  # noqa: E402
from .likelihood import (  # noqa: E402
    VFSeries,
    SiteParams,
    observed_cp,
    design_row,
    site_moments,
    tobit_log_lik,
    latent_gaussian_log_lik,
)
from .truncnorm import truncated_normal  # noqa: E402
from .sampler import (  # noqa: E402
    ChainState,
    McmcConfig,
    PosteriorSamples,
    SpatialCpConfig,
    run_chain,
)
from .variants import ModelSpec, NonspatialConfig, PlrConfig, fit  # noqa: E402
from .diagnostics import (  # noqa: E402
    FitDiagnostics,
    ProgressionMetric,
    dic,
    mspe,
    tobit_mean,
    geweke,
    cp_probability,
    progression_metric,
    logistic_diagnostic,
    credible_interval,
)

__version__ = "0.1.0"

__all__ = [
    "SpcpError",
    "DataError",
    "NumericError",
    "SpatialGraph",
    "PrecisionMatrix",
    "build_vf_graph",
    "adjacency_weight",
    "alpha_upper_bound",
    "precision_matrix",
    "standard_vf54_layout",
    "synthetic_garway_heath_angles",
    "McarHyper",
    "mcar_log_density",
    "mcar_sample",
    "conditional_moments",
    "VFSeries",
    "SiteParams",
    "observed_cp",
    "design_row",
    "site_moments",
    "tobit_log_lik",
    "latent_gaussian_log_lik",
    "truncated_normal",
    "ChainState",
    "McmcConfig",
    "PosteriorSamples",
    "SpatialCpConfig",
    "run_chain",
    "ModelSpec",
    "NonspatialConfig",
    "PlrConfig",
    "fit",
    "FitDiagnostics",
    "ProgressionMetric",
    "dic",
    "mspe",
    "tobit_mean",
    "geweke",
    "cp_probability",
    "progression_metric",
    "logistic_diagnostic",
    "credible_interval",
]
