"""Bayesian small-area estimation for area-by-quarter labor market panels."""

__version__ = "0.1.0"

from .errors import (
    AsymmetryError,
    ConfigError,
    DiagnosticsError,
    DisconnectedGraphError,
    DomainError,
    GridIncompleteError,
    InconsistentCountsError,
    LinkDomainError,
    NonFiniteStartError,
    SaebError,
    SpecError,
)
from .panel import (
    PanelDataset,
    PanelObservation,
    PanelSchema,
    RegionGraph,
    load_adjacency,
    load_panel,
    standardize_covariates,
    write_panel,
)
from .modelspec import (
    FAMILIES,
    ModelSpec,
    PredictorSpec,
    PriorSpec,
    build_design,
    get_family,
    link_apply,
    model_spec,
    read_spec_file,
)
from .mcmc import (
    FitSummary,
    MCMCConfig,
    ParameterState,
    PosteriorSamples,
    fit,
    log_posterior,
    predict_holdout,
    psrf,
    summarize,
)
from .diagnostics import (
    DiagnosticsReport,
    build_report,
    combine_dic,
    cpo,
    dic,
    direct_estimate,
    log_score,
    pit,
    rrmse_model,
)
from .simulate import ScenarioConfig, TruthRecord, default_graph, simulate
from .estimator import SmallAreaModel

__all__ = [
    "AsymmetryError", "ConfigError", "DiagnosticsError", "DiagnosticsReport",
    "DisconnectedGraphError", "DomainError", "FAMILIES", "FitSummary",
    "GridIncompleteError", "InconsistentCountsError", "LinkDomainError",
    "MCMCConfig", "ModelSpec", "NonFiniteStartError", "PanelDataset",
    "PanelObservation", "PanelSchema", "ParameterState", "PosteriorSamples",
    "PredictorSpec", "PriorSpec", "RegionGraph", "SaebError", "ScenarioConfig",
    "SmallAreaModel", "SpecError", "TruthRecord", "build_design",
    "build_report", "combine_dic", "cpo", "default_graph", "dic",
    "direct_estimate", "fit", "get_family", "link_apply", "load_adjacency",
    "load_panel", "log_posterior", "log_score", "model_spec", "pit",
    "predict_holdout", "psrf", "read_spec_file", "rrmse_model", "simulate",
    "standardize_covariates", "summarize", "write_panel",
]
