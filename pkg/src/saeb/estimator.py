"""Scikit-learn style front end over the functional fitting core.

SmallAreaModel keeps its constructor arguments verbatim (so ``get_params`` /
``set_params`` / ``clone`` compose with the wider ecosystem), standardizes
covariates by default, and exposes the posterior through ``summary``,
``predict``, ``predict_last_quarter``, and ``diagnostics``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import diagnostics as diag
from . import mcmc
from .errors import SpecError
from .modelspec import ModelSpec, PredictorSpec, PriorSpec, get_family
from .panel import PanelDataset, RegionGraph, standardize_covariates


class SmallAreaModel(BaseEstimator):
    """Hierarchical area-by-quarter model fit by adaptive MCMC.

    Parameters mirror the model declaration: the observation ``family``
    (poisson, negbin, binomial, beta, multinomial); which covariate groups
    enter the linear predictor (None means all of that group); the offset
    rule and random-effect structure (both resolved automatically by
    default); the prior settings; and the sampler settings.

    Example
    -------
    >>> from saeb import SmallAreaModel, simulate, ScenarioConfig, default_graph
    >>> data, truth = simulate(ScenarioConfig(family="binomial", seed=1))
    >>> model = SmallAreaModel("binomial", iterations=4000, burn_in=1000,
    ...                        num_chains=2, seed=1)
    >>> model.fit(data, default_graph())                    # doctest: +ELLIPSIS
    SmallAreaModel(...)
    >>> table = model.summary()
    >>> table.lookup("intercept").mean                      # doctest: +SKIP
    """

    def __init__(self, family: str = "poisson", *,
                 standardize: bool = True,
                 include_intercept: bool = True,
                 regional_terms=None,
                 temporal_terms=None,
                 spatiotemporal_terms=None,
                 offset_rule: str = "auto",
                 effect_structure: str = "auto",
                 trend_structure: str = "rw1",
                 ar1_rho: float = 0.9,
                 coefficient_sd: float = 1000.0,
                 precision_shape: float = 1.0,
                 precision_rate: float = 0.0005,
                 dispersion_shape: float = 1.0,
                 dispersion_rate: float = 0.01,
                 num_chains: int = 4,
                 iterations: int = 20000,
                 burn_in: int = 5000,
                 thinning: int = 5,
                 adaptation_window: int = 50,
                 seed: int = 0):
        self.family = family
        self.standardize = standardize
        self.include_intercept = include_intercept
        self.regional_terms = regional_terms
        self.temporal_terms = temporal_terms
        self.spatiotemporal_terms = spatiotemporal_terms
        self.offset_rule = offset_rule
        self.effect_structure = effect_structure
        self.trend_structure = trend_structure
        self.ar1_rho = ar1_rho
        self.coefficient_sd = coefficient_sd
        self.precision_shape = precision_shape
        self.precision_rate = precision_rate
        self.dispersion_shape = dispersion_shape
        self.dispersion_rate = dispersion_rate
        self.num_chains = num_chains
        self.iterations = iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.adaptation_window = adaptation_window
        self.seed = seed

    # -- declaration ---------------------------------------------------

    def build_spec(self) -> ModelSpec:
        def terms(value):
            return tuple(value) if value is not None else None

        spec = ModelSpec(
            family=get_family(self.family),
            predictor=PredictorSpec(
                include_intercept=self.include_intercept,
                regional_terms=terms(self.regional_terms),
                temporal_terms=terms(self.temporal_terms),
                spatiotemporal_terms=terms(self.spatiotemporal_terms),
                offset_rule=self.offset_rule,
                effect_structure=self.effect_structure,
                trend_structure=self.trend_structure,
                ar1_rho=self.ar1_rho,
            ),
            priors=PriorSpec(
                coefficient_sd=self.coefficient_sd,
                precision_shape=self.precision_shape,
                precision_rate=self.precision_rate,
                dispersion_shape=self.dispersion_shape,
                dispersion_rate=self.dispersion_rate,
            ),
        )
        spec.validate()
        return spec

    def build_config(self) -> mcmc.MCMCConfig:
        return mcmc.MCMCConfig(
            num_chains=self.num_chains,
            iterations=self.iterations,
            burn_in=self.burn_in,
            thinning=self.thinning,
            adaptation_window=self.adaptation_window,
            base_seed=self.seed,
        )

    # -- fitting ---------------------------------------------------------

    def fit(self, dataset: PanelDataset, graph: RegionGraph | None = None):
        """Run the chains on (optionally standardized) data; returns self."""
        spec = self.build_spec()
        work = standardize_covariates(dataset) if self.standardize else dataset
        self.spec_ = spec
        self.graph_ = graph
        self.dataset_ = work
        self.raw_dataset_ = dataset
        self.samples_ = mcmc.fit(work, spec, self.build_config(), graph)
        return self

    def _check_fitted(self):
        if not hasattr(self, "samples_"):
            raise SpecError("call fit before requesting results")

    # -- results -----------------------------------------------------------

    def summary(self, scale: str = "raw") -> mcmc.FitSummary:
        self._check_fitted()
        return mcmc.summarize(self.samples_, scale=scale)

    def predict(self) -> np.ndarray:
        """In-sample posterior mean of the target per (region, quarter)."""
        self._check_fitted()
        return self.summary(scale="standardized").fitted_mean

    def predict_last_quarter(self, dataset: PanelDataset | None = None,
                             graph: RegionGraph | None = None) -> mcmc.HoldoutPrediction:
        """Refit on the first T-1 quarters and predict the terminal quarter."""
        spec = self.build_spec()
        data = dataset if dataset is not None else getattr(self, "raw_dataset_", None)
        if data is None:
            raise SpecError("pass a dataset or fit the model first")
        work = standardize_covariates(data) if self.standardize else data
        use_graph = graph if graph is not None else getattr(self, "graph_", None)
        return mcmc.predict_holdout(work, spec, self.build_config(), use_graph)

    def psrf(self, name: str | None = None):
        """R-hat of one parameter, or the full table when name is None."""
        self._check_fitted()
        if name is None:
            return mcmc.psrf_table(self.samples_)
        return mcmc.psrf(self.samples_, name)

    def diagnostics(self, include_cpo: bool = True,
                    cpo_scale: str = "native") -> diag.DiagnosticsReport:
        self._check_fitted()
        return diag.build_report(self.samples_, self.dataset_, self.spec_,
                                 include_cpo=include_cpo, cpo_scale=cpo_scale)
