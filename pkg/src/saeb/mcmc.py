"""Multi-chain adaptive Metropolis-within-Gibbs inference.

``fit`` runs independent chains of the JIT engine from over-dispersed starts
and collects thinned post-burn-in draws.  ``log_posterior`` is the plain
numpy reference for the target density; the engine is tested against it.
Summaries use pooled chains with type-7 quantiles so tables are reproducible
bit for bit from stored draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import _engine, effects, likelihoods
from .errors import NonFiniteStartError, SpecError
from .modelspec import (
    CATEGORY_LABELS,
    DesignMatrices,
    ModelSpec,
    build_design,
    category_probabilities,
)
from .panel import (
    CovariateScale,
    PanelDataset,
    RegionGraph,
    coefficients_to_raw,
)


@dataclass(frozen=True)
class MCMCConfig:
    """Sampler settings; defaults give 3000 stored draws per chain."""

    num_chains: int = 4
    iterations: int = 20000
    burn_in: int = 5000
    thinning: int = 5
    adaptation_window: int = 50
    base_seed: int = 0
    target_acceptance: float = 0.44
    prior_only: bool = False

    def __post_init__(self):
        if self.num_chains < 2:
            raise SpecError("at least two chains are required for convergence checks")
        if not 0 <= self.burn_in < self.iterations:
            raise SpecError("burn_in must be smaller than iterations")
        if self.thinning < 1:
            raise SpecError("thinning must be at least 1")
        if self.adaptation_window < 1:
            raise SpecError("adaptation_window must be at least 1")

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations - self.burn_in + self.thinning - 1) // self.thinning


@dataclass
class ParameterState:
    """One point in parameter space.

    ``coefficients`` is (Q, k) with Q = 1 except for the composition family.
    Exactly one of the structured block (spatial, trend, cell) or the
    unstructured block (area, period) is populated, or neither.
    """

    coefficients: np.ndarray
    spatial: np.ndarray | None = None
    trend: np.ndarray | None = None
    cell: np.ndarray | None = None
    area: np.ndarray | None = None
    period: np.ndarray | None = None
    precisions: dict[str, float] = field(default_factory=dict)
    dispersion: float | None = None


STRUCTURED_PRECISIONS = ("prec_spatial", "prec_trend", "prec_cell")
UNSTRUCTURED_PRECISIONS = ("prec_area", "prec_period")


def precision_names(structure: str) -> tuple[str, ...]:
    if structure == "structured":
        return STRUCTURED_PRECISIONS
    if structure == "unstructured":
        return UNSTRUCTURED_PRECISIONS
    return ()


def eta_from_state(state: ParameterState, design: DesignMatrices) -> np.ndarray:
    """Linear predictors for every design row; shape (N, Q)."""
    coefs = np.atleast_2d(state.coefficients)
    eta = design.offset[:, None] + design.X @ coefs.T
    j = design.row_region - 1
    t = design.row_quarter - 1
    if state.spatial is not None:
        eta[:, 0] += state.spatial[j]
    if state.trend is not None:
        eta[:, 0] += state.trend[t]
    if state.cell is not None:
        eta[:, 0] += np.asarray(state.cell).reshape(-1)
    if state.area is not None:
        eta += np.atleast_2d(state.area)[:, j].T
    if state.period is not None:
        eta += np.atleast_2d(state.period)[:, t].T
    return eta


def _log_gamma_prior(value: float, shape: float, rate: float) -> float:
    """Gamma(shape, rate) log density of ``value`` plus the log-scale Jacobian."""
    return (shape * math.log(rate) - float(gammaln(shape))
            + shape * math.log(value) - rate * value)


def log_posterior(state: ParameterState, dataset: PanelDataset, spec: ModelSpec,
                  graph: RegionGraph | None = None,
                  design: DesignMatrices | None = None) -> float:
    """Unnormalized log posterior density at ``state``.

    Sum of the log likelihood over all cells, Gaussian coefficient priors,
    the latent-field log densities, and Gamma hyperpriors on each precision
    and the dispersion, both with their log-scale Jacobians.  Returns -inf
    for states outside the support.
    """
    spec.validate()
    design = design or build_design(dataset, spec)
    structure = spec.effect_structure

    targets = likelihoods.build_targets(dataset, spec.family)
    eta = eta_from_state(state, design)
    eta_in = eta if spec.family.name == "multinomial" else eta[:, 0]
    ll = likelihoods.loglik_eta(targets, eta_in, state.dispersion)
    total = float(np.sum(ll))
    if not np.isfinite(total):
        return -np.inf

    sd = spec.priors.coefficient_sd
    coefs = np.atleast_2d(state.coefficients)
    total += float(np.sum(-0.5 * math.log(2.0 * math.pi * sd * sd)
                          - coefs**2 / (2.0 * sd * sd)))

    shape, rate = spec.priors.precision_shape, spec.priors.precision_rate
    if structure == "structured":
        if graph is None:
            raise SpecError("structured effects need the region graph")
        tau_s = state.precisions["prec_spatial"]
        tau_t = state.precisions["prec_trend"]
        tau_c = state.precisions["prec_cell"]
        total += effects.icar_logdensity(state.spatial, tau_s, graph)
        if spec.predictor.trend_structure == "rw1":
            total += effects.rw1_logdensity(state.trend, tau_t)
        else:
            total += effects.ar1_logdensity(state.trend, tau_t,
                                            spec.predictor.ar1_rho)
        total += effects.iid_logdensity(state.cell, tau_c)
        for tau in (tau_s, tau_t, tau_c):
            total += _log_gamma_prior(tau, shape, rate)
    elif structure == "unstructured":
        tau_a = state.precisions["prec_area"]
        tau_p = state.precisions["prec_period"]
        total += effects.iid_logdensity(np.atleast_2d(state.area).ravel(), tau_a)
        total += effects.iid_logdensity(np.atleast_2d(state.period).ravel(), tau_p)
        for tau in (tau_a, tau_p):
            total += _log_gamma_prior(tau, shape, rate)

    if spec.family.has_dispersion:
        total += _log_gamma_prior(state.dispersion, spec.priors.dispersion_shape,
                                  spec.priors.dispersion_rate)
    return total


def state_deviance(state: ParameterState, dataset: PanelDataset,
                   spec: ModelSpec, design: DesignMatrices | None = None) -> float:
    design = design or build_design(dataset, spec)
    targets = likelihoods.build_targets(dataset, spec.family)
    eta = eta_from_state(state, design)
    eta_in = eta if spec.family.name == "multinomial" else eta[:, 0]
    return likelihoods.deviance(targets, eta_in, state.dispersion)


# ---------------------------------------------------------------------------
# posterior sample container


@dataclass
class PosteriorSamples:
    """Per-chain thinned draws with provenance.

    Coefficient draws are on the scale of the design matrix (standardized
    when the dataset was standardized); the attached record allows exact
    back-transformation.  Precisions and dispersion are stored positive.
    """

    family_name: str
    effect_structure: str
    coef_labels: tuple[str, ...]
    column_names: tuple[str, ...]
    include_intercept: bool
    num_regions: int
    num_quarters: int
    coefficients: np.ndarray              # (C, S, Q, k)
    precisions: dict[str, np.ndarray]     # name -> (C, S)
    dispersion: np.ndarray | None         # (C, S)
    spatial: np.ndarray | None            # (C, S, J)
    trend: np.ndarray | None              # (C, S, T)
    cell: np.ndarray | None               # (C, S, N)
    area: np.ndarray | None               # (C, S, Q, J)
    period: np.ndarray | None             # (C, S, Q, T)
    deviance: np.ndarray                  # (C, S)
    config: MCMCConfig
    design: DesignMatrices
    standardization: dict[str, CovariateScale] | None
    trend_structure: str = "rw1"
    ar1_rho: float = 0.9

    @property
    def num_chains(self) -> int:
        return self.coefficients.shape[0]

    @property
    def draws_per_chain(self) -> int:
        return self.coefficients.shape[1]

    @property
    def num_categories(self) -> int:
        return self.coefficients.shape[2]

    @property
    def fixed_effect_names(self) -> tuple[str, ...]:
        return self.coef_labels

    def parameter_names(self) -> tuple[str, ...]:
        names = list(self.coef_labels)
        if self.dispersion is not None:
            names.append("dispersion")
        names.extend(self.precisions)
        return tuple(names)

    def parameter(self, name: str) -> np.ndarray:
        """Per-chain draws (C, S) of one scalar parameter by name."""
        if name in self.coef_labels:
            idx = self.coef_labels.index(name)
            Q = self.num_categories
            k = self.coefficients.shape[3]
            return self.coefficients[:, :, idx // k, idx % k]
        if name == "dispersion":
            if self.dispersion is None:
                raise SpecError("this fit has no dispersion parameter")
            return self.dispersion
        if name in self.precisions:
            return self.precisions[name]
        for label, arr in (("spatial", self.spatial), ("trend", self.trend)):
            if name.startswith(label + "[") and arr is not None:
                idx = int(name[len(label) + 1:-1]) - 1
                return arr[:, :, idx]
        if name.startswith("cell[") and self.cell is not None:
            j, t = (int(tok) for tok in name[5:-1].split(","))
            return self.cell[:, :, (j - 1) * self.num_quarters + (t - 1)]
        raise SpecError(f"unknown parameter {name!r}")

    def pooled(self, name: str) -> np.ndarray:
        return self.parameter(name).reshape(-1)

    def pooled_coefficients(self) -> np.ndarray:
        """(C*S, Q, k) coefficient draws."""
        c, s, q, k = self.coefficients.shape
        return self.coefficients.reshape(c * s, q, k)

    def state_at(self, chain: int, draw: int) -> "ParameterState":
        """Reconstruct the full parameter state of one stored draw."""
        def grab(arr):
            return arr[chain, draw].copy() if arr is not None else None

        return ParameterState(
            coefficients=self.coefficients[chain, draw].copy(),
            spatial=grab(self.spatial),
            trend=grab(self.trend),
            cell=grab(self.cell),
            area=grab(self.area),
            period=grab(self.period),
            precisions={name: float(arr[chain, draw])
                        for name, arr in self.precisions.items()},
            dispersion=(float(self.dispersion[chain, draw])
                        if self.dispersion is not None else None),
        )


def _coef_labels(column_names, num_categories) -> tuple[str, ...]:
    if num_categories == 1:
        return tuple(column_names)
    labels = []
    for q in range(num_categories):
        labels.extend(f"{name}[{CATEGORY_LABELS[q]}]" for name in column_names)
    return tuple(labels)


def _const_total(targets: likelihoods.Targets) -> float:
    """Kernel terms the engine omits that are constant in (eta, phi)."""
    name = targets.family_name
    if name in ("poisson", "negbin"):
        return float(np.sum(-gammaln(targets.y + 1.0)))
    if name == "binomial":
        return float(np.sum(gammaln(targets.trials + 1.0) - gammaln(targets.y + 1.0)
                            - gammaln(targets.trials - targets.y + 1.0)))
    if name == "multinomial":
        return float(np.sum(gammaln(targets.total + 1.0)
                            - gammaln(targets.counts + 1.0).sum(axis=-1)))
    return 0.0


def _chain_seed(base_seed: int, chain: int) -> int:
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(chain,))
    return int(seq.generate_state(1)[0])


def _initial_coefficients(rng, num_categories, num_cols, spec, design):
    """Over-dispersed N(0,1) starts, shifted into the link domain if needed."""
    coefs = rng.normal(size=(num_categories, num_cols))
    if spec.family.name == "negbin":
        eta_max = (design.offset[:, None] + design.X @ coefs.T).max()
        if eta_max >= 0.0:
            if spec.predictor.include_intercept:
                coefs[:, 0] -= eta_max + 1.0
            else:
                coefs *= 0.01
    return coefs


def fit(dataset: PanelDataset, spec: ModelSpec, config: MCMCConfig | None = None,
        graph: RegionGraph | None = None) -> PosteriorSamples:
    """Run independent chains and collect thinned post-burn-in draws.

    Chains start from over-dispersed coefficient draws (iid N(0,1) per chain
    seed), precisions at 1, dispersion at 1, and effects at zero.  Proposal
    scales adapt during burn-in only.  Raises NonFiniteStartError when a
    chain's initial log posterior is -inf.
    """
    spec.validate()
    config = config or MCMCConfig()
    structure = spec.effect_structure
    if structure == "structured":
        if graph is None:
            raise SpecError("structured effects need an adjacency graph")
        if graph.num_regions != dataset.num_regions:
            raise SpecError("graph and panel disagree on the number of regions")
    design = build_design(dataset, spec)
    targets = likelihoods.build_targets(dataset, spec.family)
    J, T = dataset.num_regions, dataset.num_quarters
    N = J * T
    Q = spec.family.num_predictors
    k = design.X.shape[1]

    if graph is not None:
        indptr, indices = graph.csr()
    else:
        indptr, indices = np.zeros(J + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)

    zeros = np.zeros(N)
    y = targets.y if targets.y is not None else zeros
    trials = targets.trials if targets.trials is not None else zeros
    if targets.rate is not None:
        logr, log1r = np.log(targets.rate), np.log1p(-targets.rate)
    else:
        logr, log1r = zeros, zeros
    ymat = targets.counts if targets.counts is not None else np.zeros((N, 3))
    ntot = targets.total if targets.total is not None else zeros
    const_total = _const_total(targets)

    # covariate group per design column, for the coefficient/field shear moves
    col_kind = np.zeros(k, dtype=np.int64)
    for c, name in enumerate(design.column_names):
        if name in dataset.regional_names:
            col_kind[c] = 1
        elif name in dataset.temporal_names:
            col_kind[c] = 2
        elif name in dataset.spatiotemporal_names:
            col_kind[c] = 3

    chains = []
    for chain in range(config.num_chains):
        rng = np.random.default_rng([config.base_seed, chain])
        init_coefs = _initial_coefficients(rng, Q, k, spec, design)
        result = _engine.run_chain(
            _engine.FAM[spec.family.name], _engine.EFF[structure],
            _engine.TREND[spec.predictor.trend_structure],
            float(spec.predictor.ar1_rho),
            np.ascontiguousarray(design.X), np.ascontiguousarray(design.offset),
            J, T,
            np.ascontiguousarray(y), np.ascontiguousarray(trials),
            np.ascontiguousarray(logr), np.ascontiguousarray(log1r),
            np.ascontiguousarray(ymat), np.ascontiguousarray(ntot),
            indptr, indices, col_kind,
            spec.priors.coefficient_sd**2,
            spec.priors.precision_shape, spec.priors.precision_rate,
            spec.priors.dispersion_shape, spec.priors.dispersion_rate,
            config.iterations, config.burn_in, config.thinning,
            config.adaptation_window, config.target_acceptance,
            _chain_seed(config.base_seed, chain), config.prior_only,
            spec.predictor.include_intercept,
            init_coefs, 0.0, const_total,
        )
        if result[0] == _engine.STATUS_NONFINITE_START:
            raise NonFiniteStartError(
                f"chain {chain} starts with log posterior -inf; "
                "check covariate scaling and the link domain"
            )
        chains.append(result[1:])

    def stack(idx):
        return np.stack([c[idx] for c in chains])

    coef_draws = stack(0)
    prec_stack = stack(6)
    prec_names = precision_names(structure)
    precisions = {name: prec_stack[:, :, i] for i, name in enumerate(prec_names)}
    structured = structure == "structured"
    unstructured = structure == "unstructured"
    return PosteriorSamples(
        family_name=spec.family.name,
        effect_structure=structure,
        coef_labels=_coef_labels(design.column_names, Q),
        column_names=design.column_names,
        include_intercept=spec.predictor.include_intercept,
        num_regions=J,
        num_quarters=T,
        coefficients=coef_draws,
        precisions=precisions,
        dispersion=stack(7) if spec.family.has_dispersion else None,
        spatial=stack(1) if structured else None,
        trend=stack(2) if structured else None,
        cell=stack(3) if structured else None,
        area=stack(4) if unstructured else None,
        period=stack(5) if unstructured else None,
        deviance=stack(8),
        config=config,
        design=design,
        standardization=dataset.standardization,
        trend_structure=spec.predictor.trend_structure,
        ar1_rho=spec.predictor.ar1_rho,
    )


def state_from_posterior_means(samples: PosteriorSamples) -> ParameterState:
    """Plug-in state: every parameter and latent effect at its posterior mean."""
    coefs = samples.pooled_coefficients().mean(axis=0)

    def block_mean(arr):
        if arr is None:
            return None
        flat = arr.reshape((-1,) + arr.shape[2:])
        return flat.mean(axis=0)

    return ParameterState(
        coefficients=coefs,
        spatial=block_mean(samples.spatial),
        trend=block_mean(samples.trend),
        cell=block_mean(samples.cell),
        area=block_mean(samples.area),
        period=block_mean(samples.period),
        precisions={name: float(arr.mean()) for name, arr in samples.precisions.items()},
        dispersion=float(samples.dispersion.mean()) if samples.dispersion is not None else None,
    )


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q2_5: float
    q97_5: float

    def __post_init__(self):
        if self.q2_5 > self.q97_5:
            raise SpecError("quantiles out of order")


@dataclass
class FitSummary:
    """Posterior summary table plus fitted cell-level target means.

    ``fitted_mean`` is (J, T) for the single-predictor families and
    (J, T, 3) category probabilities for the composition family, with
    matching 95% bounds.
    """

    parameters: list[ParameterSummary]
    fitted_mean: np.ndarray
    fitted_lower: np.ndarray
    fitted_upper: np.ndarray
    coefficient_scale: str = "raw"
    notes: dict = field(default_factory=dict)

    def lookup(self, name: str) -> ParameterSummary:
        for row in self.parameters:
            if row.name == name:
                return row
        raise KeyError(name)

    def names(self) -> list[str]:
        return [row.name for row in self.parameters]


def _summary_row(name, draws) -> ParameterSummary:
    q_lo, q_hi = np.quantile(draws, [0.025, 0.975])
    return ParameterSummary(
        name=name, mean=float(draws.mean()),
        sd=float(draws.std(ddof=1)) if draws.size > 1 else 0.0,
        q2_5=float(q_lo), q97_5=float(q_hi),
    )


def iter_eta_draws(samples: PosteriorSamples, chunk: int = 2000):
    """Yield (eta, dispersion) chunks over pooled draws.

    eta has shape (s, N) or (s, N, 2) for the composition family.
    """
    design = samples.design
    coefs = samples.pooled_coefficients()
    S = coefs.shape[0]
    j = design.row_region - 1
    t = design.row_quarter - 1
    spatial = samples.spatial.reshape(S, -1) if samples.spatial is not None else None
    trend = samples.trend.reshape(S, -1) if samples.trend is not None else None
    cell = samples.cell.reshape(S, -1) if samples.cell is not None else None
    area = (samples.area.reshape((S,) + samples.area.shape[2:])
            if samples.area is not None else None)
    period = (samples.period.reshape((S,) + samples.period.shape[2:])
              if samples.period is not None else None)
    disp = samples.dispersion.reshape(-1) if samples.dispersion is not None else None
    multinomial = samples.family_name == "multinomial"
    for start in range(0, S, chunk):
        sl = slice(start, min(start + chunk, S))
        eta = np.einsum("sqk,nk->snq", coefs[sl], design.X) + design.offset[None, :, None]
        if spatial is not None:
            eta[:, :, 0] += spatial[sl][:, j]
        if trend is not None:
            eta[:, :, 0] += trend[sl][:, t]
        if cell is not None:
            eta[:, :, 0] += cell[sl]
        if area is not None:
            eta += area[sl][:, :, j].transpose(0, 2, 1)
        if period is not None:
            eta += period[sl][:, :, t].transpose(0, 2, 1)
        yield (eta if multinomial else eta[:, :, 0]), (disp[sl] if disp is not None else None)


def _fitted_target_draws(samples: PosteriorSamples, eta, disp):
    """Map an eta chunk to target-mean draws."""
    name = samples.family_name
    if name == "multinomial":
        return category_probabilities(eta)
    if name == "poisson":
        return np.exp(eta)
    if name == "negbin":
        out = np.full_like(eta, np.nan)
        ok = eta < 0
        phi = np.broadcast_to(disp[:, None], eta.shape)
        out[ok] = phi[ok] * np.exp(eta[ok]) / (-np.expm1(eta[ok]))
        return out
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))


def summarize(samples: PosteriorSamples, scale: str = "raw") -> FitSummary:
    """Pooled posterior means, sds, and type-7 2.5/97.5% quantiles.

    ``scale`` selects the coefficient scale: "raw" back-transforms draws
    through the standardization record (exactly, per draw); "standardized"
    reports them as sampled.
    """
    if scale not in ("raw", "standardized"):
        raise SpecError("scale must be 'raw' or 'standardized'")
    pooled_n = samples.num_chains * samples.draws_per_chain
    if pooled_n < 100:
        raise SpecError("need at least 100 pooled draws to summarize")

    coefs = samples.pooled_coefficients()
    if scale == "raw" and samples.standardization:
        names = [n for n in samples.column_names if n != "intercept"]
        coefs = coefficients_to_raw(coefs, names, samples.standardization,
                                    include_intercept=samples.include_intercept)
    rows = []
    Q, k = coefs.shape[1], coefs.shape[2]
    for q in range(Q):
        for c in range(k):
            rows.append(_summary_row(samples.coef_labels[q * k + c], coefs[:, q, c]))
    if samples.dispersion is not None:
        rows.append(_summary_row("dispersion", samples.dispersion.reshape(-1)))
    for name, arr in samples.precisions.items():
        rows.append(_summary_row(name, arr.reshape(-1)))

    J, T = samples.num_regions, samples.num_quarters
    N = J * T
    if samples.family_name == "multinomial":
        acc = np.zeros((pooled_n, N, 3))
    else:
        acc = np.zeros((pooled_n, N))
    pos = 0
    for eta, disp in iter_eta_draws(samples):
        vals = _fitted_target_draws(samples, eta, disp)
        acc[pos:pos + vals.shape[0]] = vals
        pos += vals.shape[0]
    mean = acc.mean(axis=0)
    lo, hi = np.quantile(acc, [0.025, 0.975], axis=0)
    shape = (J, T) if samples.family_name != "multinomial" else (J, T, 3)
    return FitSummary(
        parameters=rows,
        fitted_mean=mean.reshape(shape),
        fitted_lower=lo.reshape(shape),
        fitted_upper=hi.reshape(shape),
        coefficient_scale=scale,
        notes={"rate_adjusted": samples.family_name == "beta"},
    )


# ---------------------------------------------------------------------------
# convergence


def psrf(samples: PosteriorSamples | np.ndarray, name: str | None = None) -> float:
    """Split-chain potential scale reduction factor.

    Accepts either a PosteriorSamples with a parameter name or a raw
    (chains, draws) array.  Each chain is split in half; the statistic is
    sqrt(((n-1)/n * W + B/n) / W) over the split sequences.  Constant equal
    chains give 1.0; constant distinct chains give inf.
    """
    if isinstance(samples, PosteriorSamples):
        if name is None:
            raise SpecError("a parameter name is required")
        chains = samples.parameter(name)
    else:
        chains = np.asarray(samples, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise SpecError("PSRF needs at least two chains")
    if chains.shape[1] < 10:
        raise SpecError("PSRF needs at least 10 draws per chain")
    half = chains.shape[1] // 2
    split = np.concatenate([chains[:, :half], chains[:, half:2 * half]], axis=0)
    n = split.shape[1]
    means = split.mean(axis=1)
    W = float(split.var(axis=1, ddof=1).mean())
    B = n * float(means.var(ddof=1))
    if W == 0.0:
        return 1.0 if B <= 1e-300 else np.inf
    v_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(v_hat / W))


def psrf_table(samples: PosteriorSamples) -> dict[str, float]:
    """R-hat for every fixed effect, precision, and the dispersion."""
    return {name: psrf(samples, name) for name in samples.parameter_names()}


# ---------------------------------------------------------------------------
# hold-out prediction


@dataclass
class HoldoutPrediction:
    """Posterior predictive of the final quarter's target means per region."""

    quarter: int
    region_ids: np.ndarray
    mean: np.ndarray       # (J,) or (J, 3)
    lower: np.ndarray
    upper: np.ndarray
    rate_mean: np.ndarray | None
    rate_lower: np.ndarray | None
    rate_upper: np.ndarray | None
    training_samples: PosteriorSamples


def predict_holdout(dataset: PanelDataset, spec: ModelSpec,
                    config: MCMCConfig | None = None,
                    graph: RegionGraph | None = None,
                    holdout: int | None = None) -> HoldoutPrediction:
    """Fit on quarters 1..T-1 and predict the terminal quarter.

    The temporal effect is extended one step through its own model (random
    walk: N(last, 1/tau); AR(1): N(rho*last, 1/tau)) and fresh cell or
    period noise is drawn from its prior per posterior draw.  Only the
    terminal quarter can be held out.
    """
    config = config or MCMCConfig()
    T = dataset.num_quarters
    if holdout is None:
        holdout = T
    if holdout != T:
        raise SpecError("only the terminal quarter can be held out")
    if T < 3:
        raise SpecError("hold-out prediction needs at least three quarters")

    training = dataset.truncate_quarters(T - 1)
    samples = fit(training, spec, config, graph)
    return holdout_from_samples(samples, dataset, spec, seed=config.base_seed)


def holdout_from_samples(samples: PosteriorSamples, dataset: PanelDataset,
                         spec: ModelSpec, seed: int = 0) -> HoldoutPrediction:
    """Predictive summary of the final quarter from a fit on the earlier ones."""
    T = dataset.num_quarters
    design_full = build_design(dataset, spec)
    J = dataset.num_regions
    rows = np.array([design_full.row_index(j + 1, T) for j in range(J)])

    coefs = samples.pooled_coefficients()
    S = coefs.shape[0]
    rng = np.random.default_rng([seed, 0x9E3779B9])
    eta = (np.einsum("sqk,nk->snq", coefs, design_full.X[rows])
           + design_full.offset[rows][None, :, None])
    if samples.effect_structure == "structured":
        spatial = samples.spatial.reshape(S, -1)
        trend = samples.trend.reshape(S, -1)
        tau_t = samples.precisions["prec_trend"].reshape(-1)
        tau_c = samples.precisions["prec_cell"].reshape(-1)
        last = trend[:, -1]
        anchor = last if samples.trend_structure == "rw1" else samples.ar1_rho * last
        trend_next = anchor + rng.standard_normal(S) / np.sqrt(tau_t)
        fresh = rng.standard_normal((S, J)) / np.sqrt(tau_c)[:, None]
        eta[:, :, 0] += spatial + trend_next[:, None] + fresh
    elif samples.effect_structure == "unstructured":
        Q = samples.num_categories
        area = samples.area.reshape((S,) + samples.area.shape[2:])
        tau_p = samples.precisions["prec_period"].reshape(-1)
        fresh_period = rng.standard_normal((S, Q)) / np.sqrt(tau_p)[:, None]
        eta += area.transpose(0, 2, 1) + fresh_period[:, None, :]

    disp = samples.dispersion.reshape(-1) if samples.dispersion is not None else None
    eta_in = eta if samples.family_name == "multinomial" else eta[:, :, 0]
    vals = _fitted_target_draws(samples, eta_in, disp)
    # draws outside the link domain (possible for the overdispersed count
    # family when fresh noise pushes eta past 0) are dropped from the summary
    mean = np.nanmean(vals, axis=0)
    lo, hi = np.nanquantile(vals, [0.025, 0.975], axis=0)

    rate_mean = rate_lo = rate_hi = None
    if samples.family_name in ("binomial", "beta"):
        rate_mean, rate_lo, rate_hi = mean, lo, hi
    elif samples.family_name == "multinomial":
        rate_draws = vals[..., 1] / (vals[..., 0] + vals[..., 1])
        rate_mean = rate_draws.mean(axis=0)
        rate_lo, rate_hi = np.quantile(rate_draws, [0.025, 0.975], axis=0)

    return HoldoutPrediction(
        quarter=T, region_ids=np.arange(1, J + 1),
        mean=mean, lower=lo, upper=hi,
        rate_mean=rate_mean, rate_lower=rate_lo, rate_upper=rate_hi,
        training_samples=samples,
    )


# ---------------------------------------------------------------------------
# generic scalar sampler (shared adaptation rule), used for closed-form checks


def adaptive_scalar_chain(logpdf, x0: float, iterations: int, burn_in: int = 0,
                          thinning: int = 1, seed: int = 0,
                          target_accept: float = 0.44,
                          adaptation_window: int = 50) -> np.ndarray:
    """Adaptive random-walk Metropolis on a scalar log density."""
    rng = np.random.default_rng(seed)
    x = float(x0)
    lp = float(logpdf(x))
    log_scale = 0.0
    accepts = 0
    draws = []
    for it in range(iterations):
        prop = x + math.exp(log_scale) * rng.standard_normal()
        lp_prop = float(logpdf(prop))
        if math.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepts += 1
        if it < burn_in and (it + 1) % adaptation_window == 0:
            wi = (it + 1) // adaptation_window
            delta = min(0.25, 1.0 / math.sqrt(wi))
            log_scale += delta * (accepts / adaptation_window - target_accept)
            accepts = 0
        if it >= burn_in and (it - burn_in) % thinning == 0:
            draws.append(x)
    return np.array(draws)
