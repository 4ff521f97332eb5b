"""Model comparison and checking: DIC, CPO, PIT, log score, RRMSE, and the
design-based direct estimator.

All diagnostics are pure post-processing over immutable posterior samples.
CPO uses the harmonic-mean estimator computed in log space with max-shift
stabilization; PIT reuses the same leave-one-out importance weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import likelihoods, mcmc
from .errors import DiagnosticsError, SpecError
from .modelspec import ModelSpec
from .panel import PanelDataset


def combine_dic(d_bar: float, p_d: float) -> float:
    """The deviance information criterion identity: DIC = mean deviance + p_D."""
    return d_bar + p_d


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    d_bar: float
    num_dropped: int = 0


def dic(samples: mcmc.PosteriorSamples, dataset: PanelDataset,
        spec: ModelSpec) -> DicResult:
    """DIC from stored per-draw deviances.

    p_D is the mean deviance minus the deviance at the posterior means of all
    parameters including the latent effects.  Non-finite deviance draws are
    excluded; more than 1% of them is an error.
    """
    dev = samples.deviance.reshape(-1)
    finite = np.isfinite(dev)
    dropped = int((~finite).sum())
    if dropped > 0.01 * dev.size:
        raise DiagnosticsError(
            f"{dropped} of {dev.size} deviance draws are non-finite"
        )
    d_bar = float(dev[finite].mean())
    plugin = mcmc.state_from_posterior_means(samples)
    d_hat = mcmc.state_deviance(plugin, dataset, spec, design=samples.design)
    p_d = d_bar - d_hat
    return DicResult(dic=combine_dic(d_bar, p_d), p_d=p_d, d_bar=d_bar,
                     num_dropped=dropped)


def loglik_matrix(samples: mcmc.PosteriorSamples, dataset: PanelDataset,
                  spec: ModelSpec) -> np.ndarray:
    """Per-draw, per-observation log likelihood over pooled draws, (S, N)."""
    targets = likelihoods.build_targets(dataset, spec.family)
    S = samples.num_chains * samples.draws_per_chain
    N = targets.num_rows
    out = np.empty((S, N))
    pos = 0
    for eta, disp in mcmc.iter_eta_draws(samples):
        n_rows = eta.shape[0]
        if disp is None:
            out[pos:pos + n_rows] = likelihoods.loglik_eta(targets, eta)
        else:
            for s in range(n_rows):
                out[pos + s] = likelihoods.loglik_eta(targets, eta[s], float(disp[s]))
        pos += n_rows
    return out


@dataclass(frozen=True)
class CpoResult:
    """Per-observation conditional predictive ordinates.

    ``values`` holds CPO_i (zero where some draw had zero likelihood, flagged
    in ``zero_flagged``); ``high_mc_error`` marks observations whose
    harmonic-mean estimator has relative Monte Carlo error above 0.1.
    """

    values: np.ndarray
    high_mc_error: np.ndarray
    zero_flagged: np.ndarray

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]


def cpo(samples: mcmc.PosteriorSamples, dataset: PanelDataset, spec: ModelSpec,
        scale: str = "native") -> CpoResult:
    """Harmonic-mean CPO per observation.

    CPO_i = [mean_s 1/p(y_i | draw s)]^{-1}, computed in log space.  With
    scale="count" the rate family's density is converted to an (approximate)
    count-scale pmf through the change of variables r = y/m, making log
    scores comparable across families; the other families are unchanged.
    """
    if scale not in ("native", "count"):
        raise SpecError("scale must be 'native' or 'count'")
    S = samples.num_chains * samples.draws_per_chain
    if S < 500:
        raise SpecError("CPO needs at least 500 pooled draws")
    ll = loglik_matrix(samples, dataset, spec)
    zero = np.isneginf(ll).any(axis=0)
    log_cpo = np.log(S) - logsumexp(-ll, axis=0)
    if scale == "count" and spec.family.name == "beta":
        targets = likelihoods.build_targets(dataset, spec.family)
        log_cpo = log_cpo - np.log(targets.trials)

    with np.errstate(over="ignore"):
        log_m1 = logsumexp(-ll, axis=0) - np.log(S)
        log_m2 = logsumexp(-2.0 * ll, axis=0) - np.log(S)
        rel_var = np.expm1(np.clip(log_m2 - 2.0 * log_m1, 0.0, 700.0))
    mc_error = np.sqrt(np.maximum(rel_var, 0.0) / S)

    values = np.exp(log_cpo)
    values[zero] = 0.0
    return CpoResult(values=values, high_mc_error=mc_error > 0.1, zero_flagged=zero)


def pit(samples: mcmc.PosteriorSamples, dataset: PanelDataset, spec: ModelSpec,
        randomized: bool = False, seed: int = 0) -> np.ndarray:
    """Leave-one-out probability integral transform per observation.

    Continuous (rate) family: importance-weighted posterior average of
    F(r_i | draw), weights proportional to 1/p(y_i | draw) as in CPO.
    Discrete families: the same weighting applied to the mid-distribution
    P(Y < y) + 0.5 P(Y = y); for the composition family the parts come from
    the exact binomial marginal of the unemployed count.  ``randomized``
    replaces the 0.5 by an independent uniform per observation.
    """
    S = samples.num_chains * samples.draws_per_chain
    if S < 500:
        raise SpecError("PIT needs at least 500 pooled draws")
    targets = likelihoods.build_targets(dataset, spec.family)
    N = targets.num_rows
    ll = np.empty((S, N))
    fpart = np.empty((S, N))
    if randomized:
        u = np.random.default_rng(seed).uniform(size=N)
    else:
        u = np.full(N, 0.5)
    pos = 0
    for eta, disp in mcmc.iter_eta_draws(samples):
        n_rows = eta.shape[0]
        for s in range(n_rows):
            d = float(disp[s]) if disp is not None else None
            eta_s = eta[s]
            ll[pos + s] = likelihoods.loglik_eta(targets, eta_s, d)
            if spec.family.name == "beta":
                fpart[pos + s] = likelihoods.continuous_cdf(targets, eta_s, d)
            else:
                below, point = likelihoods.discrete_pit_parts(targets, eta_s, d)
                fpart[pos + s] = below + u * point
        pos += n_rows
    shift = (-ll).max(axis=0)
    w = np.exp(-ll - shift)
    return np.einsum("sn,sn->n", w, fpart) / w.sum(axis=0)


def log_score(cpo_values: np.ndarray) -> float:
    """Minus the mean log CPO; lower means better predictive quality.

    Zero CPO entries (flagged outlier suspects) are excluded with a warning.
    """
    values = np.asarray(cpo_values, dtype=float)
    positive = values > 0
    if not positive.any():
        raise DiagnosticsError("all CPO values are zero")
    n_zero = int((~positive).sum())
    if n_zero:
        warnings.warn(f"excluding {n_zero} zero CPO values from the log score",
                      stacklevel=2)
    return float(-np.mean(np.log(values[positive])))


# ---------------------------------------------------------------------------
# design-based direct estimator


@dataclass(frozen=True)
class DirectEstimate:
    """Cell-level design-based estimates from the sample alone.

    The rate is the within-cell weighted ratio of unemployed to active
    respondents, which reduces to y/m because every respondent in a cell
    carries the same design weight.  Totals scale counts by the weight.
    Variances come from the standard ratio-estimator linearization,
    rate_variance = r (1 - r) / m.  Cells with no active respondents are
    flagged missing; the relative error of a zero rate is undefined (NaN).
    """

    total: np.ndarray          # (J, T) weighted unemployed total
    rate: np.ndarray           # (J, T) NaN where active == 0
    rate_variance: np.ndarray
    total_variance: np.ndarray
    rrmse: np.ndarray          # relative root variance of the rate (and total)
    missing: np.ndarray        # (J, T) bool


def direct_estimate(dataset: PanelDataset) -> DirectEstimate:
    y = dataset.unemployed.astype(float)
    m = dataset.active.astype(float)
    w = dataset.weight
    missing = m == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(missing, np.nan, y / np.maximum(m, 1.0))
        rate_var = np.where(missing, np.nan, rate * (1.0 - rate) / np.maximum(m, 1.0))
        total = w * y
        total_var = w * w * np.maximum(m, 1.0) * rate * (1.0 - rate)
        total_var = np.where(missing, np.nan, total_var)
        rrmse = np.where(rate > 0, np.sqrt(rate_var) / rate, np.nan)
    return DirectEstimate(total=total, rate=rate, rate_variance=rate_var,
                          total_variance=total_var, rrmse=rrmse, missing=missing)


# ---------------------------------------------------------------------------
# relative root mean squared error


def rrmse_model(estimates: np.ndarray, truths: np.ndarray | None = None,
                posterior_sd: np.ndarray | None = None) -> np.ndarray:
    """Per-region RRMSE in one of two modes.

    Simulation mode (``truths`` given): ``estimates`` and ``truths`` are
    (num_seeds, R); the result is sqrt(mean over seeds of squared relative
    error).  Cells with zero truth are excluded (NaN within a seed) and
    flagged by a NaN result when no seed contributes.

    Posterior-only mode (``posterior_sd`` given): variability-only proxy
    sqrt(posterior variance) / posterior mean, since the bias term is not
    observable without truth.
    """
    if (truths is None) == (posterior_sd is None):
        raise SpecError("pass exactly one of truths or posterior_sd")
    if truths is not None:
        est = np.atleast_2d(np.asarray(estimates, dtype=float))
        tr = np.atleast_2d(np.asarray(truths, dtype=float))
        if est.shape != tr.shape:
            raise SpecError("estimates and truths must have matching shapes")
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(tr != 0, (est - tr) / np.where(tr == 0, 1.0, tr), np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.sqrt(np.nanmean(rel * rel, axis=0))
    est = np.asarray(estimates, dtype=float)
    sd = np.asarray(posterior_sd, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(est != 0, sd / np.where(est == 0, 1.0, est), np.nan)


def rate_draws_at_quarter(samples: mcmc.PosteriorSamples, dataset: PanelDataset,
                          quarter: int | None = None) -> np.ndarray:
    """(S, J) posterior draws of the model-based unemployment rate.

    Rate families give the mean parameter directly; count families divide
    the expected count by the observed active population of the cell; the
    composition family uses P_unemployed / (P_employed + P_unemployed).
    """
    T = samples.num_quarters
    quarter = T if quarter is None else quarter
    if not 1 <= quarter <= T:
        raise SpecError("quarter out of range")
    J = samples.num_regions
    cols = np.array([(j * T) + (quarter - 1) for j in range(J)])
    S = samples.num_chains * samples.draws_per_chain
    out = np.empty((S, J))
    pos = 0
    for eta, disp in mcmc.iter_eta_draws(samples):
        sl = eta[:, cols] if eta.ndim == 2 else eta[:, cols, :]
        vals = mcmc._fitted_target_draws(samples, sl, disp)
        if samples.family_name == "multinomial":
            vals = vals[..., 1] / (vals[..., 0] + vals[..., 1])
        elif samples.family_name in ("poisson", "negbin"):
            active = dataset.active[:, quarter - 1].astype(float)
            vals = vals / active[None, :]
        out[pos:pos + vals.shape[0]] = vals
        pos += vals.shape[0]
    return out


def total_draws_at_quarter(samples: mcmc.PosteriorSamples, dataset: PanelDataset,
                           quarter: int | None = None) -> np.ndarray:
    """(S, J) posterior draws of the weighted unemployed total.

    Count families give the expected count directly; rate families multiply
    the rate by the observed active population; the composition family uses
    the sample size times the unemployed probability.  Design weights scale
    the sample quantity to its population total.
    """
    T = samples.num_quarters
    quarter = T if quarter is None else quarter
    J = samples.num_regions
    cols = np.array([(j * T) + (quarter - 1) for j in range(J)])
    weight = dataset.weight[:, quarter - 1]
    S = samples.num_chains * samples.draws_per_chain
    out = np.empty((S, J))
    pos = 0
    for eta, disp in mcmc.iter_eta_draws(samples):
        sl = eta[:, cols] if eta.ndim == 2 else eta[:, cols, :]
        vals = mcmc._fitted_target_draws(samples, sl, disp)
        if samples.family_name == "multinomial":
            vals = vals[..., 1] * dataset.sample_size[:, quarter - 1][None, :]
        elif samples.family_name in ("binomial", "beta"):
            vals = vals * dataset.active[:, quarter - 1][None, :]
        out[pos:pos + vals.shape[0]] = vals * weight[None, :]
        pos += vals.shape[0]
    return out


# ---------------------------------------------------------------------------
# assembled report


@dataclass
class DiagnosticsReport:
    """DIC, per-observation CPO and PIT, log score, and convergence table."""

    dic: float
    p_d: float
    d_bar: float
    cpo: np.ndarray | None
    pit: np.ndarray | None
    log_score: float | None
    psrf: dict[str, float]
    rrmse: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.dic - (self.d_bar + self.p_d)) > 1e-9:
            raise DiagnosticsError("DIC identity violated")


def build_report(samples: mcmc.PosteriorSamples, dataset: PanelDataset,
                 spec: ModelSpec, include_cpo: bool = True,
                 cpo_scale: str = "native") -> DiagnosticsReport:
    d = dic(samples, dataset, spec)
    cpo_vals = pit_vals = None
    score = None
    notes = {}
    if include_cpo:
        res = cpo(samples, dataset, spec, scale=cpo_scale)
        cpo_vals = res.values
        pit_vals = pit(samples, dataset, spec)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            score = log_score(res.values)
        notes["cpo_high_mc_error"] = int(res.high_mc_error.sum())
        notes["cpo_zero_flagged"] = int(res.zero_flagged.sum())
    else:
        notes["cpo_available"] = False
    return DiagnosticsReport(
        dic=d.dic, p_d=d.p_d, d_bar=d.d_bar,
        cpo=cpo_vals, pit=pit_vals, log_score=score,
        psrf=mcmc.psrf_table(samples),
        notes=notes,
    )
