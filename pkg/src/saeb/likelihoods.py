"""Log-likelihood kernels, deviance, and random draws for the five families.

Every kernel is the exact log of the stated probability mass or density,
computed through log-gamma so counts up to 1e6 do not overflow.  Points
outside the support return -inf rather than raising, which lets a generic
Metropolis acceptance treat them uniformly.  Each kernel also exposes its
analytic derivative with respect to the linear predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import digamma, gammaln, logsumexp, xlogy

from .errors import DomainError, SpecError
from .modelspec import LikelihoodFamily, category_probabilities, link_apply
from .panel import PanelDataset


# ---------------------------------------------------------------------------
# mean-parameter kernels


def _is_count(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return (y >= 0) & (np.mod(y, 1.0) == 0)


def log_poisson(y, mu):
    """log pmf of a Poisson count with mean mu."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise DomainError("Poisson mean must be positive")
    y = np.asarray(y, dtype=float)
    ll = xlogy(y, mu) - mu - gammaln(y + 1.0)
    return np.where(_is_count(y), ll, -np.inf)


def log_negbin(y, mu, phi):
    """log pmf of the overdispersed count family with mean mu, dispersion phi."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0) or phi <= 0:
        raise DomainError("mean and dispersion must be positive")
    y = np.asarray(y, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ll = (gammaln(y + phi) - gammaln(phi) - gammaln(y + 1.0)
              + xlogy(y, mu) + phi * np.log(phi) - (y + phi) * np.log(mu + phi))
    return np.where(_is_count(y), ll, -np.inf)


def log_binomial(y, m, p):
    """log pmf of y successes in m trials with success probability p."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("success probability must lie in [0, 1]")
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = (gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)
              + xlogy(y, p) + xlogy(m - y, 1.0 - p))
    support = _is_count(y) & (y <= m)
    return np.where(support, ll, -np.inf)


def log_beta(r, mu, phi):
    """log density of a rate under the mean/precision Beta parameterization.

    The shape parameters are a = mu * phi and b = (1 - mu) * phi, so the mean
    is mu and phi acts as a precision.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any((mu <= 0) | (mu >= 1)) or phi <= 0:
        raise DomainError("Beta mean must lie in (0, 1) and dispersion be positive")
    r = np.asarray(r, dtype=float)
    a = mu * phi
    b = (1.0 - mu) * phi
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = (gammaln(phi) - gammaln(a) - gammaln(b)
              + (a - 1.0) * np.log(r) + (b - 1.0) * np.log1p(-r))
    return np.where((r > 0) & (r < 1), ll, -np.inf)


def log_multinomial(counts, probs):
    """log pmf of a multinomial count vector; the last axis is the category."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-8):
        raise DomainError("category probabilities must be nonnegative and sum to 1")
    n = counts.sum(axis=-1)
    ll = (gammaln(n + 1.0) - gammaln(counts + 1.0).sum(axis=-1)
          + xlogy(counts, probs).sum(axis=-1))
    support = _is_count(counts).all(axis=-1)
    return np.where(support, ll, -np.inf)


# ---------------------------------------------------------------------------
# observation targets


@dataclass(frozen=True)
class ObservationTarget:
    """Family-tagged observation payload."""

    kind: str
    y: float | None = None
    trials: float | None = None
    rate: float | None = None
    counts: tuple[float, float, float] | None = None

    @classmethod
    def count(cls, y):
        return cls(kind="count", y=float(y))

    @classmethod
    def bounded_count(cls, y, trials):
        if not 0 <= y <= trials:
            raise DomainError("bounded count needs 0 <= y <= trials")
        return cls(kind="bounded_count", y=float(y), trials=float(trials))

    @classmethod
    def observed_rate(cls, r):
        if not 0 < r < 1:
            raise DomainError("rate target must lie strictly inside (0, 1)")
        return cls(kind="rate", rate=float(r))

    @classmethod
    def composition(cls, counts):
        counts = tuple(float(c) for c in counts)
        if len(counts) != 3:
            raise DomainError("composition target has three categories")
        return cls(kind="composition", counts=counts)

    @property
    def total(self) -> float:
        if self.kind != "composition":
            raise SpecError("total is only defined for composition targets")
        return sum(self.counts)


_TARGET_KIND = {
    "poisson": "count", "negbin": "count", "binomial": "bounded_count",
    "beta": "rate", "multinomial": "composition",
}


def log_likelihood(family: LikelihoodFamily, target: ObservationTarget,
                   mean, dispersion: float | None = None) -> float:
    """log likelihood of one observation at the given mean parameter."""
    if family.has_dispersion != (dispersion is not None):
        raise SpecError(f"family {family.name!r} dispersion argument mismatch")
    if target.kind != _TARGET_KIND[family.name]:
        raise SpecError(f"target kind {target.kind!r} does not match family {family.name!r}")
    if family.name == "poisson":
        return float(log_poisson(target.y, mean))
    if family.name == "negbin":
        return float(log_negbin(target.y, mean, dispersion))
    if family.name == "binomial":
        return float(log_binomial(target.y, target.trials, mean))
    if family.name == "beta":
        return float(log_beta(target.rate, mean, dispersion))
    return float(log_multinomial(np.asarray(target.counts), np.asarray(mean)))


# ---------------------------------------------------------------------------
# dataset-level targets and eta-scale evaluation


def rate_adjustment(rate, trials):
    """Pull observed rates off the boundary: (r * (m - 1) + 0.5) / m."""
    rate = np.asarray(rate, dtype=float)
    trials = np.asarray(trials, dtype=float)
    return (rate * (trials - 1.0) + 0.5) / trials


@dataclass(frozen=True)
class Targets:
    """Flat observation arrays for one family over a panel (region-major)."""

    family_name: str
    y: np.ndarray | None = None        # unemployed counts
    trials: np.ndarray | None = None   # active counts
    rate: np.ndarray | None = None     # boundary-adjusted rates
    counts: np.ndarray | None = None   # (N, 3) employed, unemployed, inactive
    total: np.ndarray | None = None    # sample sizes

    @property
    def num_rows(self) -> int:
        for arr in (self.y, self.rate, self.counts):
            if arr is not None:
                return arr.shape[0]
        raise SpecError("empty targets")


def build_targets(dataset: PanelDataset, family: LikelihoodFamily) -> Targets:
    """Extract the family's observation arrays from a panel."""
    N = dataset.num_regions * dataset.num_quarters
    unemployed = dataset.unemployed.reshape(N).astype(float)
    active = dataset.active.reshape(N).astype(float)
    if family.name in ("poisson", "negbin"):
        return Targets(family_name=family.name, y=unemployed)
    if family.name == "binomial":
        return Targets(family_name=family.name, y=unemployed, trials=active)
    if family.name == "beta":
        if np.any(active == 0):
            raise SpecError(
                "the rate family cannot fit cells with zero active population"
            )
        raw = unemployed / active
        return Targets(family_name=family.name, rate=rate_adjustment(raw, active),
                       trials=active)
    counts = np.stack(
        [dataset.employed.reshape(N), dataset.unemployed.reshape(N),
         dataset.inactive.reshape(N)], axis=-1,
    ).astype(float)
    return Targets(family_name=family.name, counts=counts,
                   total=dataset.sample_size.reshape(N).astype(float))


def loglik_eta(targets: Targets, eta, dispersion: float | None = None):
    """Per-row log likelihood as a function of the linear predictor.

    ``eta`` broadcasts over leading axes; for the composition family the last
    axis holds the two baseline-logit predictors.
    """
    name = targets.family_name
    eta = np.asarray(eta, dtype=float)
    if name == "poisson":
        return xlogy(targets.y, np.exp(eta)) - np.exp(eta) - gammaln(targets.y + 1.0)
    if name == "negbin":
        phi = dispersion
        out = np.full(np.broadcast_shapes(eta.shape, targets.y.shape), -np.inf)
        ok = eta < 0
        y = np.broadcast_to(targets.y, out.shape)
        e = np.broadcast_to(eta, out.shape)
        out[ok] = (gammaln(y[ok] + phi) - gammaln(phi) - gammaln(y[ok] + 1.0)
                   + y[ok] * e[ok] + phi * np.log(-np.expm1(e[ok])))
        return out
    if name == "binomial":
        const = (gammaln(targets.trials + 1.0) - gammaln(targets.y + 1.0)
                 - gammaln(targets.trials - targets.y + 1.0))
        return const + targets.y * eta - targets.trials * np.logaddexp(0.0, eta)
    if name == "beta":
        phi = dispersion
        mu = _stable_expit(eta)
        a = mu * phi
        b = phi - a
        out = np.full(np.broadcast_shapes(eta.shape, targets.rate.shape), -np.inf)
        ok = (a > 0) & (b > 0)
        r = np.broadcast_to(targets.rate, out.shape)
        aa, bb = np.broadcast_to(a, out.shape), np.broadcast_to(b, out.shape)
        out[ok] = (gammaln(phi) - gammaln(aa[ok]) - gammaln(bb[ok])
                   + (aa[ok] - 1.0) * np.log(r[ok]) + (bb[ok] - 1.0) * np.log1p(-r[ok]))
        return out
    if name == "multinomial":
        e1, e2 = eta[..., 0], eta[..., 1]
        zero = np.zeros_like(e1)
        denom = logsumexp(np.stack([zero, e1, e2], axis=-1), axis=-1)
        const = gammaln(targets.total + 1.0) - gammaln(targets.counts + 1.0).sum(axis=-1)
        return (const + targets.counts[..., 0] * e1 + targets.counts[..., 1] * e2
                - targets.total * denom)
    raise SpecError(f"unknown family {name!r}")


def loglik_eta_grad(targets: Targets, eta, dispersion: float | None = None):
    """Analytic derivative of loglik_eta with respect to eta.

    For the composition family the output carries the per-predictor partials
    in the last axis.  All four single-predictor families reduce to the
    natural-parameter form y - E[y] except the rate family, whose derivative
    involves digamma terms.
    """
    name = targets.family_name
    eta = np.asarray(eta, dtype=float)
    if name == "poisson":
        return targets.y - np.exp(eta)
    if name == "negbin":
        mu = dispersion * np.exp(eta) / (-np.expm1(eta))
        return targets.y - mu
    if name == "binomial":
        return targets.y - targets.trials * _stable_expit(eta)
    if name == "beta":
        phi = dispersion
        mu = _stable_expit(eta)
        a, b = mu * phi, phi - mu * phi
        score_mu = phi * (np.log(targets.rate) - np.log1p(-targets.rate)
                          - digamma(a) + digamma(b))
        return score_mu * mu * (1.0 - mu)
    if name == "multinomial":
        probs = category_probabilities(eta)
        expected = targets.total[..., None] * probs[..., :2]
        return targets.counts[..., :2] - expected
    raise SpecError(f"unknown family {name!r}")


def deviance(targets: Targets, eta, dispersion: float | None = None) -> float:
    """Model deviance -2 * sum of log likelihoods (saturated constant omitted).

    A -inf log likelihood propagates to +inf deviance.
    """
    ll = loglik_eta(targets, eta, dispersion)
    total = float(np.sum(ll))
    return np.inf if np.isneginf(total) else -2.0 * total


# ---------------------------------------------------------------------------
# random draws and predictive distribution pieces


def sample_observation(family: LikelihoodFamily, rng: np.random.Generator,
                       mean, dispersion: float | None = None,
                       trials=None, total=None):
    """Draw observations from the family at the given mean parameters."""
    if family.name == "poisson":
        return rng.poisson(mean)
    if family.name == "negbin":
        mean = np.asarray(mean, dtype=float)
        p = dispersion / (dispersion + mean)
        return rng.negative_binomial(dispersion, p)
    if family.name == "binomial":
        return rng.binomial(np.asarray(trials, dtype=np.int64), mean)
    if family.name == "beta":
        mean = np.asarray(mean, dtype=float)
        return rng.beta(mean * dispersion, (1.0 - mean) * dispersion)
    if family.name == "multinomial":
        return rng.multinomial(np.asarray(total, dtype=np.int64), np.asarray(mean))
    raise SpecError(f"unknown family {family.name!r}")


def discrete_pit_parts(targets: Targets, eta, dispersion: float | None = None):
    """(P(Y < y), P(Y = y)) per row for the discrete families.

    For the composition family the parts refer to the exact marginal
    distribution of the unemployed count, which is binomial in the total.
    """
    name = targets.family_name
    eta = np.asarray(eta, dtype=float)
    if name == "poisson":
        mu = np.exp(eta)
        below = stats.poisson.cdf(targets.y - 1.0, mu)
        point = stats.poisson.pmf(targets.y, mu)
    elif name == "negbin":
        mu = link_apply(_family(name), eta, dispersion)
        p = dispersion / (dispersion + mu)
        below = stats.nbinom.cdf(targets.y - 1.0, dispersion, p)
        point = stats.nbinom.pmf(targets.y, dispersion, p)
    elif name == "binomial":
        prob = _stable_expit(eta)
        below = stats.binom.cdf(targets.y - 1.0, targets.trials.astype(int), prob)
        point = stats.binom.pmf(targets.y, targets.trials.astype(int), prob)
    elif name == "multinomial":
        probs = category_probabilities(eta)
        p_unemp = probs[..., 1]
        n = targets.total.astype(int)
        y = targets.counts[..., 1]
        below = stats.binom.cdf(y - 1.0, n, p_unemp)
        point = stats.binom.pmf(y, n, p_unemp)
    else:
        raise SpecError("discrete parts are undefined for the rate family")
    return below, point


def continuous_cdf(targets: Targets, eta, dispersion: float) -> np.ndarray:
    """CDF of the rate family at the observed (adjusted) rates."""
    if targets.family_name != "beta":
        raise SpecError("continuous CDF is only defined for the rate family")
    mu = _stable_expit(np.asarray(eta, dtype=float))
    return stats.beta.cdf(targets.rate, mu * dispersion, (1.0 - mu) * dispersion)


def _stable_expit(eta):
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _family(name):
    from .modelspec import get_family

    return get_family(name)
