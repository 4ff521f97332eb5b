"""Model declaration: likelihood family, link, predictor terms, and priors.

A fit is declared by a ModelSpec combining a LikelihoodFamily, a
PredictorSpec (which covariate groups enter the linear predictor, the offset
rule, and the random-effect structure) and a PriorSpec.  The linear predictor
for cell (j, t) is

    eta = offset + intercept + regional terms + temporal terms
          + spatio-temporal terms + random effects

mapped to the observation mean through the family's link.  The composition
family uses two linear predictors (employed and unemployed against the
inactive baseline) that share covariates but have separate coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import LinkDomainError, SpecError
from .panel import PanelDataset

CATEGORY_LABELS = ("employed", "unemployed")  # baseline: inactive


@dataclass(frozen=True)
class LikelihoodFamily:
    """Observation family tag with its link and dispersion flag."""

    name: str
    has_dispersion: bool
    link: str

    @property
    def is_count(self) -> bool:
        return self.name in ("poisson", "negbin")

    @property
    def num_predictors(self) -> int:
        return 2 if self.name == "multinomial" else 1


FAMILIES = {
    "poisson": LikelihoodFamily("poisson", False, "log"),
    "negbin": LikelihoodFamily("negbin", True, "log_mu_over_mu_plus_phi"),
    "binomial": LikelihoodFamily("binomial", False, "logit"),
    "beta": LikelihoodFamily("beta", True, "logit"),
    "multinomial": LikelihoodFamily("multinomial", False, "baseline_logit"),
}

_FAMILY_ALIASES = {"negativebinomial": "negbin", "negative_binomial": "negbin"}


def get_family(name: str) -> LikelihoodFamily:
    key = name.strip().lower().replace("-", "_")
    key = _FAMILY_ALIASES.get(key, key)
    if key not in FAMILIES:
        raise SpecError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    return FAMILIES[key]


@dataclass(frozen=True)
class PredictorSpec:
    """Which terms enter the linear predictor and how effects are structured.

    Term tuples of None mean "all covariates of that group in the dataset".
    ``offset_rule`` is one of none / log_sample_size / auto, where auto picks
    log_sample_size for the log-link count families and none otherwise.
    ``effect_structure`` is structured (spatial ICAR + temporal walk + cell
    noise), unstructured (iid region and quarter effects), none, or auto
    (unstructured for the composition family, structured otherwise).
    """

    include_intercept: bool = True
    regional_terms: tuple[str, ...] | None = None
    temporal_terms: tuple[str, ...] | None = None
    spatiotemporal_terms: tuple[str, ...] | None = None
    offset_rule: str = "auto"
    effect_structure: str = "auto"
    trend_structure: str = "rw1"
    ar1_rho: float = 0.9

    def __post_init__(self):
        if self.offset_rule not in ("auto", "none", "log_sample_size"):
            raise SpecError(f"unknown offset_rule {self.offset_rule!r}")
        if self.effect_structure not in ("auto", "structured", "unstructured", "none"):
            raise SpecError(f"unknown effect_structure {self.effect_structure!r}")
        if self.trend_structure not in ("rw1", "ar1"):
            raise SpecError(f"unknown trend_structure {self.trend_structure!r}")
        if self.trend_structure == "ar1" and not abs(self.ar1_rho) < 1.0:
            raise SpecError("ar1_rho must satisfy |rho| < 1")


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian coefficient prior and Gamma hyperpriors.

    Coefficients get zero-mean Gaussians with standard deviation
    ``coefficient_sd`` (variance 1e6 by default).  Every random-effect
    precision gets a Gamma(shape, rate) prior sampled on the log scale, and
    the dispersion parameter of the overdispersed families likewise.
    """

    coefficient_sd: float = 1000.0
    precision_shape: float = 1.0
    precision_rate: float = 0.0005
    dispersion_shape: float = 1.0
    dispersion_rate: float = 0.01

    def __post_init__(self):
        for name in ("coefficient_sd", "precision_shape", "precision_rate",
                     "dispersion_shape", "dispersion_rate"):
            if getattr(self, name) <= 0:
                raise SpecError(f"{name} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    family: LikelihoodFamily
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    priors: PriorSpec = field(default_factory=PriorSpec)

    @property
    def effect_structure(self) -> str:
        if self.predictor.effect_structure != "auto":
            return self.predictor.effect_structure
        return "unstructured" if self.family.name == "multinomial" else "structured"

    @property
    def offset_rule(self) -> str:
        if self.predictor.offset_rule != "auto":
            return self.predictor.offset_rule
        return "log_sample_size" if self.family.is_count else "none"

    def validate(self) -> None:
        if self.family.name == "multinomial" and self.effect_structure == "structured":
            raise SpecError(
                "the composition family requires unstructured region and quarter effects"
            )
        if self.offset_rule == "log_sample_size" and not self.family.is_count:
            raise SpecError("log_sample_size offset is only valid for log-link count families")
        if self.effect_structure == "structured" and not self.predictor.include_intercept:
            raise SpecError(
                "structured effects need an intercept to absorb the field level"
            )


def model_spec(family: str, predictor: PredictorSpec | None = None,
               priors: PriorSpec | None = None, **predictor_kwargs) -> ModelSpec:
    """Convenience constructor from a family name and predictor fields."""
    if predictor is not None and predictor_kwargs:
        raise SpecError("pass either a PredictorSpec or keyword fields, not both")
    pred = predictor or PredictorSpec(**predictor_kwargs)
    spec = ModelSpec(family=get_family(family), predictor=pred,
                     priors=priors or PriorSpec())
    spec.validate()
    return spec


@dataclass(frozen=True)
class DesignMatrices:
    """Fixed-effects design for one fit.

    Rows are region-major: row = (j-1) * T + (t-1).  Columns are ordered
    intercept, regional, temporal, spatio-temporal.  The offset is already on
    the predictor scale (log sample size or zero).
    """

    X: np.ndarray              # (N, k)
    offset: np.ndarray         # (N,)
    row_region: np.ndarray     # (N,) 1-based region id
    row_quarter: np.ndarray    # (N,) 1-based quarter id
    column_names: tuple[str, ...]
    num_regions: int
    num_quarters: int

    def __post_init__(self):
        for arr in (self.X, self.offset, self.row_region, self.row_quarter):
            arr.setflags(write=False)

    @property
    def num_rows(self) -> int:
        return self.X.shape[0]

    def row_index(self, region_id: int, quarter_id: int) -> int:
        return (region_id - 1) * self.num_quarters + (quarter_id - 1)


def _resolve_terms(requested, available, group):
    if requested is None:
        return tuple(available)
    unknown = [name for name in requested if name not in available]
    if unknown:
        raise SpecError(f"unknown {group} covariate(s) {unknown}; dataset has {list(available)}")
    return tuple(requested)


def build_design(dataset: PanelDataset, spec: ModelSpec) -> DesignMatrices:
    """Assemble the fixed-effects matrix, offset, and row index maps."""
    spec.validate()
    pred = spec.predictor
    regional = _resolve_terms(pred.regional_terms, dataset.regional_names, "regional")
    temporal = _resolve_terms(pred.temporal_terms, dataset.temporal_names, "temporal")
    st = _resolve_terms(pred.spatiotemporal_terms, dataset.spatiotemporal_names,
                        "spatio-temporal")

    J, T = dataset.num_regions, dataset.num_quarters
    N = J * T
    cols = []
    names = []
    if pred.include_intercept:
        cols.append(np.ones(N))
        names.append("intercept")
    for name in regional:
        k = dataset.regional_names.index(name)
        cols.append(np.repeat(dataset.regional_covariates[:, k], T))
        names.append(name)
    for name in temporal:
        k = dataset.temporal_names.index(name)
        cols.append(np.tile(dataset.temporal_covariates[:, k], J))
        names.append(name)
    for name in st:
        k = dataset.spatiotemporal_names.index(name)
        cols.append(dataset.spatiotemporal_covariates[:, :, k].reshape(N))
        names.append(name)
    if not cols:
        raise SpecError("the linear predictor needs at least one term")
    X = np.column_stack(cols)

    if spec.offset_rule == "log_sample_size":
        offset = np.log(dataset.sample_size.reshape(N).astype(float))
    else:
        offset = np.zeros(N)

    row_region = np.repeat(np.arange(1, J + 1), T)
    row_quarter = np.tile(np.arange(1, T + 1), J)
    return DesignMatrices(
        X=X, offset=offset, row_region=row_region.astype(np.int64),
        row_quarter=row_quarter.astype(np.int64),
        column_names=tuple(names), num_regions=J, num_quarters=T,
    )


def linear_predictor(state, design: DesignMatrices, row: int, category: int = 0) -> float:
    """Evaluate eta for one design row under a ParameterState.

    Pure function of its inputs; ``category`` selects the linear predictor of
    the composition family (0 employed, 1 unemployed) and must be 0 otherwise.
    """
    coefs = np.atleast_2d(state.coefficients)
    eta = float(design.offset[row]) + float(design.X[row] @ coefs[category])
    j = int(design.row_region[row]) - 1
    t = int(design.row_quarter[row]) - 1
    if state.spatial is not None:
        eta += float(state.spatial[j])
    if state.trend is not None:
        eta += float(state.trend[t])
    if state.cell is not None:
        eta += float(np.asarray(state.cell).reshape(-1)[row])
    if state.area is not None:
        eta += float(np.atleast_2d(state.area)[category, j])
    if state.period is not None:
        eta += float(np.atleast_2d(state.period)[category, t])
    return eta


def link_apply(family: LikelihoodFamily, eta, dispersion: float | None = None):
    """Map a linear predictor to the family's mean parameter.

    Vectorized over eta.  The overdispersed count family uses the link
    log(mu / (mu + phi)), whose inverse mu = phi * e^eta / (1 - e^eta) is only
    finite for eta < 0; values outside that domain raise LinkDomainError.
    """
    if family.has_dispersion != (dispersion is not None):
        raise SpecError(
            f"family {family.name!r} "
            + ("requires" if family.has_dispersion else "does not take")
            + " a dispersion parameter"
        )
    eta = np.asarray(eta, dtype=float)
    scalar = eta.ndim == 0
    if family.name == "poisson":
        out = np.exp(eta)
    elif family.name == "negbin":
        if np.any(eta >= 0):
            raise LinkDomainError(
                "mean of the overdispersed count family needs eta < 0"
            )
        out = dispersion * np.exp(eta) / (-np.expm1(eta))
    elif family.name in ("binomial", "beta"):
        out = _expit(eta)
    else:
        raise SpecError(
            "the composition family maps two predictors; use category_probabilities"
        )
    return float(out) if scalar else out


def link_forward(family: LikelihoodFamily, mean, dispersion: float | None = None):
    """The forward link h(mean) = eta; inverse of link_apply."""
    mean = np.asarray(mean, dtype=float)
    scalar = mean.ndim == 0
    if family.name == "poisson":
        out = np.log(mean)
    elif family.name == "negbin":
        out = np.log(mean / (mean + dispersion))
    elif family.name in ("binomial", "beta"):
        out = np.log(mean / (1.0 - mean))
    else:
        raise SpecError("no scalar forward link for the composition family")
    return float(out) if scalar else out


def category_probabilities(eta: np.ndarray) -> np.ndarray:
    """Probabilities of (employed, unemployed, inactive) from two predictors.

    ``eta`` has shape (..., 2) holding the baseline-logit predictors of the
    employed and unemployed categories; the inactive baseline has predictor
    zero.  Output shape is (..., 3) and sums to one along the last axis.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != 2:
        raise SpecError("expected two linear predictors in the last axis")
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    full = full - full.max(axis=-1, keepdims=True)
    ex = np.exp(full)
    return ex / ex.sum(axis=-1, keepdims=True)


def _expit(eta):
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_SPEC_KEYS = {
    "family", "include_intercept", "regional_terms", "temporal_terms",
    "spatiotemporal_terms", "offset_rule", "effect_structure",
    "trend_structure", "ar1_rho", "coefficient_sd", "precision_shape",
    "precision_rate", "dispersion_shape", "dispersion_rate",
}


def _parse_terms(value: str):
    value = value.strip()
    if value.lower() == "all":
        return None
    if value.lower() == "none":
        return ()
    return tuple(tok.strip() for tok in value.split(",") if tok.strip())


def read_spec_file(path) -> ModelSpec:
    """Parse a line-oriented ``key = value`` model declaration.

    Every key has a default equal to the full model: family poisson, all
    covariate groups, intercept, auto offset and effect structure, and the
    standard priors.  Unknown keys raise SpecError.
    """
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SpecError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SPEC_KEYS:
                raise SpecError(f"line {lineno}: unknown key {key!r}")
            values[key] = value

    def boolean(text):
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise SpecError(f"expected a boolean, got {text!r}")

    pred = PredictorSpec(
        include_intercept=boolean(values.get("include_intercept", "true")),
        regional_terms=_parse_terms(values["regional_terms"]) if "regional_terms" in values else None,
        temporal_terms=_parse_terms(values["temporal_terms"]) if "temporal_terms" in values else None,
        spatiotemporal_terms=_parse_terms(values["spatiotemporal_terms"]) if "spatiotemporal_terms" in values else None,
        offset_rule=values.get("offset_rule", "auto"),
        effect_structure=values.get("effect_structure", "auto"),
        trend_structure=values.get("trend_structure", "rw1"),
        ar1_rho=float(values.get("ar1_rho", 0.9)),
    )
    priors = PriorSpec(
        coefficient_sd=float(values.get("coefficient_sd", 1000.0)),
        precision_shape=float(values.get("precision_shape", 1.0)),
        precision_rate=float(values.get("precision_rate", 0.0005)),
        dispersion_shape=float(values.get("dispersion_shape", 1.0)),
        dispersion_rate=float(values.get("dispersion_rate", 0.01)),
    )
    spec = ModelSpec(family=get_family(values.get("family", "poisson")),
                     predictor=pred, priors=priors)
    spec.validate()
    return spec


def with_family(spec: ModelSpec, family: str) -> ModelSpec:
    """Return the spec with the family replaced and revalidated."""
    out = replace(spec, family=get_family(family))
    out.validate()
    return out
