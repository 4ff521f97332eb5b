"""Synthetic panel generation with recorded ground truth.

Scenarios draw latent effects from their priors, build the linear predictor
from raw-scale covariates (centered internally so the configured intercept is
interpretable), apply the family's inverse link, and sample the counts.  The
truth record keeps everything needed to score a fit: the raw-scale
coefficient vector, the realized effects, and the cell-level means and rates.
"""

from __future__ import annotations

import importlib.resources
import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from . import effects
from .errors import ConfigError
from .modelspec import category_probabilities, get_family
from .panel import PanelDataset, RegionGraph, graph_from_neighbor_dict, load_adjacency

DEFAULT_SLOPES = {
    "companies": -0.02,
    "primary_sector": 1.0,
    "secondary_sector": -0.5,
    "gdp": 0.0005,
    "iefp": 10.0,
    "sa6": 4.0,
    "sa8": -1.5,
}

DEFAULT_INTERCEPTS = {
    "poisson": -2.8,
    "negbin": -9.0,
    "binomial": -2.2,
    "beta": -2.2,
    "multinomial": -1.8,   # unemployed vs inactive
}

DEFAULT_EMPLOYED_INTERCEPT = 0.35
DEFAULT_DISPERSION = {"negbin": 50.0, "beta": 150.0}

REGIONAL_NAMES = ("companies", "primary_sector", "secondary_sector")
TEMPORAL_NAMES = ("gdp",)
SPATIOTEMPORAL_NAMES = ("iefp", "sa6", "sa8")


@dataclass(frozen=True)
class ScenarioConfig:
    """Generating configuration; defaults give the 28 x 12 reference scale."""

    family: str = "binomial"
    num_regions: int = 28
    num_quarters: int = 12
    seed: int = 0
    graph: RegionGraph | None = None
    intercept: float | None = None
    coefficients: dict[str, float] | None = None
    employed_intercept: float = DEFAULT_EMPLOYED_INTERCEPT
    employed_slope_factor: float = -0.3
    dispersion: float | None = None
    prec_spatial: float = 15.0
    prec_trend: float = 150.0
    prec_cell: float = 800.0
    prec_area: float = 25.0
    prec_period: float = 150.0
    sample_size_min: float = 200.0
    sample_size_max: float = 3000.0
    quarter_size_jitter: float = 0.1
    active_share: float = 0.62
    active_share_sd: float = 0.04

    def __post_init__(self):
        get_family(self.family)
        if self.num_regions < 2 or self.num_quarters < 2:
            raise ConfigError("num_regions and num_quarters must both be at least 2")
        for name in ("prec_spatial", "prec_trend", "prec_cell", "prec_area",
                     "prec_period"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.dispersion is not None and self.dispersion <= 0:
            raise ConfigError("dispersion must be positive")
        if not 0 < self.sample_size_min <= self.sample_size_max:
            raise ConfigError("sample size range must be positive and ordered")
        if not 0 < self.active_share < 1:
            raise ConfigError("active_share must lie in (0, 1)")
        if self.coefficients is not None:
            unknown = set(self.coefficients) - set(DEFAULT_SLOPES)
            if unknown:
                raise ConfigError(f"unknown coefficient name(s) {sorted(unknown)}")

    def resolved_intercept(self) -> float:
        if self.intercept is not None:
            return self.intercept
        return DEFAULT_INTERCEPTS[get_family(self.family).name]

    def resolved_slopes(self) -> dict[str, float]:
        slopes = dict(DEFAULT_SLOPES)
        if self.coefficients:
            slopes.update(self.coefficients)
        return slopes

    def resolved_dispersion(self) -> float | None:
        fam = get_family(self.family).name
        if fam not in DEFAULT_DISPERSION:
            return None
        return self.dispersion if self.dispersion is not None else DEFAULT_DISPERSION[fam]


@dataclass
class TruthRecord:
    """Everything the generator knew: parameters, effects, and cell means."""

    family: str
    coef_names: tuple[str, ...]
    coefficients_raw: np.ndarray       # (Q, k) raw-scale, intercept first
    precisions: dict[str, float]
    dispersion: float | None
    spatial: np.ndarray | None
    trend: np.ndarray | None
    cell: np.ndarray | None            # (J, T)
    area: np.ndarray | None            # (Q, J)
    period: np.ndarray | None          # (Q, T)
    true_mean: np.ndarray              # (J, T) or (J, T, 3)
    true_rate: np.ndarray              # (J, T)
    covariate_means: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    graph: RegionGraph | None = None


def default_graph() -> RegionGraph:
    """The packaged 28-region mainland contiguity fixture."""
    ref = importlib.resources.files("saeb.data").joinpath("portugal_nuts3.txt")
    with importlib.resources.as_file(ref) as path:
        return load_adjacency(path)


def random_planar_graph(num_regions: int, rng: np.random.Generator) -> RegionGraph:
    """Delaunay triangulation of random points: planar and connected."""
    if num_regions == 2:
        return graph_from_neighbor_dict({1: [2], 2: [1]})
    from scipy.spatial import Delaunay

    pts = rng.uniform(size=(num_regions, 2))
    tri = Delaunay(pts)
    neighbors = {i: set() for i in range(1, num_regions + 1)}
    for simplex in tri.simplices:
        for a in simplex:
            for b in simplex:
                if a != b:
                    neighbors[a + 1].add(b + 1)
    return graph_from_neighbor_dict({i: sorted(v) for i, v in neighbors.items()})


def sample_icar(graph: RegionGraph, precision: float,
                rng: np.random.Generator) -> np.ndarray:
    """Draw from the intrinsic field restricted to the sum-to-zero subspace.

    Uses the eigendecomposition of the structure matrix (a Moore-Penrose
    construction): components along eigenvectors with positive eigenvalue
    get variance 1 / (precision * eigenvalue); the constant null vector is
    excluded, so the draw is centered by construction.
    """
    Q = effects.structure_matrix(graph)
    eigval, eigvec = np.linalg.eigh(Q)
    keep = eigval > 1e-8
    z = rng.standard_normal(int(keep.sum()))
    w = eigvec[:, keep] @ (z / np.sqrt(precision * eigval[keep]))
    return effects.center(w)


def sample_rw1(num_quarters: int, precision: float,
               rng: np.random.Generator) -> np.ndarray:
    """Cumulative N(0, 1/precision) increments, centered."""
    steps = rng.standard_normal(num_quarters - 1) / math.sqrt(precision)
    walk = np.concatenate([[0.0], np.cumsum(steps)])
    return effects.center(walk)


def _covariates(config: ScenarioConfig, graph: RegionGraph,
                rng: np.random.Generator):
    J, T = config.num_regions, config.num_quarters
    regional = np.column_stack([
        rng.uniform(5.0, 25.0, size=J),
        rng.uniform(0.01, 0.20, size=J),
        rng.uniform(0.10, 0.40, size=J),
    ])
    t_idx = np.arange(1, T + 1, dtype=float)
    gdp = (4000.0 + 35.0 * t_idx + 60.0 * np.sin(2.0 * np.pi * t_idx / 4.0)
           + rng.normal(0.0, 25.0, size=T))
    temporal = gdp[:, None]

    # spatially correlated levels shared by the quarterly covariates
    base = sample_icar(graph, 1.0, rng)
    base = base / max(base.std(), 1e-9)
    st = np.zeros((J, T, 3))
    st[:, :, 0] = np.clip(
        0.06 + 0.015 * base[:, None] + 0.0015 * t_idx[None, :]
        + rng.normal(0.0, 0.004, size=(J, T)), 0.005, 0.5)
    st[:, :, 1] = np.clip(
        0.08 + 0.015 * base[:, None] + rng.normal(0.0, 0.006, size=(J, T)),
        0.005, 0.5)
    st[:, :, 2] = np.clip(
        0.15 + 0.020 * base[:, None] + rng.normal(0.0, 0.008, size=(J, T)),
        0.01, 0.6)
    return regional, temporal, st


def _sample_sizes(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Region-stable sizes: log-uniform base per region, jitter per quarter."""
    J, T = config.num_regions, config.num_quarters
    base = np.exp(rng.uniform(math.log(config.sample_size_min),
                              math.log(config.sample_size_max), size=J))
    jitter = rng.uniform(1.0 - config.quarter_size_jitter,
                         1.0 + config.quarter_size_jitter, size=(J, T))
    return np.maximum(np.round(base[:, None] * jitter), 10).astype(np.int64)


def simulate(config: ScenarioConfig) -> tuple[PanelDataset, TruthRecord]:
    """Generate a dataset from the configured model with full ground truth."""
    family = get_family(config.family)
    rng = np.random.default_rng(config.seed)
    J, T = config.num_regions, config.num_quarters
    graph = config.graph
    if graph is None:
        graph = default_graph() if J == 28 else random_planar_graph(J, rng)
    if graph.num_regions != J:
        raise ConfigError("graph size does not match num_regions")

    regional, temporal, st = _covariates(config, graph, rng)
    slopes = config.resolved_slopes()
    intercept = config.resolved_intercept()
    phi = config.resolved_dispersion()

    n = _sample_sizes(config, rng)
    share = np.clip(rng.normal(config.active_share, config.active_share_sd,
                               size=(J, T)), 0.35, 0.85)
    m = np.maximum(np.round(n * share), 1).astype(np.int64)

    names = REGIONAL_NAMES + TEMPORAL_NAMES + SPATIOTEMPORAL_NAMES
    values = {
        "companies": np.broadcast_to(regional[:, 0:1], (J, T)),
        "primary_sector": np.broadcast_to(regional[:, 1:2], (J, T)),
        "secondary_sector": np.broadcast_to(regional[:, 2:3], (J, T)),
        "gdp": np.broadcast_to(temporal[:, 0][None, :], (J, T)),
        "iefp": st[:, :, 0],
        "sa6": st[:, :, 1],
        "sa8": st[:, :, 2],
    }
    means = {name: float(np.mean(_flat_index_set(name, values[name])))
             for name in names}

    def covariate_part(slope_scale=1.0):
        part = np.zeros((J, T))
        for name in names:
            part += slope_scale * slopes[name] * (values[name] - means[name])
        return part

    unstructured = family.name == "multinomial"
    if unstructured:
        area = np.stack([
            rng.normal(0.0, 1.0 / math.sqrt(config.prec_area), size=J)
            for _ in range(2)
        ])
        period = np.stack([
            rng.normal(0.0, 1.0 / math.sqrt(config.prec_period), size=T)
            for _ in range(2)
        ])
        spatial = trend = cell = None
    else:
        spatial = sample_icar(graph, config.prec_spatial, rng)
        trend = sample_rw1(T, config.prec_trend, rng)
        cell = rng.normal(0.0, 1.0 / math.sqrt(config.prec_cell), size=(J, T))
        area = period = None

    slope_scale = 1.0
    for attempt in range(20):
        eta = intercept + covariate_part(slope_scale)
        if not unstructured:
            eta = eta + spatial[:, None] + trend[None, :] + cell
        if family.is_count:
            eta = eta + np.log(n)
        if family.name != "negbin" or np.all(eta < -1e-8):
            break
        warnings.warn(
            "overdispersed-count linear predictor reached the link boundary; "
            "shrinking covariate effects and redrawing",
            stacklevel=2,
        )
        slope_scale *= 0.5
        regional, temporal, st = _covariates(config, graph, rng)
        values.update({
            "companies": np.broadcast_to(regional[:, 0:1], (J, T)),
            "primary_sector": np.broadcast_to(regional[:, 1:2], (J, T)),
            "secondary_sector": np.broadcast_to(regional[:, 2:3], (J, T)),
            "gdp": np.broadcast_to(temporal[:, 0][None, :], (J, T)),
            "iefp": st[:, :, 0], "sa6": st[:, :, 1], "sa8": st[:, :, 2],
        })
        means.update({name: float(np.mean(_flat_index_set(name, values[name])))
                      for name in names})
    else:
        raise ConfigError(
            "could not keep the overdispersed-count predictor below the link boundary"
        )

    if unstructured:
        eta_emp = (config.employed_intercept
                   + config.employed_slope_factor * covariate_part(slope_scale)
                   + area[0][:, None] + period[0][None, :])
        eta_unemp = eta + area[1][:, None] + period[1][None, :]
        probs = category_probabilities(np.stack([eta_emp, eta_unemp], axis=-1))
        counts = np.zeros((J, T, 3), dtype=np.int64)
        for j in range(J):
            for t in range(T):
                counts[j, t] = rng.multinomial(n[j, t], probs[j, t])
        employed = counts[:, :, 0]
        unemployed = counts[:, :, 1]
        inactive = counts[:, :, 2]
        true_mean = probs
        true_rate = probs[:, :, 1] / (probs[:, :, 0] + probs[:, :, 1])
    else:
        if family.name == "poisson":
            mu = np.exp(eta)
            unemployed = _bounded_counts(lambda: rng.poisson(mu), m, rng, mu)
            true_mean = mu
            true_rate = mu / m
        elif family.name == "negbin":
            mu = phi * np.exp(eta) / (-np.expm1(eta))
            unemployed = _bounded_counts(
                lambda: rng.negative_binomial(phi, phi / (phi + mu)), m, rng, mu)
            true_mean = mu
            true_rate = mu / m
        elif family.name == "binomial":
            rate = _expit(eta)
            unemployed = rng.binomial(m, rate)
            true_mean = rate
            true_rate = rate
        else:  # beta
            mu = _expit(eta)
            rates = rng.beta(mu * phi, (1.0 - mu) * phi)
            unemployed = np.clip(np.round(rates * m), 0, m).astype(np.int64)
            true_mean = mu
            true_rate = mu
        employed = m - unemployed
        inactive = n - m

    dataset = PanelDataset(
        unemployed=np.asarray(unemployed, dtype=np.int64),
        employed=np.asarray(employed, dtype=np.int64),
        inactive=np.asarray(inactive, dtype=np.int64),
        weight=np.ones((J, T)),
        regional_covariates=regional,
        temporal_covariates=temporal,
        spatiotemporal_covariates=st,
        regional_names=REGIONAL_NAMES,
        temporal_names=TEMPORAL_NAMES,
        spatiotemporal_names=SPATIOTEMPORAL_NAMES,
    )

    coef_names = ("intercept",) + names
    raw_slopes = np.array([slope_scale * slopes[name] for name in names])
    raw_intercept = intercept - float(sum(raw_slopes[i] * means[name]
                                          for i, name in enumerate(names)))
    if unstructured:
        emp_slopes = config.employed_slope_factor * raw_slopes
        emp_intercept = config.employed_intercept - float(
            sum(emp_slopes[i] * means[name] for i, name in enumerate(names)))
        coefs = np.stack([
            np.concatenate([[emp_intercept], emp_slopes]),
            np.concatenate([[raw_intercept], raw_slopes]),
        ])
        precisions = {"prec_area": config.prec_area,
                      "prec_period": config.prec_period}
    else:
        coefs = np.concatenate([[raw_intercept], raw_slopes])[None, :]
        precisions = {"prec_spatial": config.prec_spatial,
                      "prec_trend": config.prec_trend,
                      "prec_cell": config.prec_cell}

    truth = TruthRecord(
        family=family.name,
        coef_names=coef_names,
        coefficients_raw=coefs,
        precisions=precisions,
        dispersion=phi,
        spatial=spatial, trend=trend,
        cell=cell if cell is not None else None,
        area=area, period=period,
        true_mean=true_mean, true_rate=true_rate,
        covariate_means=means, seed=config.seed,
        graph=graph,
    )
    return dataset, truth


def _flat_index_set(name, grid):
    """A covariate's value vector over its own index set (not the full grid)."""
    if name in REGIONAL_NAMES:
        return grid[:, 0]
    if name in TEMPORAL_NAMES:
        return grid[0, :]
    return grid.reshape(-1)


def _bounded_counts(draw, m, rng, mu, max_tries: int = 100) -> np.ndarray:
    """Redraw cells until every count respects y <= active population."""
    y = draw()
    for _ in range(max_tries):
        bad = y > m
        if not bad.any():
            return y.astype(np.int64)
        y = np.where(bad, draw(), y)
    raise ConfigError("count draws keep exceeding the active population; "
                      "lower the intercept or raise the sample sizes")


def _expit(eta):
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# truth and scenario files


def write_truth(truth: TruthRecord, cell_path, params_path) -> None:
    """Write the cell-level truth CSV and the parameter-level truth CSV."""
    J, T = truth.true_rate.shape
    multinomial = truth.family == "multinomial"
    with open(cell_path, "w", encoding="utf-8", newline="") as fh:
        header = ["region", "quarter", "true_rate"]
        if multinomial:
            header += ["true_p_employed", "true_p_unemployed", "true_p_inactive"]
        else:
            header += ["true_mean"]
        fh.write(",".join(header) + "\n")
        for j in range(J):
            for t in range(T):
                row = [str(j + 1), str(t + 1), repr(float(truth.true_rate[j, t]))]
                if multinomial:
                    row += [repr(float(v)) for v in truth.true_mean[j, t]]
                else:
                    row += [repr(float(truth.true_mean[j, t]))]
                fh.write(",".join(row) + "\n")
    with open(params_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("name,value\n")
        Q = truth.coefficients_raw.shape[0]
        for q in range(Q):
            suffix = "" if Q == 1 else ("[employed]" if q == 0 else "[unemployed]")
            for name, value in zip(truth.coef_names, truth.coefficients_raw[q]):
                fh.write(f"{name}{suffix},{value!r}\n")
        for name, value in truth.precisions.items():
            fh.write(f"{name},{value!r}\n")
        if truth.dispersion is not None:
            fh.write(f"dispersion,{truth.dispersion!r}\n")
        fh.write(f"seed,{truth.seed}\n")


_SCENARIO_SCALARS = {
    "family": str, "num_regions": int, "num_quarters": int, "seed": int,
    "intercept": float, "employed_intercept": float,
    "employed_slope_factor": float, "dispersion": float,
    "prec_spatial": float, "prec_trend": float, "prec_cell": float,
    "prec_area": float, "prec_period": float,
    "sample_size_min": float, "sample_size_max": float,
    "quarter_size_jitter": float, "active_share": float,
    "active_share_sd": float,
}


def read_scenario_file(path) -> ScenarioConfig:
    """Parse a key = value scenario file; coef_<name> keys set slopes."""
    kwargs: dict = {}
    coefs: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key.startswith("coef_"):
                coefs[key[5:]] = float(value)
            elif key in _SCENARIO_SCALARS:
                kwargs[key] = _SCENARIO_SCALARS[key](value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if coefs:
        kwargs["coefficients"] = coefs
    return ScenarioConfig(**kwargs)


def scenario_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(ScenarioConfig))
