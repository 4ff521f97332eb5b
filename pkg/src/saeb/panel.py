"""Area-by-quarter panel ingestion, validation, and covariate standardization.

The panel is a complete J x T grid of labor-market counts per region and
quarter, together with three groups of covariates: regional (constant over
quarters), temporal (constant over regions), and spatio-temporal.  Counts are
authoritative; rates and totals are always derived from them.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import (
    AsymmetryError,
    DisconnectedGraphError,
    DomainError,
    GridIncompleteError,
    InconsistentCountsError,
)

DEFAULT_REGIONAL = ("companies", "primary_sector", "secondary_sector")
DEFAULT_TEMPORAL = ("gdp",)
DEFAULT_SPATIOTEMPORAL = ("iefp", "sa6", "sa8")


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for a panel CSV file.

    ``active`` and ``sample_size`` columns are optional; when present they are
    validated against the count identities but never trusted as data.
    """

    region: str = "region"
    quarter: str = "quarter"
    unemployed: str = "unemployed"
    employed: str = "employed"
    inactive: str = "inactive"
    active: str | None = None
    sample_size: str | None = None
    weight: str | None = "weight"
    regional: tuple[str, ...] = DEFAULT_REGIONAL
    temporal: tuple[str, ...] = DEFAULT_TEMPORAL
    spatiotemporal: tuple[str, ...] = DEFAULT_SPATIOTEMPORAL


@dataclass(frozen=True)
class PanelObservation:
    """One validated (region, quarter) cell."""

    region_id: int
    quarter_id: int
    unemployed_count: int
    employed_count: int
    inactive_count: int
    sample_size: int
    active_count: int
    unemployment_rate: float | None
    design_weight: float = 1.0

    def __post_init__(self):
        if min(self.unemployed_count, self.employed_count, self.inactive_count) < 0:
            raise DomainError("counts must be nonnegative")
        if self.sample_size <= 0:
            raise DomainError("sample size must be positive")
        if self.design_weight <= 0:
            raise DomainError("design weight must be positive")
        if self.active_count != self.unemployed_count + self.employed_count:
            raise InconsistentCountsError(
                -1, "active count must equal unemployed + employed"
            )
        if self.sample_size != self.active_count + self.inactive_count:
            raise InconsistentCountsError(
                -1, "sample size must equal unemployed + employed + inactive"
            )


@dataclass(frozen=True)
class CovariateScale:
    """Centering and scaling applied to one covariate."""

    mean: float
    scale: float
    constant: bool = False


@dataclass(frozen=True)
class PanelDataset:
    """Immutable J x T panel with covariates.

    All count arrays are (J, T), regions indexed 0..J-1 internally for region
    ids 1..J, quarters likewise.  ``rate`` is NaN where the active population
    is zero.
    """

    unemployed: np.ndarray
    employed: np.ndarray
    inactive: np.ndarray
    weight: np.ndarray
    regional_covariates: np.ndarray        # (J, p1)
    temporal_covariates: np.ndarray        # (T, p2)
    spatiotemporal_covariates: np.ndarray  # (J, T, p3)
    regional_names: tuple[str, ...]
    temporal_names: tuple[str, ...]
    spatiotemporal_names: tuple[str, ...]
    standardization: dict[str, CovariateScale] | None = None
    weights_explicit: bool = False
    sample_size: np.ndarray = field(init=False)
    active: np.ndarray = field(init=False)
    rate: np.ndarray = field(init=False)

    def __post_init__(self):
        active = self.unemployed + self.employed
        sample = active + self.inactive
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(active > 0, self.unemployed / np.maximum(active, 1), np.nan)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "sample_size", sample)
        object.__setattr__(self, "rate", rate)
        for arr in (
            self.unemployed, self.employed, self.inactive, self.weight,
            self.regional_covariates, self.temporal_covariates,
            self.spatiotemporal_covariates, active, sample, rate,
        ):
            arr.setflags(write=False)

    @property
    def num_regions(self) -> int:
        return self.unemployed.shape[0]

    @property
    def num_quarters(self) -> int:
        return self.unemployed.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.regional_names + self.temporal_names + self.spatiotemporal_names

    def observation(self, region_id: int, quarter_id: int) -> PanelObservation:
        j, t = region_id - 1, quarter_id - 1
        rate = self.rate[j, t]
        return PanelObservation(
            region_id=region_id,
            quarter_id=quarter_id,
            unemployed_count=int(self.unemployed[j, t]),
            employed_count=int(self.employed[j, t]),
            inactive_count=int(self.inactive[j, t]),
            sample_size=int(self.sample_size[j, t]),
            active_count=int(self.active[j, t]),
            unemployment_rate=None if np.isnan(rate) else float(rate),
            design_weight=float(self.weight[j, t]),
        )

    def covariate_values(self, name: str) -> np.ndarray:
        """Return the flat value vector of a covariate over its index set."""
        if name in self.regional_names:
            return np.asarray(self.regional_covariates[:, self.regional_names.index(name)])
        if name in self.temporal_names:
            return np.asarray(self.temporal_covariates[:, self.temporal_names.index(name)])
        if name in self.spatiotemporal_names:
            k = self.spatiotemporal_names.index(name)
            return np.asarray(self.spatiotemporal_covariates[:, :, k]).ravel()
        raise KeyError(name)

    def truncate_quarters(self, keep: int) -> "PanelDataset":
        """Return a copy restricted to the first ``keep`` quarters."""
        if not 1 <= keep <= self.num_quarters:
            raise DomainError(f"cannot keep {keep} of {self.num_quarters} quarters")
        return PanelDataset(
            unemployed=self.unemployed[:, :keep].copy(),
            employed=self.employed[:, :keep].copy(),
            inactive=self.inactive[:, :keep].copy(),
            weight=self.weight[:, :keep].copy(),
            regional_covariates=self.regional_covariates.copy(),
            temporal_covariates=self.temporal_covariates[:keep].copy(),
            spatiotemporal_covariates=self.spatiotemporal_covariates[:, :keep].copy(),
            regional_names=self.regional_names,
            temporal_names=self.temporal_names,
            spatiotemporal_names=self.spatiotemporal_names,
            standardization=self.standardization,
            weights_explicit=self.weights_explicit,
        )


@dataclass(frozen=True)
class RegionGraph:
    """Symmetric, loop-free, connected adjacency structure over regions."""

    num_regions: int
    neighbor_lists: tuple[tuple[int, ...], ...]  # 1-based ids, sorted

    def __post_init__(self):
        if len(self.neighbor_lists) != self.num_regions:
            raise DomainError("one neighbor list required per region")
        seen = set()
        for i, nbrs in enumerate(self.neighbor_lists, start=1):
            for k in nbrs:
                if k == i:
                    raise DomainError(f"region {i} lists itself as a neighbor")
                if not 1 <= k <= self.num_regions:
                    raise DomainError(f"region {i} lists unknown neighbor {k}")
                if i not in self.neighbor_lists[k - 1]:
                    raise AsymmetryError(i, k)
                seen.add((min(i, k), max(i, k)))
        sizes = self._component_sizes()
        if len(sizes) > 1:
            raise DisconnectedGraphError(sizes)
        object.__setattr__(self, "_edge_count", len(seen))

    def _component_sizes(self) -> list[int]:
        unvisited = set(range(1, self.num_regions + 1))
        sizes = []
        while unvisited:
            stack = [unvisited.pop()]
            size = 1
            while stack:
                node = stack.pop()
                for k in self.neighbor_lists[node - 1]:
                    if k in unvisited:
                        unvisited.remove(k)
                        stack.append(k)
                        size += 1
            sizes.append(size)
        return sizes

    @property
    def num_edges(self) -> int:
        return self._edge_count

    def neighbors(self, region_id: int) -> tuple[int, ...]:
        return self.neighbor_lists[region_id - 1]

    def degrees(self) -> np.ndarray:
        return np.array([len(nbrs) for nbrs in self.neighbor_lists], dtype=np.int64)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edge list as 1-based (i, k) pairs with i < k."""
        out = []
        for i, nbrs in enumerate(self.neighbor_lists, start=1):
            out.extend((i, k) for k in nbrs if i < k)
        return out

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """0-based CSR (indptr, indices) view of the adjacency."""
        indptr = np.zeros(self.num_regions + 1, dtype=np.int64)
        indices = []
        for i, nbrs in enumerate(self.neighbor_lists):
            indices.extend(k - 1 for k in nbrs)
            indptr[i + 1] = len(indices)
        return indptr, np.array(indices, dtype=np.int64)


def graph_from_neighbor_dict(neighbors: dict[int, list[int]]) -> RegionGraph:
    """Build a RegionGraph from a {region_id: [neighbor ids]} mapping."""
    num = len(neighbors)
    if sorted(neighbors) != list(range(1, num + 1)):
        raise DomainError("region ids must be 1..J with no gaps")
    lists = tuple(tuple(sorted(neighbors[i])) for i in range(1, num + 1))
    return RegionGraph(num_regions=num, neighbor_lists=lists)


def load_adjacency(path) -> RegionGraph:
    """Read a neighbor-list text file, one region per line: ``id: id id ...``."""
    neighbors: dict[int, list[int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise DomainError(f"line {lineno}: expected 'id: id id ...'")
            head, tail = line.split(":", 1)
            try:
                region = int(head)
                nbrs = [int(tok) for tok in tail.split()]
            except ValueError as exc:
                raise DomainError(f"line {lineno}: non-integer region id") from exc
            if region in neighbors:
                raise DomainError(f"line {lineno}: region {region} listed twice")
            neighbors[region] = nbrs
    if not neighbors:
        raise DomainError("adjacency file is empty")
    return graph_from_neighbor_dict(neighbors)


def write_adjacency(graph: RegionGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, nbrs in enumerate(graph.neighbor_lists, start=1):
            fh.write(f"{i}: {' '.join(str(k) for k in nbrs)}\n".rstrip() + "\n")


def _check_group_constant(df, col, by, label):
    grouped = df.groupby(by)[col].nunique()
    bad = grouped[grouped > 1]
    if len(bad) > 0:
        raise DomainError(
            f"{label} covariate {col!r} varies within {by} {bad.index[0]}"
        )


def load_panel(path, schema: PanelSchema | None = None) -> PanelDataset:
    """Load and validate a panel CSV into a PanelDataset.

    Rates are recomputed from counts; a rate column in the file, if any, is
    ignored.  Raises GridIncompleteError when any (region, quarter) cell is
    missing or duplicated, InconsistentCountsError when a declared active or
    sample-size column contradicts the counts, and DomainError for values
    outside their domain.
    """
    schema = schema or PanelSchema()
    df = pd.read_csv(path, float_precision="round_trip")
    required = [schema.region, schema.quarter, schema.unemployed,
                schema.employed, schema.inactive]
    required += list(schema.regional) + list(schema.temporal) + list(schema.spatiotemporal)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DomainError(f"missing columns: {missing}")

    regions = df[schema.region].to_numpy()
    quarters = df[schema.quarter].to_numpy()
    if not (np.issubdtype(regions.dtype, np.integer) and np.issubdtype(quarters.dtype, np.integer)):
        raise DomainError("region and quarter columns must be integers")
    J, T = int(regions.max()), int(quarters.max())
    if regions.min() < 1 or quarters.min() < 1:
        raise DomainError("region and quarter ids are 1-based")
    if len(df) != J * T:
        raise GridIncompleteError(
            f"expected {J}x{T}={J * T} rows for a complete grid, found {len(df)}"
        )
    cells = set(zip(regions.tolist(), quarters.tolist()))
    if len(cells) != J * T:
        raise GridIncompleteError("duplicate or missing (region, quarter) cells")

    counts = {}
    for name in (schema.unemployed, schema.employed, schema.inactive):
        col = df[name].to_numpy()
        if not np.issubdtype(col.dtype, np.integer):
            raise DomainError(f"count column {name!r} must be integer")
        if col.min() < 0:
            raise DomainError(f"negative count in column {name!r}")
        counts[name] = col

    active = counts[schema.unemployed] + counts[schema.employed]
    sample = active + counts[schema.inactive]
    if schema.active and schema.active in df.columns:
        declared = df[schema.active].to_numpy()
        bad = np.nonzero(declared != active)[0]
        if bad.size:
            raise InconsistentCountsError(
                int(bad[0]), "declared active count differs from unemployed + employed"
            )
    if schema.sample_size and schema.sample_size in df.columns:
        declared = df[schema.sample_size].to_numpy()
        bad = np.nonzero(declared != sample)[0]
        if bad.size:
            raise InconsistentCountsError(
                int(bad[0]), "declared sample size differs from sum of counts"
            )
    if sample.min() <= 0:
        raise DomainError("every cell needs a positive sample size")

    if schema.weight and schema.weight in df.columns:
        weight = df[schema.weight].to_numpy(dtype=float)
        if np.any(weight <= 0):
            raise DomainError("design weights must be positive")
        weights_explicit = True
    else:
        weight = np.ones(len(df))
        weights_explicit = False

    for col in schema.regional:
        _check_group_constant(df, col, schema.region, "regional")
    for col in schema.temporal:
        _check_group_constant(df, col, schema.quarter, "temporal")
    for col in set(schema.regional) | set(schema.temporal) | set(schema.spatiotemporal):
        if df[col].isna().any():
            raise DomainError(f"covariate {col!r} contains missing values")

    def grid(col):
        out = np.zeros((J, T))
        out[regions - 1, quarters - 1] = col
        return out

    unemployed = grid(counts[schema.unemployed]).astype(np.int64)
    employed = grid(counts[schema.employed]).astype(np.int64)
    inactive = grid(counts[schema.inactive]).astype(np.int64)
    weight_grid = grid(weight)

    regional = np.zeros((J, len(schema.regional)))
    for k, col in enumerate(schema.regional):
        vals = df.groupby(schema.region)[col].first()
        regional[:, k] = vals.reindex(range(1, J + 1)).to_numpy()
    temporal = np.zeros((T, len(schema.temporal)))
    for k, col in enumerate(schema.temporal):
        vals = df.groupby(schema.quarter)[col].first()
        temporal[:, k] = vals.reindex(range(1, T + 1)).to_numpy()
    st = np.zeros((J, T, len(schema.spatiotemporal)))
    for k, col in enumerate(schema.spatiotemporal):
        st[regions - 1, quarters - 1, k] = df[col].to_numpy(dtype=float)

    return PanelDataset(
        unemployed=unemployed,
        employed=employed,
        inactive=inactive,
        weight=weight_grid,
        regional_covariates=regional,
        temporal_covariates=temporal,
        spatiotemporal_covariates=st,
        regional_names=tuple(schema.regional),
        temporal_names=tuple(schema.temporal),
        spatiotemporal_names=tuple(schema.spatiotemporal),
        weights_explicit=weights_explicit,
    )


def _format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_panel(dataset: PanelDataset, path, schema: PanelSchema | None = None) -> None:
    """Write a panel CSV that load_panel reads back to an equal dataset."""
    schema = schema or PanelSchema(
        regional=dataset.regional_names,
        temporal=dataset.temporal_names,
        spatiotemporal=dataset.spatiotemporal_names,
    )
    header = [schema.region, schema.quarter, schema.unemployed, schema.employed,
              schema.inactive]
    header += list(dataset.regional_names) + list(dataset.temporal_names)
    header += list(dataset.spatiotemporal_names)
    if dataset.weights_explicit:
        header.append(schema.weight or "weight")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    J, T = dataset.num_regions, dataset.num_quarters
    for j in range(J):
        for t in range(T):
            row = [str(j + 1), str(t + 1), str(int(dataset.unemployed[j, t])),
                   str(int(dataset.employed[j, t])), str(int(dataset.inactive[j, t]))]
            row += [_format_value(v) for v in dataset.regional_covariates[j]]
            row += [_format_value(v) for v in dataset.temporal_covariates[t]]
            row += [_format_value(v) for v in dataset.spatiotemporal_covariates[j, t]]
            if dataset.weights_explicit:
                row.append(_format_value(dataset.weight[j, t]))
            buf.write(",".join(row) + "\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def standardize_covariates(dataset: PanelDataset) -> PanelDataset:
    """Center and scale every covariate to sample mean 0 and sd 1 (ddof=1).

    Constant covariates are left unscaled and flagged in the record.  The
    record supports an exact inverse transform of fitted coefficients.
    """
    record: dict[str, CovariateScale] = {}

    def scale_block(block, names):
        out = block.astype(float).copy()
        flat = out.reshape(-1, out.shape[-1])
        for k, name in enumerate(names):
            mean = float(flat[:, k].mean())
            sd = float(flat[:, k].std(ddof=1)) if flat.shape[0] > 1 else 0.0
            if sd == 0.0:
                record[name] = CovariateScale(mean=mean, scale=1.0, constant=True)
            else:
                record[name] = CovariateScale(mean=mean, scale=sd)
                out[..., k] = (out[..., k] - mean) / sd
        return out

    return replace(
        dataset,
        regional_covariates=scale_block(dataset.regional_covariates, dataset.regional_names),
        temporal_covariates=scale_block(dataset.temporal_covariates, dataset.temporal_names),
        spatiotemporal_covariates=scale_block(
            dataset.spatiotemporal_covariates, dataset.spatiotemporal_names
        ),
        standardization=record,
    )


def coefficients_to_raw(coefs: np.ndarray, names: list[str],
                        record: dict[str, CovariateScale],
                        include_intercept: bool = True) -> np.ndarray:
    """Map coefficient draws on the standardized scale back to the raw scale.

    ``coefs`` has shape (..., k) with the intercept first when present.  The
    slope for covariate c becomes slope/scale_c and the intercept absorbs
    -sum(slope_c * mean_c / scale_c).  Exact inverse of the forward transform.
    """
    out = np.array(coefs, dtype=float, copy=True)
    start = 1 if include_intercept else 0
    shift = np.zeros(out.shape[:-1])
    for k, name in enumerate(names):
        sc = record.get(name)
        if sc is None or sc.constant:
            continue
        out[..., start + k] = out[..., start + k] / sc.scale
        shift = shift + out[..., start + k] * sc.mean
    if include_intercept:
        out[..., 0] = out[..., 0] - shift
    return out


def coefficients_to_standardized(coefs: np.ndarray, names: list[str],
                                 record: dict[str, CovariateScale],
                                 include_intercept: bool = True) -> np.ndarray:
    """Inverse of coefficients_to_raw."""
    out = np.array(coefs, dtype=float, copy=True)
    start = 1 if include_intercept else 0
    shift = np.zeros(out.shape[:-1])
    for k, name in enumerate(names):
        sc = record.get(name)
        if sc is None or sc.constant:
            continue
        shift = shift + out[..., start + k] * sc.mean
        out[..., start + k] = out[..., start + k] * sc.scale
    if include_intercept:
        out[..., 0] = out[..., 0] + shift
    return out
