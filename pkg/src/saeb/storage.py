"""Persistence: posterior sample directories, run manifests, and CSV tables.

Samples are stored as one CSV per parameter block plus a meta.json carrying
the model declaration, sampler settings, and the covariate standardization
record, which is enough to reload them against the original panel and replay
or recompute anything downstream.  Floats are written with shortest
round-trip formatting so replays are byte-identical.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import SpecError
from .mcmc import MCMCConfig, PosteriorSamples, precision_names
from .modelspec import ModelSpec, PredictorSpec, PriorSpec, build_design, get_family
from .panel import CovariateScale, PanelDataset, standardize_covariates


def float_repr(value) -> str:
    return repr(float(value))


def write_table(path, header, rows) -> None:
    """Deterministic CSV writer; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                str(v) if isinstance(v, (int, np.integer, str)) else float_repr(v)
                for v in row
            ) + "\n")


def _frame(draws_2d: np.ndarray, columns) -> pd.DataFrame:
    """(C, S, k) draws to a chain/draw-indexed frame."""
    C, S = draws_2d.shape[0], draws_2d.shape[1]
    flat = draws_2d.reshape(C * S, -1)
    df = pd.DataFrame(flat, columns=list(columns))
    df.insert(0, "draw", np.tile(np.arange(S), C))
    df.insert(0, "chain", np.repeat(np.arange(C), S))
    return df


# ---------------------------------------------------------------------------
# model spec serialization


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "family": spec.family.name,
        "predictor": dataclasses.asdict(spec.predictor),
        "priors": dataclasses.asdict(spec.priors),
    }


def spec_from_dict(data: dict) -> ModelSpec:
    pred = dict(data["predictor"])
    for key in ("regional_terms", "temporal_terms", "spatiotemporal_terms"):
        if pred.get(key) is not None:
            pred[key] = tuple(pred[key])
    spec = ModelSpec(family=get_family(data["family"]),
                     predictor=PredictorSpec(**pred),
                     priors=PriorSpec(**data["priors"]))
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# posterior sample directories


def save_samples(samples: PosteriorSamples, directory, spec: ModelSpec) -> list[str]:
    """Write per-parameter CSV files plus meta.json; returns written names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, frame):
        frame.to_csv(directory / name, index=False)
        written.append(name)

    emit("coefficients.csv", _frame(
        samples.coefficients.reshape(samples.num_chains, samples.draws_per_chain, -1),
        samples.coef_labels))

    hyper_cols = list(samples.precisions)
    hyper = np.stack([samples.precisions[n] for n in hyper_cols], axis=-1) \
        if hyper_cols else np.zeros((samples.num_chains, samples.draws_per_chain, 0))
    if samples.dispersion is not None:
        hyper = np.concatenate([hyper, samples.dispersion[:, :, None]], axis=-1)
        hyper_cols.append("dispersion")
    emit("hyperparameters.csv", _frame(hyper, hyper_cols))

    J, T = samples.num_regions, samples.num_quarters
    if samples.spatial is not None:
        emit("spatial.csv", _frame(samples.spatial,
                                   [f"spatial_{j + 1}" for j in range(J)]))
        emit("trend.csv", _frame(samples.trend,
                                 [f"trend_{t + 1}" for t in range(T)]))
        emit("cell.csv", _frame(samples.cell,
                                [f"cell_{j + 1}_{t + 1}"
                                 for j in range(J) for t in range(T)]))
    if samples.area is not None:
        q_labels = ("employed", "unemployed")[:samples.num_categories]
        emit("area.csv", _frame(
            samples.area.reshape(samples.num_chains, samples.draws_per_chain, -1),
            [f"area_{q}_{j + 1}" for q in q_labels for j in range(J)]))
        emit("period.csv", _frame(
            samples.period.reshape(samples.num_chains, samples.draws_per_chain, -1),
            [f"period_{q}_{t + 1}" for q in q_labels for t in range(T)]))

    emit("deviance.csv", _frame(samples.deviance[:, :, None], ["deviance"]))

    meta = {
        "spec": spec_to_dict(spec),
        "config": dataclasses.asdict(samples.config),
        "num_regions": J,
        "num_quarters": T,
        "standardized": samples.standardization is not None,
        "standardization": (
            {name: dataclasses.asdict(sc) for name, sc in samples.standardization.items()}
            if samples.standardization else None),
        "engine_version": __version__,
    }
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    written.append("meta.json")
    return written


def load_samples(directory, dataset: PanelDataset) -> tuple[PosteriorSamples, ModelSpec, PanelDataset]:
    """Reload a sample directory against its panel.

    Returns the samples, the model spec they were drawn under, and the
    dataset on the scale the sampler saw (standardized when the original fit
    standardized).
    """
    directory = Path(directory)
    with open(directory / "meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    spec = spec_from_dict(meta["spec"])
    config = MCMCConfig(**meta["config"])
    if meta["standardized"]:
        dataset = standardize_covariates(dataset)
    design = build_design(dataset, spec)

    def read(name):
        df = pd.read_csv(directory / name, float_precision="round_trip")
        chains = int(df["chain"].max()) + 1
        draws = int(df["draw"].max()) + 1
        # memory layout matters: downstream reductions must take the same
        # summation paths as on freshly drawn (C-contiguous) arrays
        values = np.ascontiguousarray(df.drop(columns=["chain", "draw"]).to_numpy())
        return values.reshape(chains, draws, -1), list(df.columns[2:])

    coefs, coef_labels = read("coefficients.csv")
    Q = spec.family.num_predictors
    coefs = coefs.reshape(coefs.shape[0], coefs.shape[1], Q, -1)
    hyper, hyper_cols = read("hyperparameters.csv")
    precisions = {}
    dispersion = None
    for i, name in enumerate(hyper_cols):
        if name == "dispersion":
            dispersion = hyper[:, :, i]
        else:
            precisions[name] = hyper[:, :, i]
    structure = spec.effect_structure
    expected = set(precision_names(structure))
    if expected != set(precisions):
        raise SpecError("stored precisions do not match the model declaration")

    spatial = trend = cell = area = period = None
    if structure == "structured":
        spatial = read("spatial.csv")[0].reshape(coefs.shape[0], coefs.shape[1], -1)
        trend = read("trend.csv")[0].reshape(coefs.shape[0], coefs.shape[1], -1)
        cell = read("cell.csv")[0].reshape(coefs.shape[0], coefs.shape[1], -1)
    elif structure == "unstructured":
        J, T = meta["num_regions"], meta["num_quarters"]
        area = read("area.csv")[0].reshape(coefs.shape[0], coefs.shape[1], Q, J)
        period = read("period.csv")[0].reshape(coefs.shape[0], coefs.shape[1], Q, T)
    deviance = read("deviance.csv")[0][:, :, 0]

    record = None
    if meta["standardization"]:
        record = {name: CovariateScale(**sc) for name, sc in meta["standardization"].items()}

    samples = PosteriorSamples(
        family_name=spec.family.name,
        effect_structure=structure,
        coef_labels=tuple(coef_labels),
        column_names=design.column_names,
        include_intercept=spec.predictor.include_intercept,
        num_regions=meta["num_regions"],
        num_quarters=meta["num_quarters"],
        coefficients=coefs,
        precisions=precisions,
        dispersion=dispersion,
        spatial=spatial, trend=trend, cell=cell, area=area, period=period,
        deviance=deviance,
        config=config,
        design=design,
        standardization=record,
        trend_structure=spec.predictor.trend_structure,
        ar1_rho=spec.predictor.ar1_rho,
    )
    return samples, spec, dataset


# ---------------------------------------------------------------------------
# run manifests


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, args: dict, inputs: dict,
                   artifact_names: list[str]) -> Path:
    """Record a replayable run: resolved arguments, input and output hashes."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "args": args,
        "engine_version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "inputs": {str(p): sha256_file(p) for p in inputs.values() if p},
        "input_paths": {k: (str(v) if v else None) for k, v in inputs.items()},
        "artifacts": {name: sha256_file(out_dir / name) for name in sorted(artifact_names)},
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def load_manifest(out_dir) -> dict:
    with open(Path(out_dir) / "manifest.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def verify_artifacts(out_dir) -> None:
    """Raise SpecError when any recorded artifact hash no longer matches."""
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    for name, digest in manifest["artifacts"].items():
        path = out_dir / name
        if not path.exists() or sha256_file(path) != digest:
            raise SpecError(f"artifact {name!r} does not match its manifest hash")


def artifact_files(out_dir) -> list[str]:
    """Every regular file under out_dir except the manifest itself."""
    out_dir = Path(out_dir)
    names = []
    for root, _dirs, files in os.walk(out_dir):
        for fname in files:
            rel = str((Path(root) / fname).relative_to(out_dir))
            if rel != "manifest.json":
                names.append(rel)
    return sorted(names)
