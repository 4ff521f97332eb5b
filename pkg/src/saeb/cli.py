"""Command-line front end: simulate -> fit -> diagnose -> compare.

Every command writes its artifacts plus a manifest.json recording the
resolved arguments and content hashes, which is enough to replay the run
byte-identically.  Exit codes: 0 success, 2 user or configuration error,
3 convergence warning (outputs still written).
"""

from __future__ import annotations

import dataclasses
import functools
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import diagnostics as diag
from . import mcmc, storage
from .errors import SaebError
from .modelspec import ModelSpec, PredictorSpec, PriorSpec, get_family, read_spec_file
from .panel import load_adjacency, load_panel, standardize_covariates, write_adjacency, write_panel
from .simulate import ScenarioConfig, read_scenario_file, simulate, write_truth

EXIT_USER_ERROR = 2
EXIT_CONVERGENCE = 3


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_USER_ERROR)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SaebError as exc:
            _fail(str(exc))
        except FileNotFoundError as exc:
            _fail(f"missing file: {exc.filename or exc}")

    return wrapper


def _resolve_seed(seed: int) -> int:
    env = os.environ.get("SAEB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            _fail(f"SAEB_SEED must be an integer, got {env!r}")
    return seed


@click.group()
def main():
    """Small-area estimation engine for area-by-quarter labor panels."""


@main.command("simulate")
@click.option("--family", default=None,
              help="Generating family (default binomial, or the config file's).")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Scenario file of key = value lines; flags override it.")
@click.option("--regions", type=int, default=None)
@click.option("--quarters", type=int, default=None)
@click.option("--phi", type=float, default=None, help="True dispersion.")
@click.option("--out", required=True, type=click.Path())
@_guarded
def cmd_simulate(family, seed, config_path, regions, quarters, phi, out):
    """Generate a synthetic panel with ground truth."""
    seed = _resolve_seed(seed)
    base = read_scenario_file(config_path) if config_path else ScenarioConfig()
    overrides = {"seed": seed}
    if family is not None:
        overrides["family"] = family
    if regions is not None:
        overrides["num_regions"] = regions
    if quarters is not None:
        overrides["num_quarters"] = quarters
    if phi is not None:
        overrides["dispersion"] = phi
    config = dataclasses.replace(base, **overrides)

    dataset, truth = simulate(config)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_panel(dataset, out_dir / "panel.csv")
    write_adjacency(truth.graph, out_dir / "adjacency.txt")
    write_truth(truth, out_dir / "truth.csv", out_dir / "truth_params.csv")
    args = {"family": config.family, "seed": seed, "config": config_path,
            "regions": config.num_regions, "quarters": config.num_quarters,
            "phi": config.dispersion, "out": str(out)}
    storage.write_manifest(out_dir, "simulate", args,
                           {"config": config_path},
                           storage.artifact_files(out_dir))
    click.echo(f"wrote {out_dir}/panel.csv, adjacency.txt, truth.csv")


def _build_spec(spec_path, model) -> ModelSpec:
    if spec_path:
        spec = read_spec_file(spec_path)
        if model:
            spec = ModelSpec(family=get_family(model), predictor=spec.predictor,
                             priors=spec.priors)
            spec.validate()
        return spec
    spec = ModelSpec(family=get_family(model or "poisson"),
                     predictor=PredictorSpec(), priors=PriorSpec())
    spec.validate()
    return spec


def _summary_rows(summary):
    for row in summary.parameters:
        yield (row.name, row.mean, row.sd, row.q2_5, row.q97_5)


def _write_summary(summary, path):
    storage.write_table(path, ["parameter", "mean", "sd", "q2.5", "q97.5"],
                        _summary_rows(summary))


def _write_fitted(summary, path, family_name):
    J = summary.fitted_mean.shape[0]
    T = summary.fitted_mean.shape[1]
    rows = []
    if family_name == "multinomial":
        header = ["region", "quarter"]
        for cat in ("employed", "unemployed", "inactive"):
            header += [f"{cat}_mean", f"{cat}_lower", f"{cat}_upper"]
        for j in range(J):
            for t in range(T):
                row = [j + 1, t + 1]
                for c in range(3):
                    row += [summary.fitted_mean[j, t, c],
                            summary.fitted_lower[j, t, c],
                            summary.fitted_upper[j, t, c]]
                rows.append(row)
    else:
        header = ["region", "quarter", "mean", "lower", "upper"]
        for j in range(J):
            for t in range(T):
                rows.append([j + 1, t + 1, summary.fitted_mean[j, t],
                             summary.fitted_lower[j, t], summary.fitted_upper[j, t]])
    storage.write_table(path, header, rows)


@main.command("fit")
@click.option("--panel", required=True, type=click.Path())
@click.option("--adjacency", type=click.Path(), default=None)
@click.option("--spec", "spec_path", type=click.Path(), default=None)
@click.option("--model", default=None, help="Family override.")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--chains", default=4, type=int, show_default=True)
@click.option("--iters", default=20000, type=int, show_default=True)
@click.option("--burnin", default=5000, type=int, show_default=True)
@click.option("--thin", default=5, type=int, show_default=True)
@click.option("--psrf-threshold", default=1.1, type=float, show_default=True)
@click.option("--holdout-last-quarter", is_flag=True, default=False,
              help="Fit on the first T-1 quarters and predict the last one.")
@click.option("--standardize/--no-standardize", default=True, show_default=True)
@click.option("--scale", default="raw", type=click.Choice(["raw", "standardized"]),
              show_default=True, help="Coefficient scale of summary.csv.")
@click.option("--out", required=True, type=click.Path())
@_guarded
def cmd_fit(panel, adjacency, spec_path, model, seed, chains, iters, burnin,
            thin, psrf_threshold, holdout_last_quarter, standardize, scale, out):
    """Fit one model and write samples, summary table, and fitted values."""
    seed = _resolve_seed(seed)
    spec = _build_spec(spec_path, model)
    dataset = load_panel(panel)
    graph = None
    if spec.effect_structure == "structured":
        if adjacency is None:
            _fail("structured effects need --adjacency")
        graph = load_adjacency(adjacency)
    work = standardize_covariates(dataset) if standardize else dataset
    config = mcmc.MCMCConfig(num_chains=chains, iterations=iters,
                             burn_in=burnin, thinning=thin, base_seed=seed)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    holdout = None
    if holdout_last_quarter:
        holdout = mcmc.predict_holdout(work, spec, config, graph)
        samples = holdout.training_samples
    else:
        samples = mcmc.fit(work, spec, config, graph)

    summary = mcmc.summarize(samples, scale=scale)
    _write_summary(summary, out_dir / "summary.csv")
    _write_fitted(summary, out_dir / "fitted.csv", samples.family_name)
    storage.save_samples(samples, out_dir / "samples", spec)
    if holdout is not None:
        header = ["region", "mean", "lower", "upper"]
        has_rate = holdout.rate_mean is not None
        if has_rate:
            header += ["rate_mean", "rate_lower", "rate_upper"]
        rows = []
        for idx, region in enumerate(holdout.region_ids):
            mean = holdout.mean[idx]
            if np.ndim(mean) > 0:
                mean = holdout.rate_mean[idx]
                lo, hi = holdout.rate_lower[idx], holdout.rate_upper[idx]
            else:
                lo, hi = holdout.lower[idx], holdout.upper[idx]
            row = [int(region), mean, lo, hi]
            if has_rate:
                row += [holdout.rate_mean[idx], holdout.rate_lower[idx],
                        holdout.rate_upper[idx]]
            rows.append(row)
        storage.write_table(out_dir / "holdout.csv", header, rows)

    worst = max(mcmc.psrf(samples, name) for name in samples.fixed_effect_names)
    converged = worst <= psrf_threshold
    args = {"panel": str(panel), "adjacency": str(adjacency) if adjacency else None,
            "spec": str(spec_path) if spec_path else None, "model": model,
            "seed": seed, "chains": chains, "iters": iters, "burnin": burnin,
            "thin": thin, "psrf_threshold": psrf_threshold,
            "holdout_last_quarter": holdout_last_quarter,
            "standardize": standardize, "scale": scale, "out": str(out),
            "converged": bool(converged), "max_fixed_effect_psrf": float(worst)}
    storage.write_manifest(out_dir, "fit", args,
                           {"panel": panel, "adjacency": adjacency,
                            "spec": spec_path},
                           storage.artifact_files(out_dir))
    if not converged:
        click.echo(f"warning: max fixed-effect PSRF {worst:.3f} exceeds "
                   f"{psrf_threshold}; results flagged", err=True)
        sys.exit(EXIT_CONVERGENCE)
    click.echo(f"wrote {out_dir}/summary.csv (max fixed-effect PSRF {worst:.3f})")


def _load_fit_dir(fit_dir):
    storage.verify_artifacts(fit_dir)
    manifest = storage.load_manifest(fit_dir)
    panel_path = manifest["input_paths"]["panel"]
    dataset = load_panel(panel_path)
    samples, spec, work = storage.load_samples(Path(fit_dir) / "samples", dataset)
    return manifest, samples, spec, work, dataset


@main.command("diagnose")
@click.option("--samples", "sample_dirs", multiple=True, required=True,
              type=click.Path(), help="Fit output directory (repeatable).")
@click.option("--quarter", type=int, default=None,
              help="Quarter for the per-region table (default: last).")
@click.option("--composition-cpo/--no-composition-cpo", default=True,
              show_default=True,
              help="Whether to compute CPO/PIT for composition-family fits.")
@click.option("--count-scale-cpo", is_flag=True, default=False,
              help="Convert rate-family CPO to the count scale for "
                   "cross-family log-score comparisons.")
@click.option("--out", required=True, type=click.Path())
@_guarded
def cmd_diagnose(sample_dirs, quarter, composition_cpo, count_scale_cpo, out):
    """Model comparison report: DIC table, CPO/PIT per cell, per-region table."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    obs_rows = []
    region_rows = []
    for fit_dir in sample_dirs:
        label = Path(fit_dir).name
        _manifest, samples, spec, work, dataset = _load_fit_dir(fit_dir)
        include_cpo = composition_cpo or spec.family.name != "multinomial"
        scale = "count" if count_scale_cpo else "native"
        report = diag.build_report(samples, work, spec, include_cpo=include_cpo,
                                   cpo_scale=scale)
        summary_rows.append([
            label, spec.family.name, report.dic, report.p_d, report.d_bar,
            report.log_score if report.log_score is not None else "",
            "yes" if include_cpo else "no",
        ])
        T = samples.num_quarters
        if include_cpo:
            for j in range(samples.num_regions):
                for t in range(T):
                    i = j * T + t
                    obs_rows.append([label, j + 1, t + 1,
                                     report.cpo[i], report.pit[i]])
        q = quarter or T
        rate_draws = diag.rate_draws_at_quarter(samples, work, q)
        est = rate_draws.mean(axis=0)
        sd = rate_draws.std(axis=0, ddof=1)
        rr = diag.rrmse_model(est, posterior_sd=sd)
        for j in range(samples.num_regions):
            region_rows.append([label, j + 1, q, est[j], sd[j], rr[j]])
    direct = diag.direct_estimate(dataset)
    q = quarter or dataset.num_quarters
    for j in range(dataset.num_regions):
        region_rows.append(["direct", j + 1, q, direct.rate[j, q - 1],
                            np.sqrt(direct.rate_variance[j, q - 1]),
                            direct.rrmse[j, q - 1]])

    storage.write_table(out_dir / "model_summary.csv",
                        ["model", "family", "dic", "p_d", "d_bar", "log_score",
                         "cpo_available"], summary_rows)
    storage.write_table(out_dir / "per_observation.csv",
                        ["model", "region", "quarter", "cpo", "pit"], obs_rows)
    storage.write_table(out_dir / "per_region.csv",
                        ["method", "region", "quarter", "rate_estimate",
                         "rate_sd", "rate_rrmse"], region_rows)
    args = {"samples": [str(p) for p in sample_dirs], "quarter": quarter,
            "composition_cpo": composition_cpo,
            "count_scale_cpo": count_scale_cpo, "out": str(out)}
    storage.write_manifest(out_dir, "diagnose", args, {},
                           storage.artifact_files(out_dir))
    click.echo(f"wrote {out_dir}/model_summary.csv")


def _truth_rates(truth_path, J, T):
    import pandas as pd

    df = pd.read_csv(truth_path)
    rates = np.full((J, T), np.nan)
    rates[df["region"].to_numpy() - 1, df["quarter"].to_numpy() - 1] = \
        df["true_rate"].to_numpy()
    return rates


@main.command("compare")
@click.option("--samples", "sample_dirs", multiple=True, required=True,
              type=click.Path())
@click.option("--truth", "truth_path", type=click.Path(), default=None)
@click.option("--quarter", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@_guarded
def cmd_compare(sample_dirs, truth_path, quarter, out):
    """Per-region comparison of model-based and direct estimates."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    dataset = None
    for fit_dir in sample_dirs:
        label = Path(fit_dir).name
        _manifest, samples, spec, work, dataset = _load_fit_dir(fit_dir)
        q = quarter or samples.num_quarters
        rate_draws = diag.rate_draws_at_quarter(samples, work, q)
        total_draws = diag.total_draws_at_quarter(samples, work, q)
        truth_rate = (_truth_rates(truth_path, dataset.num_regions,
                                   dataset.num_quarters)[:, q - 1]
                      if truth_path else None)
        est = rate_draws.mean(axis=0)
        lo, hi = np.quantile(rate_draws, [0.025, 0.975], axis=0)
        t_est = total_draws.mean(axis=0)
        t_lo, t_hi = np.quantile(total_draws, [0.025, 0.975], axis=0)
        if truth_rate is not None:
            rr = diag.rrmse_model(est[None, :], truths=truth_rate[None, :])
        else:
            rr = diag.rrmse_model(est, posterior_sd=rate_draws.std(axis=0, ddof=1))
        for j in range(dataset.num_regions):
            rows.append([j + 1, label, est[j], lo[j], hi[j], rr[j],
                         t_est[j], t_lo[j], t_hi[j],
                         truth_rate[j] if truth_rate is not None else ""])
    if dataset is None:
        _fail("no sample directories given")
    q = quarter or dataset.num_quarters
    direct = diag.direct_estimate(dataset)
    truth_rate = (_truth_rates(truth_path, dataset.num_regions,
                               dataset.num_quarters)[:, q - 1]
                  if truth_path else None)
    d_rate = direct.rate[:, q - 1]
    d_sd = np.sqrt(direct.rate_variance[:, q - 1])
    if truth_rate is not None:
        d_rr = diag.rrmse_model(d_rate[None, :], truths=truth_rate[None, :])
    else:
        d_rr = direct.rrmse[:, q - 1]
    for j in range(dataset.num_regions):
        rows.append([j + 1, "direct", d_rate[j],
                     d_rate[j] - 1.96 * d_sd[j], d_rate[j] + 1.96 * d_sd[j],
                     d_rr[j], direct.total[j, q - 1], "", "",
                     truth_rate[j] if truth_rate is not None else ""])

    storage.write_table(out_dir / "comparison.csv",
                        ["region", "method", "rate_estimate", "rate_lower",
                         "rate_upper", "rate_rrmse", "total_estimate",
                         "total_lower", "total_upper", "true_rate"], rows)
    args = {"samples": [str(p) for p in sample_dirs],
            "truth": str(truth_path) if truth_path else None,
            "quarter": quarter, "out": str(out)}
    storage.write_manifest(out_dir, "compare", args,
                           {"truth": truth_path},
                           storage.artifact_files(out_dir))
    click.echo(f"wrote {out_dir}/comparison.csv")


if __name__ == "__main__":
    main()
