import json
import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from saeb import SpecError, load_panel, model_spec, standardize_covariates
from saeb.cli import main
from saeb.mcmc import MCMCConfig, fit, summarize
from saeb.storage import (
    load_samples,
    save_samples,
    spec_from_dict,
    spec_to_dict,
    verify_artifacts,
    write_manifest,
)


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("sim")
    result = runner.invoke(main, [
        "simulate", "--family", "binomial", "--seed", "7",
        "--regions", "4", "--quarters", "6", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


FIT_ARGS = ["--seed", "3", "--chains", "2", "--iters", "1200",
            "--burnin", "300", "--thin", "2", "--psrf-threshold", "50"]


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, runner, sim_dir):
    out = tmp_path_factory.mktemp("fit")
    result = runner.invoke(main, [
        "fit", "--panel", str(sim_dir / "panel.csv"),
        "--adjacency", str(sim_dir / "adjacency.txt"),
        "--model", "binomial", "--out", str(out), *FIT_ARGS])
    assert result.exit_code == 0, result.output
    return out


class TestSamplesPersistence:
    def test_round_trip(self, sim_dir, tmp_path):
        dataset = load_panel(sim_dir / "panel.csv")
        from saeb.panel import load_adjacency

        graph = load_adjacency(sim_dir / "adjacency.txt")
        work = standardize_covariates(dataset)
        spec = model_spec("binomial")
        samples = fit(work, spec, MCMCConfig(num_chains=2, iterations=700,
                                             burn_in=200, thinning=2,
                                             base_seed=6), graph)
        save_samples(samples, tmp_path / "s", spec)
        loaded, spec2, work2 = load_samples(tmp_path / "s", dataset)
        assert spec2.family.name == "binomial"
        np.testing.assert_array_equal(loaded.coefficients, samples.coefficients)
        np.testing.assert_array_equal(loaded.cell, samples.cell)
        np.testing.assert_array_equal(loaded.deviance, samples.deviance)
        assert loaded.precisions.keys() == samples.precisions.keys()
        a = summarize(samples)
        b = summarize(loaded)
        for ra, rb in zip(a.parameters, b.parameters):
            assert ra == rb
        np.testing.assert_array_equal(a.fitted_mean, b.fitted_mean)

    def test_spec_dict_round_trip(self):
        spec = model_spec("beta", regional_terms=("companies",),
                          trend_structure="ar1", ar1_rho=0.8)
        again = spec_from_dict(spec_to_dict(spec))
        assert again == spec


class TestManifest:
    def test_verify_detects_corruption(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / "table.csv").write_text("a,b\n1,2\n")
        write_manifest(out, "simulate", {"seed": 1}, {}, ["table.csv"])
        verify_artifacts(out)
        (out / "table.csv").write_text("a,b\n1,3\n")
        with pytest.raises(SpecError):
            verify_artifacts(out)


class TestSimulateCommand:
    def test_artifacts_exist(self, sim_dir):
        for name in ("panel.csv", "adjacency.txt", "truth.csv",
                     "truth_params.csv", "manifest.json"):
            assert (sim_dir / name).exists()

    def test_replay_is_byte_identical(self, runner, sim_dir, tmp_path):
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        args = manifest["args"]
        out2 = tmp_path / "replay"
        result = runner.invoke(main, [
            "simulate", "--family", args["family"], "--seed", str(args["seed"]),
            "--regions", str(args["regions"]),
            "--quarters", str(args["quarters"]), "--out", str(out2)])
        assert result.exit_code == 0
        for name in ("panel.csv", "adjacency.txt", "truth.csv", "truth_params.csv"):
            assert (sim_dir / name).read_bytes() == (out2 / name).read_bytes()

    def test_bad_dispersion_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, [
            "simulate", "--family", "negbin", "--phi", "-1",
            "--out", str(tmp_path / "x")])
        assert result.exit_code == 2
        assert "dispersion" in result.output

    def test_bad_config_key_named(self, runner, tmp_path):
        config = tmp_path / "scenario.txt"
        config.write_text("famly = beta\n")
        result = runner.invoke(main, [
            "simulate", "--config", str(config), "--out", str(tmp_path / "y")])
        assert result.exit_code == 2
        assert "famly" in result.output

    def test_env_seed_override(self, runner, tmp_path, monkeypatch):
        monkeypatch.setenv("SAEB_SEED", "7")
        out = tmp_path / "env"
        result = runner.invoke(main, [
            "simulate", "--family", "binomial", "--seed", "12345",
            "--regions", "4", "--quarters", "6", "--out", str(out)])
        assert result.exit_code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["args"]["seed"] == 7


class TestFitCommand:
    def test_outputs(self, fit_dir):
        for name in ("summary.csv", "fitted.csv", "manifest.json"):
            assert (fit_dir / name).exists()
        assert (fit_dir / "samples" / "coefficients.csv").exists()
        table = pd.read_csv(fit_dir / "summary.csv")
        # full model: 8 coefficients + 3 precisions
        assert len(table) == 11
        assert list(table.columns) == ["parameter", "mean", "sd", "q2.5", "q97.5"]

    def test_replay_byte_identical(self, runner, fit_dir, sim_dir, tmp_path):
        manifest = json.loads((fit_dir / "manifest.json").read_text())
        args = manifest["args"]
        out2 = tmp_path / "fit2"
        result = runner.invoke(main, [
            "fit", "--panel", args["panel"], "--adjacency", args["adjacency"],
            "--model", args["model"], "--seed", str(args["seed"]),
            "--chains", str(args["chains"]), "--iters", str(args["iters"]),
            "--burnin", str(args["burnin"]), "--thin", str(args["thin"]),
            "--psrf-threshold", str(args["psrf_threshold"]),
            "--out", str(out2)])
        assert result.exit_code == 0, result.output
        for rel in ("summary.csv", "fitted.csv", "samples/coefficients.csv",
                    "samples/spatial.csv", "samples/deviance.csv"):
            assert (fit_dir / rel).read_bytes() == (out2 / rel).read_bytes()

    def test_multinomial_summary_rows(self, runner, sim_dir, tmp_path):
        out = tmp_path / "mult"
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--model", "multinomial", "--out", str(out), *FIT_ARGS])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "summary.csv")
        names = set(table["parameter"])
        assert {"prec_area", "prec_period"} <= names
        assert not names & {"prec_spatial", "prec_trend", "prec_cell"}
        assert "intercept[unemployed]" in names and "intercept[employed]" in names

    def test_missing_adjacency_exits_2(self, runner, sim_dir, tmp_path):
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--model", "binomial", "--out", str(tmp_path / "z"), *FIT_ARGS])
        assert result.exit_code == 2
        assert "adjacency" in result.output

    def test_convergence_warning_exits_3_with_table(self, runner, sim_dir, tmp_path):
        out = tmp_path / "hot"
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--adjacency", str(sim_dir / "adjacency.txt"),
            "--model", "binomial", "--seed", "3", "--chains", "2",
            "--iters", "400", "--burnin", "100", "--thin", "2",
            "--psrf-threshold", "0.5", "--out", str(out)])
        assert result.exit_code == 3
        assert (out / "summary.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["args"]["converged"] is False

    def test_holdout_flag(self, runner, sim_dir, tmp_path):
        out = tmp_path / "hold"
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--adjacency", str(sim_dir / "adjacency.txt"),
            "--model", "binomial", "--holdout-last-quarter",
            "--out", str(out), *FIT_ARGS])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "holdout.csv")
        assert len(table) == 4
        assert {"region", "mean", "lower", "upper"} <= set(table.columns)

    def test_spec_file_drives_fit(self, runner, sim_dir, tmp_path):
        spec_path = tmp_path / "model.txt"
        spec_path.write_text("family = binomial\n"
                             "regional_terms = companies\n"
                             "temporal_terms = none\n"
                             "spatiotemporal_terms = iefp\n")
        out = tmp_path / "specfit"
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--adjacency", str(sim_dir / "adjacency.txt"),
            "--spec", str(spec_path), "--out", str(out), *FIT_ARGS])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "summary.csv")
        # intercept + 2 covariates + 3 precisions
        assert len(table) == 6


class TestDiagnoseCommand:
    def test_report(self, runner, fit_dir, tmp_path):
        out = tmp_path / "diag"
        result = runner.invoke(main, [
            "diagnose", "--samples", str(fit_dir), "--out", str(out)])
        assert result.exit_code == 0, result.output
        summary = pd.read_csv(out / "model_summary.csv")
        assert len(summary) == 1
        row = summary.iloc[0]
        assert row["dic"] == pytest.approx(row["d_bar"] + row["p_d"], abs=1e-9)
        obs = pd.read_csv(out / "per_observation.csv")
        assert len(obs) == 24
        assert np.all(obs["pit"].between(0, 1))
        region = pd.read_csv(out / "per_region.csv")
        assert set(region["method"]) == {Path(fit_dir).name, "direct"}

    def test_multi_model_comparison_rows(self, runner, fit_dir, sim_dir, tmp_path):
        # one summary row per fitted model, comparison-table shape
        labels = [Path(fit_dir).name]
        dirs = [str(fit_dir)]
        for fam in ("poisson", "beta"):
            out_fit = tmp_path / f"fit_{fam}"
            result = runner.invoke(main, [
                "fit", "--panel", str(sim_dir / "panel.csv"),
                "--adjacency", str(sim_dir / "adjacency.txt"),
                "--model", fam, "--out", str(out_fit), *FIT_ARGS])
            assert result.exit_code == 0, result.output
            labels.append(out_fit.name)
            dirs.append(str(out_fit))
        out = tmp_path / "diag_multi"
        args = ["diagnose", "--out", str(out)]
        for d in dirs:
            args += ["--samples", d]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        summary = pd.read_csv(out / "model_summary.csv")
        assert len(summary) == 3
        assert list(summary["model"]) == labels
        assert set(summary["family"]) == {"binomial", "poisson", "beta"}

    def test_hash_mismatch_exits_2(self, runner, fit_dir, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(fit_dir, broken)
        target = broken / "samples" / "coefficients.csv"
        target.write_text(target.read_text().replace("0.", "1.", 1))
        result = runner.invoke(main, [
            "diagnose", "--samples", str(broken), "--out", str(tmp_path / "d2")])
        assert result.exit_code == 2
        assert "manifest" in result.output

    def test_composition_cpo_flag(self, runner, sim_dir, tmp_path):
        fit_out = tmp_path / "multfit"
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--model", "multinomial", "--out", str(fit_out), *FIT_ARGS])
        assert result.exit_code == 0, result.output
        out = tmp_path / "multdiag"
        result = runner.invoke(main, [
            "diagnose", "--samples", str(fit_out), "--no-composition-cpo",
            "--out", str(out)])
        assert result.exit_code == 0, result.output
        summary = pd.read_csv(out / "model_summary.csv")
        assert summary.iloc[0]["cpo_available"] == "no"
        assert len(pd.read_csv(out / "per_observation.csv")) == 0


class TestCompareCommand:
    def test_rows_per_region_and_method(self, runner, fit_dir, sim_dir, tmp_path):
        fit2 = tmp_path / "fit_beta"
        result = runner.invoke(main, [
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--adjacency", str(sim_dir / "adjacency.txt"),
            "--model", "beta", "--out", str(fit2), *FIT_ARGS])
        assert result.exit_code == 0, result.output
        out = tmp_path / "cmp"
        result = runner.invoke(main, [
            "compare", "--samples", str(fit_dir), "--samples", str(fit2),
            "--truth", str(sim_dir / "truth.csv"), "--out", str(out)])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "comparison.csv")
        assert len(table) == 4 * 3
        assert set(table["method"]) == {Path(fit_dir).name, "fit_beta", "direct"}
        assert table["rate_rrmse"].notna().all()
        assert table["true_rate"].notna().all()

    def test_no_samples_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, ["compare", "--out", str(tmp_path / "c")])
        assert result.exit_code == 2
