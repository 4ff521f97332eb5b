import dataclasses
import math

import numpy as np
import pytest

from saeb import (
    DiagnosticsError,
    SpecError,
    load_panel,
    model_spec,
    standardize_covariates,
)
from saeb.diagnostics import (
    build_report,
    combine_dic,
    cpo,
    dic,
    direct_estimate,
    log_score,
    loglik_matrix,
    pit,
    rate_draws_at_quarter,
    rrmse_model,
    total_draws_at_quarter,
)
from saeb.mcmc import MCMCConfig, fit
from saeb.panel import PanelSchema

from helpers import grid_posterior_mean


def constant_samples(samples, chain=0, draw=0):
    """Replace every stored draw by one fixed draw (degenerate posterior)."""
    def freeze(arr):
        if arr is None:
            return None
        fixed = arr[chain, draw][None, None]
        return np.broadcast_to(fixed, arr.shape).copy()

    return dataclasses.replace(
        samples,
        coefficients=freeze(samples.coefficients),
        precisions={k: freeze(v) for k, v in samples.precisions.items()},
        dispersion=freeze(samples.dispersion),
        spatial=freeze(samples.spatial),
        trend=freeze(samples.trend),
        cell=freeze(samples.cell),
        area=freeze(samples.area),
        period=freeze(samples.period),
        deviance=freeze(samples.deviance),
    )


class TestDicIdentity:
    @pytest.mark.parametrize("d_bar,p_d,expected", [
        (2210.0, 30.4, 2240.4),
        (2349.5, 25.4, 2374.9),
        (2208.9, 32.5, 2241.4),
        (4894.5, 81.5, 4976.0),
    ])
    def test_combiner(self, d_bar, p_d, expected):
        assert combine_dic(d_bar, p_d) == pytest.approx(expected, abs=1e-9)

    def test_combiner_is_plain_addition(self):
        # a reference table in circulation prints -1607.4 for components
        # -1638.4 and 31.1, which is arithmetically -1607.3; the combiner
        # performs the exact identity and must not chase the typo
        assert combine_dic(-1638.4, 31.1) == pytest.approx(-1607.3, abs=1e-9)


class TestDic:
    def test_identity_on_fit(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        result = dic(samples, work, spec)
        assert result.dic == pytest.approx(result.d_bar + result.p_d, abs=1e-9)
        assert result.p_d > 0

    def test_degenerate_posterior(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        frozen = constant_samples(samples)
        result = dic(frozen, work, spec)
        assert result.p_d == pytest.approx(0.0, abs=1e-8)
        assert result.dic == pytest.approx(result.d_bar, abs=1e-8)

    def test_nonfinite_draws_excluded(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        dev = samples.deviance.copy()
        dev[0, 0] = np.inf
        patched = dataclasses.replace(samples, deviance=dev)
        result = dic(patched, work, spec)
        assert result.num_dropped == 1

    def test_too_many_nonfinite(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        dev = samples.deviance.copy()
        dev[0, : dev.shape[1] // 2] = np.inf
        patched = dataclasses.replace(samples, deviance=dev)
        with pytest.raises(DiagnosticsError):
            dic(patched, work, spec)


class TestCpo:
    def test_requires_draws(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        starved = dataclasses.replace(
            samples,
            coefficients=samples.coefficients[:, :100],
            precisions={k: v[:, :100] for k, v in samples.precisions.items()},
            spatial=samples.spatial[:, :100], trend=samples.trend[:, :100],
            cell=samples.cell[:, :100], deviance=samples.deviance[:, :100])
        with pytest.raises(SpecError):
            cpo(starved, work, spec)

    def test_constant_posterior_equals_pointwise_likelihood(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        frozen = constant_samples(samples)
        result = cpo(frozen, work, spec)
        ll = loglik_matrix(frozen, work, spec)
        np.testing.assert_allclose(result.values, np.exp(ll[0]), rtol=1e-10)
        assert not result.high_mc_error.any()

    def test_matches_leave_one_out_quadrature(self, tmp_path):
        # two observations, one free parameter: brute-force loo predictive
        path = tmp_path / "toy.csv"
        path.write_text(
            "region,quarter,unemployed,employed,inactive,xr,xt,xs\n"
            "1,1,7,40,20,1.0,0.3,0.2\n1,2,11,38,22,1.0,0.6,0.25\n")
        schema = PanelSchema(regional=("xr",), temporal=("xt",),
                             spatiotemporal=("xs",))
        data = load_panel(path, schema)
        spec = model_spec("poisson", regional_terms=(), temporal_terms=(),
                          spatiotemporal_terms=(), effect_structure="none")
        samples = fit(data, spec, MCMCConfig(num_chains=2, iterations=30000,
                                             burn_in=5000, thinning=2,
                                             base_seed=21))
        result = cpo(samples, data, spec)

        y = data.unemployed.reshape(-1).astype(float)
        off = np.log(data.sample_size.reshape(-1).astype(float))
        sd = spec.priors.coefficient_sd
        grid = np.linspace(-6.0, 1.0, 8001)

        def loglik_i(alpha, i):
            eta = off[i] + alpha
            return y[i] * eta - np.exp(eta) - math.lgamma(y[i] + 1.0)

        for i in range(2):
            other = 1 - i
            oracle = grid_posterior_mean(
                lambda a: loglik_i(a, other) - a**2 / (2 * sd * sd),
                [grid], transform=lambda a: np.exp(loglik_i(a, i)))
            assert result.values[i] == pytest.approx(oracle, rel=0.05)

    def test_outlier_cell_attains_minimum(self, binomial_panel, portugal_graph):
        data, _ = binomial_panel
        unemployed = data.unemployed.copy()
        j, t = 10, 6
        # inject a gross outlier while keeping the count identities
        shifted = min(int(unemployed[j, t] * 5 + 50), int(data.active[j, t]))
        unemployed[j, t] = shifted
        employed = data.active - unemployed
        patched = dataclasses.replace(data, unemployed=unemployed,
                                      employed=employed)
        work = standardize_covariates(patched)
        spec = model_spec("binomial")
        samples = fit(work, spec, MCMCConfig(num_chains=2, iterations=4000,
                                             burn_in=1500, thinning=5,
                                             base_seed=31), portugal_graph)
        result = cpo(samples, work, spec)
        assert np.argmin(result.values) == j * 12 + t

    def test_count_scale_divides_by_trials(self, small_binomial_panel, small_graph):
        data, _ = small_binomial_panel
        work = standardize_covariates(data)
        spec = model_spec("beta")
        samples = fit(work, spec, MCMCConfig(num_chains=2, iterations=2000,
                                             burn_in=500, thinning=2,
                                             base_seed=9), small_graph)
        native = cpo(samples, work, spec, scale="native")
        count = cpo(samples, work, spec, scale="count")
        trials = work.active.reshape(-1).astype(float)
        np.testing.assert_allclose(count.values, native.values / trials,
                                   rtol=1e-10)


class TestPit:
    def test_continuous_constant_posterior_is_plain_cdf(self, small_binomial_panel,
                                                        small_graph):
        # under a degenerate posterior the weighted average collapses to
        # F(r | theta), so a target at its conditional median gives PIT 1/2
        data, _ = small_binomial_panel
        work = standardize_covariates(data)
        spec = model_spec("beta")
        samples = fit(work, spec, MCMCConfig(num_chains=2, iterations=2000,
                                             burn_in=500, thinning=2,
                                             base_seed=10), small_graph)
        frozen = constant_samples(samples)
        values = pit(frozen, work, spec)
        from saeb.likelihoods import build_targets, continuous_cdf
        from saeb.mcmc import iter_eta_draws
        from scipy import stats

        eta, disp = next(iter_eta_draws(frozen, chunk=1))
        targets = build_targets(work, spec.family)
        oracle = continuous_cdf(targets, eta[0], float(disp[0]))
        np.testing.assert_allclose(values, oracle, rtol=1e-9)
        mu = 1.0 / (1.0 + np.exp(-eta[0]))
        phi = float(disp[0])
        median = stats.beta.ppf(0.5, mu * phi, (1 - mu) * phi)
        median_targets = dataclasses.replace(targets, rate=median)
        at_median = continuous_cdf(median_targets, eta[0], phi)
        np.testing.assert_allclose(at_median, 0.5, atol=1e-12)

    def test_discrete_zero_count_is_half_pointmass(self, tmp_path):
        path = tmp_path / "zero.csv"
        path.write_text(
            "region,quarter,unemployed,employed,inactive,xr,xt,xs\n"
            "1,1,0,40,20,1.0,0.3,0.2\n1,2,0,38,22,1.0,0.6,0.25\n")
        schema = PanelSchema(regional=("xr",), temporal=("xt",),
                             spatiotemporal=("xs",))
        data = load_panel(path, schema)
        spec = model_spec("poisson", regional_terms=(), temporal_terms=(),
                          spatiotemporal_terms=(), effect_structure="none")
        samples = fit(data, spec, MCMCConfig(num_chains=2, iterations=1500,
                                             burn_in=400, thinning=2,
                                             base_seed=11))
        frozen = constant_samples(samples)
        values = pit(frozen, data, spec)
        from saeb.mcmc import iter_eta_draws

        eta, _ = next(iter_eta_draws(frozen, chunk=1))
        p0 = np.exp(-np.exp(eta[0]))
        np.testing.assert_allclose(values, p0 / 2, rtol=1e-8)

    def test_randomized_flag_changes_values(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        fixed = pit(samples, work, spec)
        randomized = pit(samples, work, spec, randomized=True, seed=3)
        assert not np.allclose(fixed, randomized)
        assert np.all((randomized >= 0) & (randomized <= 1))

    def test_values_in_unit_interval(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        values = pit(samples, work, spec)
        assert np.all((values >= 0) & (values <= 1))

    @pytest.mark.slow
    def test_continuous_ks_decreases_with_panel_size(self, portugal_graph):
        # well-specified rate model: PIT approaches uniformity as the number
        # of cells grows (336 -> 1344)
        from scipy import stats

        from saeb.simulate import ScenarioConfig, simulate

        spec = model_spec("beta")
        config = MCMCConfig(num_chains=2, iterations=6000, burn_in=2000,
                            thinning=4, base_seed=2)
        distances = {12: [], 48: []}
        for seed in (0, 1):
            for T in (12, 48):
                data, _ = simulate(ScenarioConfig(family="beta", seed=seed,
                                                  num_quarters=T))
                work = standardize_covariates(data)
                samples = fit(work, spec, config, portugal_graph)
                values = pit(samples, work, spec)
                distances[T].append(stats.kstest(values, "uniform").statistic)
        assert np.mean(distances[48]) < np.mean(distances[12])


class TestLogScore:
    def test_examples(self):
        assert log_score(np.array([math.exp(-1), math.exp(-1)])) == pytest.approx(1.0)
        assert log_score(np.array([1.0])) == pytest.approx(0.0)

    def test_log_linearity(self):
        rng = np.random.default_rng(40)
        values = rng.uniform(0.01, 0.5, 30)
        c = 3.7
        assert log_score(c * values) == pytest.approx(
            log_score(values) - math.log(c), rel=1e-12)

    def test_zeros_excluded_with_warning(self):
        values = np.array([math.exp(-2.0), 0.0])
        with pytest.warns(UserWarning):
            assert log_score(values) == pytest.approx(2.0)

    def test_all_zero(self):
        with pytest.raises(DiagnosticsError):
            log_score(np.zeros(4))


class TestDirectEstimate:
    def test_basic_rate(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "region,quarter,unemployed,employed,inactive,xr,xt,xs\n"
            "1,1,5,45,10,1.0,0.3,0.2\n")
        schema = PanelSchema(regional=("xr",), temporal=("xt",),
                             spatiotemporal=("xs",))
        data = load_panel(path, schema)
        est = direct_estimate(data)
        assert est.rate[0, 0] == pytest.approx(0.10)
        assert est.rate_variance[0, 0] == pytest.approx(0.1 * 0.9 / 50)
        assert est.rrmse[0, 0] == pytest.approx(math.sqrt(0.9 / (0.1 * 50)))

    def test_all_unemployed_cell(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "region,quarter,unemployed,employed,inactive,xr,xt,xs\n"
            "1,1,50,0,10,1.0,0.3,0.2\n")
        schema = PanelSchema(regional=("xr",), temporal=("xt",),
                             spatiotemporal=("xs",))
        est = direct_estimate(load_panel(path, schema))
        assert est.rate[0, 0] == pytest.approx(1.0)
        assert est.rate_variance[0, 0] == pytest.approx(0.0)
        assert est.rrmse[0, 0] == pytest.approx(0.0)

    def test_zero_active_flagged(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "region,quarter,unemployed,employed,inactive,xr,xt,xs\n"
            "1,1,0,0,10,1.0,0.3,0.2\n")
        schema = PanelSchema(regional=("xr",), temporal=("xt",),
                             spatiotemporal=("xs",))
        est = direct_estimate(load_panel(path, schema))
        assert est.missing[0, 0]
        assert np.isnan(est.rate[0, 0])

    def test_census_cell_reproduces_truth(self, binomial_panel):
        # unit weights: the estimated rate is exactly the sample rate
        data, _ = binomial_panel
        est = direct_estimate(data)
        expected = data.unemployed / data.active
        np.testing.assert_allclose(est.rate, expected)
        np.testing.assert_allclose(est.total, data.unemployed.astype(float))

    def test_weights_scale_totals(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "region,quarter,unemployed,employed,inactive,xr,xt,xs,weight\n"
            "1,1,5,45,10,1.0,0.3,0.2,100.0\n")
        schema = PanelSchema(regional=("xr",), temporal=("xt",),
                             spatiotemporal=("xs",))
        est = direct_estimate(load_panel(path, schema))
        assert est.total[0, 0] == pytest.approx(500.0)
        # the within-cell rate is weight-invariant
        assert est.rate[0, 0] == pytest.approx(0.10)


class TestRrmse:
    def test_exact_estimates(self):
        truths = np.array([[0.1, 0.2], [0.1, 0.2]])
        assert np.all(rrmse_model(truths.copy(), truths=truths) == 0.0)

    def test_converges_to_relative_sd(self):
        rng = np.random.default_rng(41)
        truth = np.full((4000, 3), 0.2)
        estimates = truth * (1.0 + 0.1 * rng.standard_normal(truth.shape))
        values = rrmse_model(estimates, truths=truth)
        np.testing.assert_allclose(values, 0.1, rtol=0.05)

    def test_posterior_mode(self):
        values = rrmse_model(np.array([0.2, 0.5]),
                             posterior_sd=np.array([0.02, 0.1]))
        np.testing.assert_allclose(values, [0.1, 0.2])

    def test_zero_truth_flagged(self):
        values = rrmse_model(np.array([[0.1, 0.3]]),
                             truths=np.array([[0.0, 0.3]]))
        assert np.isnan(values[0]) and np.isfinite(values[1])

    def test_mode_args(self):
        with pytest.raises(SpecError):
            rrmse_model(np.zeros(3))
        with pytest.raises(SpecError):
            rrmse_model(np.zeros(3), truths=np.zeros(3), posterior_sd=np.zeros(3))


class TestRegionDraws:
    def test_binomial_rate_draws(self, small_binomial_fit):
        samples, work, _spec = small_binomial_fit
        draws = rate_draws_at_quarter(samples, work, quarter=6)
        assert draws.shape == (samples.num_chains * samples.draws_per_chain, 4)
        assert np.all((draws > 0) & (draws < 1))

    def test_total_draws_scale_with_active(self, small_binomial_fit):
        samples, work, _spec = small_binomial_fit
        rates = rate_draws_at_quarter(samples, work, quarter=6)
        totals = total_draws_at_quarter(samples, work, quarter=6)
        active = work.active[:, 5].astype(float)
        np.testing.assert_allclose(totals, rates * active[None, :], rtol=1e-10)


class TestReport:
    def test_full_report(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        report = build_report(samples, work, spec)
        assert report.dic == pytest.approx(report.d_bar + report.p_d, abs=1e-9)
        assert report.cpo.shape == (24,)
        assert report.pit.shape == (24,)
        assert report.log_score is not None
        assert set(samples.fixed_effect_names) <= set(report.psrf)

    def test_without_cpo(self, small_binomial_fit):
        samples, work, spec = small_binomial_fit
        report = build_report(samples, work, spec, include_cpo=False)
        assert report.cpo is None and report.pit is None
        assert report.notes["cpo_available"] is False
