import math

import numpy as np
import pytest

from saeb import (
    LinkDomainError,
    SpecError,
    build_design,
    get_family,
    link_apply,
    model_spec,
    read_spec_file,
)
from saeb.mcmc import ParameterState
from saeb.modelspec import (
    PredictorSpec,
    category_probabilities,
    link_forward,
    linear_predictor,
)


class TestFamilies:
    def test_registry(self):
        assert get_family("poisson").link == "log"
        assert get_family("Negative-Binomial").name == "negbin"
        assert get_family("beta").has_dispersion
        assert not get_family("binomial").has_dispersion
        assert get_family("multinomial").num_predictors == 2

    def test_unknown(self):
        with pytest.raises(SpecError):
            get_family("weibull")


class TestSpecValidation:
    def test_multinomial_requires_unstructured(self):
        with pytest.raises(SpecError):
            model_spec("multinomial", effect_structure="structured")

    def test_offset_only_for_count_families(self):
        with pytest.raises(SpecError):
            model_spec("binomial", offset_rule="log_sample_size")

    def test_auto_resolution(self):
        assert model_spec("poisson").offset_rule == "log_sample_size"
        assert model_spec("binomial").offset_rule == "none"
        assert model_spec("multinomial").effect_structure == "unstructured"
        assert model_spec("beta").effect_structure == "structured"

    def test_structured_needs_intercept(self):
        with pytest.raises(SpecError):
            model_spec("poisson", include_intercept=False,
                       effect_structure="structured")

    def test_bad_prior_settings(self):
        from saeb.modelspec import PriorSpec

        with pytest.raises(SpecError):
            PriorSpec(coefficient_sd=0.0)


class TestBuildDesign:
    def test_full_paper_scale(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("binomial"))
        assert design.X.shape == (336, 8)
        np.testing.assert_array_equal(design.X[:, 0], 1.0)
        assert design.column_names[0] == "intercept"
        assert len(design.column_names) == 8

    def test_intercept_only(self, binomial_panel):
        data, _ = binomial_panel
        spec = model_spec("poisson", regional_terms=(), temporal_terms=(),
                          spatiotemporal_terms=())
        design = build_design(data, spec)
        assert design.X.shape == (336, 1)
        np.testing.assert_array_equal(design.X[:, 0], 1.0)
        np.testing.assert_allclose(
            design.offset, np.log(data.sample_size.reshape(-1).astype(float)))

    def test_unknown_covariate(self, binomial_panel):
        data, _ = binomial_panel
        with pytest.raises(SpecError):
            build_design(data, model_spec("poisson", regional_terms=("wages",)))

    def test_deterministic(self, binomial_panel):
        data, _ = binomial_panel
        a = build_design(data, model_spec("binomial"))
        b = build_design(data, model_spec("binomial"))
        assert a.X.tobytes() == b.X.tobytes()
        assert a.offset.tobytes() == b.offset.tobytes()

    def test_row_bijection(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("binomial"))
        seen = set()
        for row in range(design.num_rows):
            cell = (design.row_region[row], design.row_quarter[row])
            assert design.row_index(*cell) == row
            seen.add(cell)
        assert len(seen) == design.num_rows

    def test_no_terms_at_all(self, binomial_panel):
        data, _ = binomial_panel
        with pytest.raises(SpecError):
            build_design(data, model_spec(
                "binomial", include_intercept=False, regional_terms=(),
                temporal_terms=(), spatiotemporal_terms=(),
                effect_structure="none"))


class TestLinearPredictor:
    def make_state(self, design, **kwargs):
        coefs = np.zeros((1, design.X.shape[1]))
        return ParameterState(coefficients=coefs, **kwargs)

    def test_all_zero(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("binomial"))
        state = self.make_state(design)
        assert linear_predictor(state, design, 17) == 0.0

    def test_intercept_only_matches_table_scale(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("binomial"))
        state = self.make_state(design)
        state.coefficients[0, 0] = -2.83
        eta = linear_predictor(state, design, 5)
        assert eta == pytest.approx(-2.83)
        assert math.exp(eta) == pytest.approx(0.059, abs=5e-4)

    def test_offset_passthrough(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("poisson"))
        state = self.make_state(design)
        row = design.row_index(3, 4)
        assert linear_predictor(state, design, row) == pytest.approx(
            math.log(data.sample_size[2, 3]))

    def test_effects_enter(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("binomial"))
        J, T = 28, 12
        state = self.make_state(
            design,
            spatial=np.arange(J, dtype=float),
            trend=np.arange(T, dtype=float) / 10,
            cell=np.ones((J * T,)) * 0.5,
        )
        row = design.row_index(4, 7)
        assert linear_predictor(state, design, row) == pytest.approx(3.0 + 0.6 + 0.5)

    def test_category_dispatch(self, binomial_panel):
        data, _ = binomial_panel
        design = build_design(data, model_spec("multinomial"))
        state = ParameterState(
            coefficients=np.stack([np.zeros(8), np.zeros(8)]),
            area=np.array([[0.3] * 28, [-0.2] * 28]),
            period=np.zeros((2, 12)),
        )
        assert linear_predictor(state, design, 0, category=0) == pytest.approx(0.3)
        assert linear_predictor(state, design, 0, category=1) == pytest.approx(-0.2)


class TestLink:
    def test_identities(self):
        assert link_apply(get_family("binomial"), 0.0) == pytest.approx(0.5)
        assert link_apply(get_family("poisson"), 0.0) == pytest.approx(1.0)

    def test_negbin_hand_solved(self):
        # log(mu / (mu + 1)) = log(1/2)  =>  mu = 1
        value = link_apply(get_family("negbin"), math.log(0.5), dispersion=1.0)
        assert value == pytest.approx(1.0, rel=1e-12)

    def test_negbin_domain(self):
        with pytest.raises(LinkDomainError):
            link_apply(get_family("negbin"), 0.0, dispersion=1.0)
        with pytest.raises(LinkDomainError):
            link_apply(get_family("negbin"), 1.5, dispersion=1.0)

    def test_dispersion_argument_enforced(self):
        with pytest.raises(SpecError):
            link_apply(get_family("poisson"), 0.0, dispersion=1.0)
        with pytest.raises(SpecError):
            link_apply(get_family("beta"), 0.0)

    def test_multinomial_needs_probability_helper(self):
        with pytest.raises(SpecError):
            link_apply(get_family("multinomial"), 0.0)

    @pytest.mark.parametrize("family,dispersion", [
        ("poisson", None), ("negbin", 2.5), ("binomial", None), ("beta", 7.0),
    ])
    def test_roundtrip(self, family, dispersion):
        fam = get_family(family)
        etas = np.linspace(-6.0, -0.05, 40) if family == "negbin" \
            else np.linspace(-6.0, 6.0, 40)
        mean = link_apply(fam, etas, dispersion)
        back = link_forward(fam, mean, dispersion)
        np.testing.assert_allclose(back, etas, atol=1e-12)

    def test_category_probabilities(self):
        eta = np.array([[0.0, 0.0], [2.0, -1.0]])
        probs = category_probabilities(eta)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-15)
        np.testing.assert_allclose(probs[0], [1 / 3, 1 / 3, 1 / 3])
        denom = 1 + math.exp(2.0) + math.exp(-1.0)
        np.testing.assert_allclose(
            probs[1], [math.exp(2.0) / denom, math.exp(-1.0) / denom, 1 / denom],
            rtol=1e-12)


class TestSpecFile:
    def test_defaults(self, tmp_path):
        path = tmp_path / "spec.txt"
        path.write_text("# all defaults\n")
        spec = read_spec_file(path)
        assert spec.family.name == "poisson"
        assert spec.predictor.include_intercept
        assert spec.predictor.regional_terms is None
        assert spec.priors.coefficient_sd == 1000.0
        assert spec.priors.precision_rate == 0.0005

    def test_parse_values(self, tmp_path):
        path = tmp_path / "spec.txt"
        path.write_text(
            "family = beta\n"
            "regional_terms = companies, primary_sector\n"
            "temporal_terms = none\n"
            "effect_structure = unstructured\n"
            "dispersion_rate = 0.02\n"
        )
        spec = read_spec_file(path)
        assert spec.family.name == "beta"
        assert spec.predictor.regional_terms == ("companies", "primary_sector")
        assert spec.predictor.temporal_terms == ()
        assert spec.effect_structure == "unstructured"
        assert spec.priors.dispersion_rate == 0.02

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "spec.txt"
        path.write_text("familly = beta\n")
        with pytest.raises(SpecError):
            read_spec_file(path)

    def test_bad_enum(self):
        with pytest.raises(SpecError):
            PredictorSpec(offset_rule="log_active")
