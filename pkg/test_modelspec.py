"""Test cases for model specifications, parameter transforms and utilities."""

import math

import numpy as np
import pytest

from exceptions import ModelSpecError, ParameterError
from models import Alternative
from modelspec import (
    ModelSpec,
    complete_params,
    latent_loading_vector,
    load_params,
    pack,
    preset_spec,
    published_params,
    ref_power,
    save_params,
    systematic_utility,
    unpack,
    validate_params,
)


class TestPresets:
    """Test cases for the shipped Model 1/2/3 documents."""

    def setup_method(self):
        """Load the three presets."""
        self.specs = {k: preset_spec(k) for k in (1, 2, 3)}

    def test_nesting_by_constraints(self):
        """Model 1 fixes the curvatures, Model 2 fixes the interactions."""
        fixed1 = self.specs[1].layout().fixed
        fixed2 = self.specs[2].layout().fixed
        fixed3 = self.specs[3].layout().fixed
        assert {fixed1[name] for name in ("alpha_price", "alpha_range", "alpha_fuel")} == {1.0}
        assert fixed2["phi_early_adopter_price"] == 0.0
        assert "alpha_price" not in fixed2
        assert not any(name.startswith("phi_") for name in fixed3)
        sizes = [self.specs[k].layout().size for k in (1, 2, 3)]
        assert sizes[0] + 3 == sizes[1]
        assert sizes[1] + 8 == sizes[2]

    def test_parameter_names_are_shared(self):
        """The three models name the same parameters."""
        assert self.specs[1].layout().names == self.specs[3].layout().names

    def test_published_params_are_valid(self):
        """Published estimates load and satisfy every invariant."""
        for k in (1, 2, 3):
            params = published_params(k, self.specs[k])
            validate_params(self.specs[k], params)
            assert params.model == f"model{k}"

    def test_ties_are_applied(self):
        """Tied structural slopes share one value."""
        params = published_params(3, self.specs[3])
        values = [params[f"pi.climate_doubter.income_band.{band}"] for band in ("lt_5", "5_10", "10_15", "15_20")]
        assert len(set(values)) == 1
        assert "pi.climate_doubter.income_band.5_10" in self.specs[3].layout().tie_root

    def test_chained_ties(self, tiny_spec_dict):
        """A tie naming an already tied parameter joins one group."""
        tiny_spec_dict["constraints"] = [
            {"kind": "tie", "params": ["ind07.loading.early_adopter", "ind08.loading.early_adopter"]},
            {"kind": "tie", "params": ["ind09.loading.early_adopter", "ind07.loading.early_adopter"]},
        ]
        spec = ModelSpec.model_validate(tiny_spec_dict)
        layout = spec.layout()
        assert layout.tie_root == {
            "ind08.loading.early_adopter": "ind07.loading.early_adopter",
            "ind09.loading.early_adopter": "ind07.loading.early_adopter",
        }
        params = unpack(spec, np.full(layout.size, 0.25))
        loadings = {params[f"ind0{k}.loading.early_adopter"] for k in (7, 8, 9)}
        assert loadings == {0.25}

    def test_tie_with_fixed_member(self, tiny_spec_dict):
        """Tying to a fixed parameter fixes the whole group."""
        tiny_spec_dict["constraints"] = [
            {"kind": "fix", "params": ["ind08.loading.early_adopter"], "value": -0.7},
            {"kind": "tie", "params": ["ind07.loading.early_adopter", "ind08.loading.early_adopter"]},
        ]
        spec = ModelSpec.model_validate(tiny_spec_dict)
        layout = spec.layout()
        assert layout.fixed["ind07.loading.early_adopter"] == -0.7
        assert not layout.tie_root
        params = unpack(spec, np.zeros(layout.size))
        assert params["ind07.loading.early_adopter"] == -0.7

    def test_tie_with_conflicting_fixes(self, tiny_spec_dict):
        """A tie group cannot carry two fixed values."""
        tiny_spec_dict["constraints"] = [
            {"kind": "fix", "params": ["ind07.loading.early_adopter"], "value": -0.7},
            {"kind": "fix", "params": ["ind08.loading.early_adopter"], "value": -0.5},
            {"kind": "tie", "params": ["ind07.loading.early_adopter", "ind08.loading.early_adopter"]},
        ]
        with pytest.raises(ModelSpecError):
            ModelSpec.model_validate(tiny_spec_dict)

    def test_labels(self):
        """Every parameter has a report label."""
        layout = self.specs[3].layout()
        assert all(layout.label(name) for name in layout.names)
        assert layout.label("ind10.loading.early_adopter") == "Ind10: Early adopters"

    def test_pack_unpack(self):
        """Unpacking the packed published Model 3 returns the same values."""
        spec = self.specs[3]
        params = published_params(3, spec)
        vector = pack(spec, params)
        assert vector.shape == (spec.layout().size,)
        recovered = unpack(spec, vector)
        for name, value in params.values.items():
            assert recovered[name] == pytest.approx(value, abs=1e-10)

    def test_unpack_always_valid(self):
        """Any finite unconstrained vector maps to valid parameters."""
        spec = self.specs[3]
        rng = np.random.default_rng(5)
        for _ in range(10):
            validate_params(spec, unpack(spec, rng.normal(scale=2.0, size=spec.layout().size)))

    def test_unpack_wrong_length(self):
        """A vector of the wrong size is rejected."""
        with pytest.raises(ParameterError):
            unpack(self.specs[1], np.zeros(3))


class TestSpecValidation:
    """Test cases for spec consistency checks."""

    def test_unknown_latent(self, tiny_spec_dict):
        """Terms must reference declared latents."""
        tiny_spec_dict["utility_terms"].append(
            {"kind": "latent_main", "alternative": "ev", "param": "delta_x", "latent": "x"}
        )
        with pytest.raises(ModelSpecError):
            ModelSpec.model_validate(tiny_spec_dict)

    def test_icev_slow_charge(self, tiny_spec_dict):
        """The ICEV has no slow charging time."""
        tiny_spec_dict["utility_terms"].append(
            {"kind": "linear", "alternative": "icev", "param": "beta_slow",
             "expr": {"attribute": "slow_charge", "side": "icev"}}
        )
        with pytest.raises(ModelSpecError):
            ModelSpec.model_validate(tiny_spec_dict)

    def test_base_covariate_level(self, tiny_spec_dict):
        """Base demographic levels have no structural dummy."""
        tiny_spec_dict["covariates"] = [{"field": "gender", "level": "male", "latents": ["early_adopter"]}]
        with pytest.raises(ModelSpecError):
            ModelSpec.model_validate(tiny_spec_dict)

    def test_partial_threshold_fix(self, tiny_spec_dict):
        """Threshold blocks are fixed whole or not at all."""
        tiny_spec_dict["constraints"] = [{"kind": "fix", "params": ["ind07.threshold_2"], "value": 1.0}]
        with pytest.raises(ModelSpecError):
            ModelSpec.model_validate(tiny_spec_dict)

    def test_fixed_loading(self, tiny_spec_dict, tiny_spec):
        """A fixed scalar parameter drops out of the free coordinates."""
        tiny_spec_dict["constraints"] = [{"kind": "fix", "params": ["ind07.loading.early_adopter"], "value": -0.7}]
        spec = ModelSpec.model_validate(tiny_spec_dict)
        assert "ind07.loading.early_adopter" not in spec.layout().free_names
        assert spec.layout().size == tiny_spec.layout().size - 1

    def test_unknown_constraint_target(self, tiny_spec_dict):
        """Constraints must name existing parameters."""
        tiny_spec_dict["constraints"] = [{"kind": "fix", "params": ["beta_nothing"], "value": 0.0}]
        with pytest.raises(ModelSpecError):
            ModelSpec.model_validate(tiny_spec_dict)


class TestParameters:
    """Test cases for parameter completion and validation."""

    def test_missing_parameter(self, tiny_spec, tiny_values):
        """Every free parameter needs a value."""
        del tiny_values["asc_ev"]
        with pytest.raises(ParameterError):
            complete_params(tiny_spec, tiny_values)

    def test_unknown_parameter(self, tiny_spec, tiny_values):
        """Unknown names are rejected."""
        tiny_values["beta_colour"] = 1.0
        with pytest.raises(ParameterError):
            complete_params(tiny_spec, tiny_values)

    def test_fixed_mismatch(self):
        """A value contradicting a fix is rejected."""
        spec = preset_spec(1)
        values = dict(published_params(1, spec).values)
        values["alpha_price"] = 0.5
        with pytest.raises(ParameterError):
            complete_params(spec, values)

    def test_thresholds_must_increase(self, tiny_spec, tiny_params):
        """Thresholds increase from the pinned zero."""
        with pytest.raises(ParameterError):
            validate_params(tiny_spec, tiny_params.replace(**{"ind07.threshold_3": 0.5}))
        with pytest.raises(ParameterError):
            validate_params(tiny_spec, tiny_params.replace(**{"ind07.threshold_2": -0.1}))

    def test_curvature_must_be_positive(self):
        """Curvatures are strictly positive."""
        spec = preset_spec(2)
        with pytest.raises(ParameterError):
            validate_params(spec, published_params(2, spec).replace(alpha_price=0.0))

    def test_save_and_load(self, tmp_path, tiny_spec, tiny_params):
        """Parameter files carry the model name and values."""
        path = tmp_path / "params.json"
        save_params(tiny_params, path)
        assert load_params(tiny_spec, path) == tiny_params


class TestUtility:
    """Test cases for utility evaluation."""

    def test_ref_power(self):
        """The power keeps the sign of the deviation."""
        assert ref_power(-8.0, 1.0 / 3.0) == pytest.approx(-2.0)
        assert ref_power(8.0, 1.0 / 3.0) == pytest.approx(2.0)
        assert ref_power(0.0, 0.5) == 0.0
        assert ref_power(-3.0, 1) == -3.0

    def test_tiny_utilities(self, tiny_spec, tiny_params, make_respondent):
        """V_EV = asc + beta (EV - ICEV price) + delta x; V_ICEV = 0."""
        respondent = make_respondent()
        task = respondent.tasks[0]
        v_ev, v_icev = systematic_utility(tiny_spec, tiny_params, task, respondent, [0.5])
        expected = 1.2 - 0.3 * (task.ev.price - task.icev.price) + 0.8 * 0.5
        assert v_ev == pytest.approx(expected)
        assert v_icev == 0.0
        assert latent_loading_vector(tiny_spec, tiny_params, task, respondent).tolist() == [0.8]

    def test_latent_values_shape(self, tiny_spec, tiny_params, make_respondent):
        """Latent values need one finite entry per latent."""
        respondent = make_respondent()
        with pytest.raises(ParameterError):
            systematic_utility(tiny_spec, tiny_params, respondent.tasks[0], respondent, [0.1, 0.2])
        with pytest.raises(ParameterError):
            systematic_utility(tiny_spec, tiny_params, respondent.tasks[0], respondent, [math.nan])

    def test_unit_curvature_matches_linear_model(self, make_respondent):
        """Model 2 at unit curvatures and Model 1 give identical utilities."""
        spec1, spec2 = preset_spec(1), preset_spec(2)
        params1 = published_params(1, spec1)
        params2 = complete_params(spec2, params1.values)
        respondent = make_respondent(indicators=(2, 3, 4, 5, 1, 2, 3, 4, 5, 1, 4), chosen=Alternative.ICEV)
        latents = [0.3, -0.2, 0.7]
        for task in respondent.tasks:
            assert systematic_utility(spec2, params2, task, respondent, latents) == pytest.approx(
                systematic_utility(spec1, params1, task, respondent, latents), abs=1e-12
            )

    def test_dummy_terms(self, make_respondent):
        """Indicator dummies add their coefficient only at their level."""
        spec = preset_spec(2)
        params = published_params(2, spec)
        at_base = make_respondent(indicators=(3,) * 11)
        at_top = make_respondent(indicators=(3,) * 9 + (5, 3))
        task = at_base.tasks[0]
        base_ev, _ = systematic_utility(spec, params, task, at_base, [0.0, 0.0, 0.0])
        top_ev, _ = systematic_utility(spec, params, at_top.tasks[0], at_top, [0.0, 0.0, 0.0])
        assert top_ev - base_ev == pytest.approx(params["theta_ind10_5"])
