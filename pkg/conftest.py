"""Shared fixtures: a one-latent model, its parameters and simulated data."""

import copy

import pytest

from design import DesignSpec, assign_tasks, generate_bank
from models import Alternative, Demographics, Respondent
from modelspec import ModelSpec, ParameterVector, complete_params
from simulate import SimConfig, simulate_dataset

TINY_SPEC = {
    "name": "tiny",
    "description": "One latent with three dedicated indicators",
    "latents": ["early_adopter"],
    "utility_terms": [
        {"kind": "constant", "alternative": "ev", "param": "asc_ev"},
        {"kind": "linear", "alternative": "ev", "param": "beta_price",
         "expr": {"attribute": "price_lacs", "side": "ev_minus_icev"}},
        {"kind": "latent_main", "alternative": "ev", "param": "delta_early_adopter", "latent": "early_adopter"},
    ],
    "indicators": [
        {"indicator": "ind07", "latents": ["early_adopter"]},
        {"indicator": "ind08", "latents": ["early_adopter"]},
        {"indicator": "ind09", "latents": ["early_adopter"]},
    ],
    "covariates": [
        {"field": "gender", "level": "female", "latents": ["early_adopter"]},
    ],
}

TINY_VALUES = {
    "asc_ev": 1.2,
    "beta_price": -0.3,
    "delta_early_adopter": 0.8,
    "pi.early_adopter.gender.female": 0.3,
    "ind07.intercept": 2.74,
    "ind07.loading.early_adopter": -0.69,
    "ind07.threshold_2": 0.84,
    "ind07.threshold_3": 1.67,
    "ind07.threshold_4": 3.23,
    "ind08.intercept": 3.00,
    "ind08.loading.early_adopter": -0.75,
    "ind08.threshold_2": 1.28,
    "ind08.threshold_3": 2.02,
    "ind08.threshold_4": 3.67,
    "ind09.intercept": 1.99,
    "ind09.loading.early_adopter": -0.44,
    "ind09.threshold_2": 1.19,
    "ind09.threshold_3": 2.12,
    "ind09.threshold_4": 3.31,
}


@pytest.fixture
def tiny_spec_dict() -> dict:
    """A fresh copy of the one-latent spec document for building variants."""
    return copy.deepcopy(TINY_SPEC)


@pytest.fixture
def tiny_values() -> dict:
    return dict(TINY_VALUES)


@pytest.fixture(scope="session")
def tiny_spec() -> ModelSpec:
    return ModelSpec.model_validate(TINY_SPEC)


@pytest.fixture(scope="session")
def tiny_params(tiny_spec) -> ParameterVector:
    return complete_params(tiny_spec, TINY_VALUES)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec, tiny_params):
    return simulate_dataset(SimConfig(n_respondents=200, seed=11, spec=tiny_spec, params=tiny_params))


@pytest.fixture
def make_respondent():
    """Factory for a respondent with n_tasks designed tasks, all answered with the given choice."""
    bank = generate_bank(DesignSpec(), seed=1)

    def build(respondent_id="R1", n_tasks=3, price=10.0, chosen=Alternative.EV, indicators=(3,) * 11,
              demographics=None):
        tasks = [
            task.model_copy(update={"chosen": chosen})
            for task in assign_tasks(bank, price, seed=5, tasks_per_respondent=n_tasks)
        ]
        return Respondent(
            respondent_id=respondent_id,
            demographics=demographics or Demographics.base(),
            reported_icev_price=price,
            weekly_km=250.0,
            indicators=tuple(indicators),
            tasks=tuple(tasks),
        )

    return build
