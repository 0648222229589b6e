"""Forward simulation of respondents, indicators and choices; parameter recovery."""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from config import settings
from design import DesignSpec, assign_tasks, generate_bank
from estimator import FitOptions, FitResult, maximize_cml, neutral_start
from exceptions import InvalidInputError
from models import DEMOGRAPHIC_VOCABULARY, INDICATOR_LEVELS, INDICATORS, Dataset, Demographics, Respondent, chosen_from
from modelspec import (
    ModelSpec,
    ParameterVector,
    systematic_utility,
    validate_params,
)

logger = logging.getLogger(__name__)


def _default_frequencies() -> Dict[str, Dict[str, float]]:
    return {
        "location": {"delhi_and_others": 0.484, "mumbai": 0.180, "bangalore": 0.141,
                     "chennai": 0.123, "calcutta": 0.072},
        "gender": {"male": 0.764, "female": 0.236},
        "marital": {"single_and_others": 0.449, "couple": 0.240, "couple_with_kid": 0.311},
        "income_band": {"ge_20": 0.183, "lt_5": 0.208, "5_10": 0.251, "10_15": 0.179, "15_20": 0.179},
        "education": {"masters_plus": 0.467, "below_bachelor": 0.117, "bachelor": 0.416},
        "employment": {"private": 0.734, "government": 0.078, "self_employed": 0.086, "unemployed": 0.102},
    }


class SimConfig(BaseModel):
    """Sample size, sampling distributions, design and true model for one simulation."""

    n_respondents: int = Field(..., ge=1, description="Respondents to simulate")
    seed: int = Field(..., ge=0, description="Master seed; respondents get derived substreams")
    spec: ModelSpec = Field(..., description="Generating model")
    params: ParameterVector = Field(..., description="True parameters")
    frequencies: Dict[str, Dict[str, float]] = Field(
        default_factory=_default_frequencies, description="Marginal demographic frequencies per field"
    )
    weekly_km_median: float = Field(230.0, gt=0, description="Median weekly kilometres (lognormal)")
    weekly_km_sigma: float = Field(0.5, gt=0, description="Log-scale spread of weekly kilometres")
    price_low: float = Field(5.0, gt=0, description="Lower bound of reported ICEV price, lacs")
    price_high: float = Field(20.0, gt=0, description="Upper bound of reported ICEV price, lacs")
    design: DesignSpec = Field(default_factory=DesignSpec, description="Experimental design")
    pairing: str = Field(default_factory=lambda: settings.PAIRING, description="Pairing policy for recovery fits")

    @field_validator("frequencies")
    @classmethod
    def check_frequencies(cls, value: Dict[str, Dict[str, float]]) -> Dict[str, Dict[str, float]]:
        for field_name, levels in DEMOGRAPHIC_VOCABULARY.items():
            probs = value.get(field_name)
            if probs is None:
                raise InvalidInputError(f"missing demographic frequencies for {field_name}")
            unknown = set(probs) - set(levels)
            if unknown:
                raise InvalidInputError(f"unknown {field_name} levels: {', '.join(sorted(unknown))}")
            if any(p < 0 for p in probs.values()) or not math.isclose(sum(probs.values()), 1.0, abs_tol=1e-9):
                raise InvalidInputError(f"{field_name} frequencies must be non-negative and sum to 1")
        return value

    @model_validator(mode="after")
    def check_ranges(self) -> "SimConfig":
        if not self.price_high > self.price_low:
            raise InvalidInputError("price_high must exceed price_low")
        if self.params.model != self.spec.name:
            raise InvalidInputError(f"params belong to {self.params.model}, not {self.spec.name}")
        return self


def sample_reported_prices(rng: np.random.Generator, n: int, low: float = 5.0, high: float = 20.0) -> np.ndarray:
    """Reported ICEV prices, uniform over [low, high) lacs and rounded to 0.01."""
    return np.round(rng.uniform(low, high, size=n), 2)


def _draw_demographics(rng: np.random.Generator, frequencies: Dict[str, Dict[str, float]]) -> Demographics:
    record = {}
    for field_name, levels in DEMOGRAPHIC_VOCABULARY.items():
        probs = np.array([frequencies[field_name].get(level, 0.0) for level in levels])
        record[field_name] = levels[int(rng.choice(len(levels), p=probs / probs.sum()))]
    return Demographics(**record)


def _draw_indicators(
    rng: np.random.Generator,
    spec: ModelSpec,
    params: ParameterVector,
    latents: np.ndarray,
) -> Tuple[int, ...]:
    intercepts, loadings, thresholds = spec.measurement_arrays(params.values)
    modeled = {item.indicator: i for i, item in enumerate(spec.indicators)}
    noise = rng.standard_normal(len(INDICATORS))
    # Indicators outside the measurement model are uniform on 1..5.
    uniform = rng.integers(1, len(INDICATOR_LEVELS) + 1, size=len(INDICATORS))
    out = []
    for k, name in enumerate(INDICATORS):
        i = modeled.get(name)
        if i is None:
            out.append(int(uniform[k]))
            continue
        propensity = intercepts[i] + loadings[i] @ latents + noise[k]
        out.append(1 + int(np.sum(propensity > thresholds[i])))
    return tuple(out)


def simulate_with_latents(cfg: SimConfig) -> Tuple[Dataset, np.ndarray]:
    """Simulate a dataset and return it with the drawn latent values (N x R)."""
    spec, params = cfg.spec, cfg.params
    validate_params(spec, params)
    layout = spec.layout()
    corr = layout.correlation_matrix(params.values)
    chol = np.linalg.cholesky(corr)
    pi = spec.pi_matrix(params.values)
    bank = generate_bank(cfg.design, cfg.seed)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_respondents)
    mu_log_km = math.log(cfg.weekly_km_median)

    respondents: List[Respondent] = []
    latent_draws = np.zeros((cfg.n_respondents, len(spec.latents)))
    ev_count = 0
    for n, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        demographics = _draw_demographics(rng, cfg.frequencies)
        weekly_km = float(round(math.exp(mu_log_km + cfg.weekly_km_sigma * rng.standard_normal()), 1))
        price = float(sample_reported_prices(rng, 1, cfg.price_low, cfg.price_high)[0])

        latents = spec.covariate_vector(demographics) @ pi + chol @ rng.standard_normal(len(spec.latents))
        latent_draws[n] = latents
        indicators = _draw_indicators(rng, spec, params, latents)
        respondent = Respondent(
            respondent_id=f"R{n + 1:05d}",
            demographics=demographics,
            reported_icev_price=price,
            weekly_km=weekly_km,
            indicators=indicators,
        )

        tasks = assign_tasks(bank, price, int(rng.integers(2**63 - 1)), cfg.design.tasks_per_respondent)
        chosen_tasks = []
        for task in tasks:
            v_ev, v_icev = systematic_utility(spec, params, task, respondent, latents)
            ev = (v_ev - v_icev + rng.standard_normal()) > 0
            ev_count += ev
            chosen_tasks.append(task.model_copy(update={"chosen": chosen_from(ev)}))
        respondents.append(respondent.model_copy(update={"tasks": tuple(chosen_tasks)}))

    dataset = Dataset(respondents=tuple(respondents))
    logger.info(
        f"Simulated {len(dataset)} respondents from {spec.name} (seed {cfg.seed}); "
        f"EV share {ev_count / max(dataset.n_tasks, 1):.3f}"
    )
    return dataset, latent_draws


def simulate_dataset(cfg: SimConfig) -> Dataset:
    """Simulate a complete dataset; identical configs give identical datasets."""
    return simulate_with_latents(cfg)[0]


# Recovery


class RecoveryRow(BaseModel):
    name: str
    label: str
    truth: float
    estimate: float
    std_error: Optional[float] = None
    bias: float
    z: Optional[float] = None


class RecoveryReport(BaseModel):
    """Per-parameter recovery of a simulate-then-estimate run."""

    model: str
    n_respondents: int
    seed: int
    converged: bool
    objective: float
    rows: List[RecoveryRow]
    share_within_3se: float = Field(..., description="Share of estimated parameters with |z| <= 3")
    curvatures_in_unit_interval: Optional[bool] = Field(
        None, description="All free curvatures strictly inside (0, 1); None without free curvatures"
    )


def recovery_report(spec: ModelSpec, truth: ParameterVector, fit: FitResult, seed: int) -> RecoveryReport:
    layout = spec.layout()
    rows = []
    for name in layout.names:
        if name in layout.fixed or name in layout.tie_root:
            continue
        estimate = fit.params[name]
        rows.append(RecoveryRow(
            name=name,
            label=layout.label(name),
            truth=truth.values[name],
            estimate=estimate,
            std_error=fit.std_errors.get(name),
            bias=estimate - truth.values[name],
            z=fit.z_score(name, truth.values[name]),
        ))
    scored = [row for row in rows if row.z is not None]
    share = sum(abs(row.z) <= 3.0 for row in scored) / len(scored) if scored else 0.0
    curvatures = [row.estimate for row in rows if layout.kind(row.name) == "curvature"]
    return RecoveryReport(
        model=spec.name,
        n_respondents=fit.n_respondents,
        seed=seed,
        converged=fit.converged,
        objective=fit.objective,
        rows=rows,
        share_within_3se=share,
        curvatures_in_unit_interval=all(0.0 < a < 1.0 for a in curvatures) if curvatures else None,
    )


def recovery_experiment(
    cfg: SimConfig,
    start: Optional[ParameterVector] = None,
    options: Optional[FitOptions] = None,
) -> RecoveryReport:
    """Simulate from the true parameters, estimate, and compare."""
    dataset = simulate_dataset(cfg)
    options = options or FitOptions(pairing=cfg.pairing)
    fit = maximize_cml(cfg.spec, dataset, start or neutral_start(cfg.spec, dataset), options)
    report = recovery_report(cfg.spec, cfg.params, fit, cfg.seed)
    if not report.converged:
        logger.warning(f"Recovery fit of {cfg.spec.name} did not converge; report is flagged")
    logger.info(f"Recovery of {cfg.spec.name}: {report.share_within_3se:.1%} of parameters within 3 SE")
    return report


def bias_trend(small: RecoveryReport, large: RecoveryReport) -> float:
    """Share of parameters whose absolute bias did not grow with the larger sample."""
    small_bias = {row.name: abs(row.bias) for row in small.rows}
    shared = [row for row in large.rows if row.name in small_bias]
    if not shared:
        return 0.0
    return sum(abs(row.bias) <= small_bias[row.name] for row in shared) / len(shared)
